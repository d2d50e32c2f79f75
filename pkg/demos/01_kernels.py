"""Compactly supported kernels that approach the Matérn family.

The phi parametrization fixes the Matérn scale ``beta`` and lets the shape
``mu`` control how far the compact support reaches.  As ``mu`` grows the
support widens and the kernel converges to the Matérn kernel with
smoothness ``nu + 1/2``.

Run with ``python3 demos/01_kernels.py``.
"""

import numpy as np

from gwmatern import (
    CorrelationModel,
    MaternParams,
    PhiParams,
    convergence_table,
    delta_support,
    matern,
    phi,
    practical_range,
)

# Supports for nu = 2 and a fixed scale grow with mu.
beta = 0.0338
for mu in (5, 10, 25):
    print(f"nu = 2, mu = {mu:>2}: support = {delta_support(2, mu, beta):.4f}")

# Side by side against the Matérn limit at a few distances.
r = np.array([0.0, 0.05, 0.1, 0.2, 0.3])
target = matern(r, MaternParams(2.5, beta))
print("\n       r" + "".join(f"{x:>10.2f}" for x in r))
print("  matern" + "".join(f"{x:>10.5f}" for x in target))
for mu in (5, 25, 200):
    vals = phi(r, PhiParams(2, mu, beta))
    print(f"  mu={mu:<4}" + "".join(f"{x:>10.5f}" for x in vals))

# Practical range (first r with correlation 0.05) grows toward the Matérn value.
for mu in (5, 25, 200):
    model = CorrelationModel(PhiParams(2, mu, beta))
    print(f"practical range mu = {mu:>3}: {practical_range(model):.4f}")

# Sup-norm gap to the Matérn kernel; doubling mu roughly halves it.
print("\nmax |phi - matern| (beta = 1)")
print(convergence_table([0.0, 1.0, 2.0], [None, 5, 10, 20, 40, 80]).to_text())
