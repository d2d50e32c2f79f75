"""Spectral densities of the phi kernels.

The isotropic spectral density of a generalized Wendland kernel is a
``1F2`` hypergeometric function.  Integrated against the radial measure
it recovers the correlation at the origin, and for large ``mu`` it
approaches the Matérn density.

Run with ``python3 demos/02_spectral.py``.
"""

import numpy as np

from gwmatern import (
    MaternParams,
    PhiParams,
    gw_spectral,
    lemma1_check,
    matern_spectral,
    min_shape,
)
from gwmatern.spectral import spectral_convergence

for dim in (1, 2, 3):
    for nu in (0, 1, 2):
        mu = min_shape(dim, nu) + 2
        res = lemma1_check(PhiParams(nu, mu, 1.0, dim), dim)
        print(f"d = {dim}, nu = {nu}, mu = {mu:4.1f}: mass residual {res:.1e}")

z = np.array([0.1, 1.0, 3.0, 10.0])
print("\n      z" + "".join(f"{x:>12.1f}" for x in z))
print(" matern" + "".join(f"{x:>12.3e}" for x in matern_spectral(z, MaternParams(1.5, 1.0))))
for mu in (5, 40):
    print(f" mu={mu:<3}" + "".join(f"{x:>12.3e}" for x in gw_spectral(z, PhiParams(1, mu, 1.0))))

print("\nsup-norm spectral gap, nu = 1:", np.round(spectral_convergence(1, [5, 10, 20, 40, 80]), 6))
