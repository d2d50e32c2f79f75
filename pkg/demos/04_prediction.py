"""Kriging with sparse covariance matrices and proper scoring rules.

A Matérn field is predicted by leave-one-out kriging with the Matérn model
itself and with phi kernels of several shapes sharing its scale.  The
phi covariance matrices are mostly zeros, so the sparse path is used,
and the scores stay close to the Matérn ones.

Run with ``python3 demos/04_prediction.py``.
"""

from gwmatern import (
    CorrelationModel,
    MaternParams,
    PhiParams,
    assemble,
    loo_cv,
    simulate_grf,
    sparsity_stats,
)
from gwmatern.montecarlo import make_generator, uniform_points

ps = uniform_points(1500, make_generator(4))
beta = 0.02
truth = CorrelationModel(MaternParams(0.5, beta), nugget=0.05)
z = simulate_grf(ps, truth, seed=5)

print(f"{'model':>10}{'zeros':>9}{'RMSE':>9}{'LSCORE':>9}{'CRPS':>9}")
s = loo_cv(ps, z, truth)
print(f"{'matern':>10}{0.0:9.3f}{s.rmse:9.4f}{s.logscore:9.4f}{s.crps:9.4f}")
for mu in (1.5, 2, 3, 4.5):
    model = CorrelationModel(PhiParams(0, mu, beta), nugget=0.05)
    pz = sparsity_stats(assemble(ps, model, storage="sparse"))["percent_zero"]
    s = loo_cv(ps, z, model, storage="sparse")
    print(f"{'mu=' + str(mu):>10}{pz:9.3f}{s.rmse:9.4f}{s.logscore:9.4f}{s.crps:9.4f}")
