"""Simple kriging, proper scoring rules and cross-validation.

The nugget is treated as measurement noise: cross-covariances between a
target and the training data use ``(1 - tau^2) sigma^2 rho(r)`` and the
prediction variance ``sigma^2 - c^T Sigma^{-1} c`` refers to a new noisy
measurement at the target.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .covmat import PointSet, assemble, cholesky, cross_covariance
from .errors import DomainError
from .kernels import CorrelationModel
from .montecarlo import make_generator

__all__ = [
    "KrigingResult",
    "PredictionScores",
    "krige",
    "crps_gaussian",
    "logscore_gaussian",
    "score_holdout",
    "loo_predictions",
    "loo_cv",
    "resample_scores",
]

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_TARGET_CHUNK = 1024


@dataclass
class KrigingResult:
    """Predictions, prediction standard deviations and optional z-scores."""

    prediction: np.ndarray
    sd: np.ndarray
    zscore: np.ndarray | None = None

    def __len__(self):
        return len(self.prediction)


@dataclass(frozen=True)
class PredictionScores:
    """Mean RMSE, log score (nats) and CRPS over a set of predictions."""

    rmse: float
    logscore: float
    crps: float
    n: int = 0

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "logscore": self.logscore, "crps": self.crps, "n": self.n}


def krige(train_ps: PointSet, train_z, model: CorrelationModel, target_ps: PointSet,
          truth=None, storage: str = "auto", factor=None) -> KrigingResult:
    """Zero-mean kriging predictor ``c^T Sigma^-1 z`` and its standard deviation.

    Parameters
    ----------
    train_ps, train_z : PointSet, array_like
        Training locations and observations.
    model : CorrelationModel
    target_ps : PointSet
        Prediction locations.
    truth : array_like, optional
        Observed values at the targets; fills ``zscore``.
    factor : CholeskyFactor, optional
        Precomputed factor of the training covariance.
    """
    z = np.asarray(train_z, dtype=float).ravel()
    if z.shape[0] != train_ps.n:
        raise DomainError(f"{z.shape[0]} observations for {train_ps.n} locations")
    if target_ps.dim != train_ps.dim:
        raise DomainError("training and target locations differ in dimension")
    if factor is None:
        factor = cholesky(assemble(train_ps, model, storage=storage))
    alpha = factor.solve(z)
    m = target_ps.n
    pred = np.empty(m)
    var = np.empty(m)
    for k0 in range(0, m, _TARGET_CHUNK):
        k1 = min(k0 + _TARGET_CHUNK, m)
        c = cross_covariance(train_ps, target_ps.subset(np.arange(k0, k1)), model)
        pred[k0:k1] = c.T @ alpha
        w = factor.whiten(c)
        var[k0:k1] = model.variance - np.einsum("ij,ij->j", w, w)
    sd = np.sqrt(np.clip(var, 0.0, model.variance))
    zs = None
    if truth is not None:
        t = np.asarray(truth, dtype=float).ravel()
        if t.shape[0] != m:
            raise DomainError("truth length does not match the targets")
        with np.errstate(divide="ignore", invalid="ignore"):
            zs = (t - pred) / sd
    return KrigingResult(pred, sd, zs)


def crps_gaussian(mean, sd, y):
    """CRPS of a normal predictive distribution at observation ``y``.

    ``sd [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)]`` with ``z = (y - mean)/sd``.
    """
    mean, sd, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, y)))
    z = (y - mean) / sd
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return sd * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * pdf - _INV_SQRT_PI)


def logscore_gaussian(mean, sd, y):
    """Negative log predictive density ``1/2 log(2 pi sd^2) + z^2 / 2``."""
    mean, sd, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, y)))
    z = (y - mean) / sd
    return 0.5 * np.log(2.0 * math.pi * sd * sd) + 0.5 * z * z


def _scores(pred, sd, truth) -> PredictionScores:
    pred, sd, truth = (np.asarray(a, dtype=float).ravel() for a in (pred, sd, truth))
    if not (pred.shape == sd.shape == truth.shape):
        raise DomainError("prediction, sd and truth lengths differ")
    if np.any(sd <= 0):
        raise DomainError("zero prediction standard deviation: log score undefined")
    err = truth - pred
    return PredictionScores(
        rmse=float(math.sqrt(np.mean(err * err))),
        logscore=float(np.mean(logscore_gaussian(pred, sd, truth))),
        crps=float(np.mean(crps_gaussian(pred, sd, truth))),
        n=int(pred.size),
    )


def score_holdout(result: KrigingResult, truth) -> PredictionScores:
    """RMSE, mean log score and mean CRPS of kriging predictions."""
    return _scores(result.prediction, result.sd, truth)


def loo_predictions(ps: PointSet, z, model: CorrelationModel, storage: str = "auto") -> KrigingResult:
    """Leave-one-out predictions from a single factorization.

    With ``a = Sigma^-1 z`` and ``d = diag(Sigma^-1)`` the prediction at
    site ``i`` from all other sites is ``z_i - a_i / d_i`` with variance
    ``1 / d_i``.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != ps.n:
        raise DomainError(f"{z.shape[0]} observations for {ps.n} locations")
    f = cholesky(assemble(ps, model, storage=storage))
    a = f.solve(z)
    d = f.inv_diag()
    sd = 1.0 / np.sqrt(d)
    pred = z - a / d
    return KrigingResult(pred, sd, (z - pred) / sd)


def loo_cv(ps: PointSet, z, model: CorrelationModel, storage: str = "auto") -> PredictionScores:
    """Leave-one-out RMSE, log score and CRPS."""
    res = loo_predictions(ps, z, model, storage)
    return _scores(res.prediction, res.sd, z)


def _split_repeat(args):
    ps, z, model, n_hold, seq, storage = args
    rng = make_generator(seq)
    perm = rng.permutation(ps.n)
    test, train = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    res = krige(ps.subset(train), z[train], model, ps.subset(test), storage=storage)
    return _scores(res.prediction, res.sd, z[test])


def resample_scores(ps: PointSet, z, model: CorrelationModel, holdout_fraction: float = 0.2,
                    repeats: int = 1, seed=0, n_holdout: int | None = None,
                    storage: str = "auto", workers: int = 1) -> PredictionScores:
    """Average scores over random train/test splits.

    Each repeat holds out ``n_holdout`` sites (default
    ``round(holdout_fraction * n)``), predicts them from the rest and
    scores the predictions; the per-repeat scores are then averaged.
    """
    if repeats < 1:
        raise DomainError("repeats must be at least 1")
    z = np.asarray(z, dtype=float).ravel()
    n = ps.n
    if n_holdout is None:
        if not 0.0 < holdout_fraction < 1.0:
            raise DomainError("holdout_fraction must lie in (0, 1)")
        n_holdout = int(round(holdout_fraction * n))
    n_holdout = int(n_holdout)
    if not 1 <= n_holdout <= n - 1:
        raise DomainError(f"need between 1 and {n - 1} held-out sites, got {n_holdout}")
    seqs = np.random.SeedSequence(seed).spawn(repeats)
    jobs = [(ps, z, model, n_holdout, s, storage) for s in seqs]
    if workers > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per = list(ex.map(_split_repeat, jobs))
    else:
        per = [_split_repeat(j) for j in jobs]
    return PredictionScores(
        rmse=float(np.mean([s.rmse for s in per])),
        logscore=float(np.mean([s.logscore for s in per])),
        crps=float(np.mean([s.crps for s in per])),
        n=n_holdout,
    )
