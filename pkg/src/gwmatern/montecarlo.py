"""Gaussian random-field simulation and a replicated estimation study.

Random numbers come from the counter-based Philox generator keyed by a
:class:`numpy.random.SeedSequence`.  Each replicate of a study receives its
own spawned child sequence, so results do not depend on execution order or
on the number of worker processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covmat import PointSet, assemble, cholesky
from .errors import DomainError, FitError, GWMaternError
from .inference import (
    ParamVector,
    build_model,
    fisher_information,
    fit_ml,
    microergodic,
)
from .kernels import CorrelationModel, min_shape
from .specfun import log_gamma

__all__ = [
    "make_generator",
    "simulate_grf",
    "uniform_points",
    "beta_for_support",
    "SimConfig",
    "ReplicateRecord",
    "MCReport",
    "StudyFailure",
    "run_study",
    "five_number",
]

NORMAL_IQR = 1.3489795003921634
MAX_FAILURE_FRACTION = 0.1


def make_generator(seed) -> np.random.Generator:
    """Philox generator from an int, a ``SeedSequence`` or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def simulate_grf(ps: PointSet, model: CorrelationModel, seed, storage: str = "auto") -> np.ndarray:
    """One zero-mean Gaussian realization ``z = L eps`` at the locations of ``ps``.

    Raises
    ------
    NotPositiveDefiniteError
        If the covariance matrix cannot be factored.
    """
    eps = make_generator(seed).standard_normal(ps.n)
    f = cholesky(assemble(ps, model, storage=storage))
    return f.correlate(eps)


def uniform_points(n: int, rng, box=((0.0, 1.0), (0.0, 1.0))) -> PointSet:
    """``n`` locations drawn uniformly in an axis-aligned box."""
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi <= lo):
        raise DomainError("box must have positive extent in every coordinate")
    rng = make_generator(rng)
    return PointSet(lo + (hi - lo) * rng.random((n, box.shape[0])))


def beta_for_support(nu: float, mu: float, target_delta: float) -> float:
    """Scale ``beta`` at which the phi model has compact support ``target_delta``."""
    if not target_delta > 0:
        raise DomainError("target_delta must be positive")
    if not (nu >= 0 and mu > 0):
        raise DomainError("need nu >= 0 and mu > 0")
    logratio = log_gamma(mu) - log_gamma(mu + 2.0 * nu + 1.0)
    return float(target_delta * math.exp(logratio / (1.0 + 2.0 * nu)))


@dataclass(frozen=True)
class SimConfig:
    """Design of a replicated estimation study.

    Exactly one of ``delta`` (target compact support) and ``beta`` must be
    given.  ``perturb`` is the relative offset of the optimizer start from
    the true parameters; ``max_iter=0`` skips optimization entirely.
    """

    n: int = 500
    replicates: int = 200
    seed: int = 0
    delta: float | None = 0.6
    beta: float | None = None
    sigma2: float = 1.0
    box: tuple = ((0.0, 1.0), (0.0, 1.0))
    perturb: float = 0.1
    max_iter: int = 5000
    standardize: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("n must be at least 2")
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if (self.delta is None) == (self.beta is None):
            raise DomainError("give exactly one of delta and beta")
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")

    @property
    def dim(self) -> int:
        return len(self.box)

    def true_theta(self, nu: float, mu: float, free=("sigma2", "beta")) -> ParamVector:
        beta = self.beta if self.beta is not None else beta_for_support(nu, mu, self.delta)
        fixed = {"sigma2", "beta", "mu_star", "tau2"} - set(free)
        return ParamVector(self.sigma2, beta, 1.0 / mu, 0.0, fixed=frozenset(fixed))


@dataclass
class ReplicateRecord:
    """Result of one replicate."""

    index: int
    status: str
    estimates: dict = field(default_factory=dict)
    standardized: dict = field(default_factory=dict)
    microergodic_stat: float = math.nan
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def five_number(values) -> dict:
    """Minimum, quartiles, maximum and the count of 1.5-IQR outliers."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {k: math.nan for k in ("min", "q1", "median", "q3", "max", "iqr")} | {"outliers": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    out = int(np.sum((v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)))
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "iqr": float(iqr), "outliers": out}


@dataclass
class MCReport:
    """Collected replicate records of a study."""

    config: SimConfig
    nu: float
    mu: float
    free: tuple
    theta: ParamVector
    records: list

    def __len__(self):
        return sum(r.ok for r in self.records)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.ok]

    def standardized(self, name: str) -> np.ndarray:
        return np.array([r.standardized[name] for r in self.records if r.ok and name in r.standardized])

    def microergodic_stats(self) -> np.ndarray:
        """``sqrt(n/2) (c_hat / c - 1)`` per successful replicate."""
        return np.array([r.microergodic_stat for r in self.records if r.ok])

    def summaries(self) -> dict:
        out = {name: five_number(self.standardized(name)) for name in self.free}
        out["microergodic"] = five_number(self.microergodic_stats())
        return out

    def iqr_deviation(self, name: str) -> float:
        """Relative distance of a statistic's IQR from the standard normal IQR."""
        values = self.microergodic_stats() if name == "microergodic" else self.standardized(name)
        return abs(five_number(values)["iqr"] / NORMAL_IQR - 1.0)

    def to_csv(self, path, header_lines=()):
        """Rows of replicate, parameter, standardized value, microergodic statistic, status."""
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["replicate", "parameter", "estimate", "standardized", "microergodic", "status"])
            for r in self.records:
                names = self.free if r.ok else ("",)
                for name in names:
                    w.writerow([
                        r.index,
                        name,
                        _fmt(r.estimates.get(name, math.nan)),
                        _fmt(r.standardized.get(name, math.nan)),
                        _fmt(r.microergodic_stat),
                        r.status if r.ok else f"{r.status}: {r.message}",
                    ])


def _fmt(x):
    return f"{x:.17g}"


class StudyFailure(FitError):
    """Too many replicates of a study failed; the partial report is attached."""

    def __init__(self, message, report: MCReport):
        super().__init__(message)
        self.report = report


def _replicate(args) -> ReplicateRecord:
    cfg, nu, mu, free, index, seq = args
    theta = cfg.true_theta(nu, mu, free)
    gen_pts, gen_field = (make_generator(s) for s in seq.spawn(2))
    try:
        ps = uniform_points(cfg.n, gen_pts, cfg.box)
        model = build_model(theta, "phi", nu, cfg.dim)
        z = simulate_grf(ps, model, gen_field)
        lam = min_shape(cfg.dim, nu)
        start = {}
        for k in free:
            v = theta.get(k) * (1.0 + cfg.perturb)
            if k == "mu_star":
                v = min(v, 1.0 / lam)
            elif k == "tau2":
                v = min(max(v, 1e-3), 0.99)
            start[k] = v
        init = theta.with_values(**start)
        fit = fit_ml(ps, z, "phi", nu, init=init, dim=cfg.dim, max_iter=cfg.max_iter,
                     compute_fisher=False)
    except (GWMaternError, ArithmeticError, ValueError) as exc:
        return ReplicateRecord(index, "failed", message=f"{type(exc).__name__}: {exc}")
    est = {k: fit.theta_hat.get(k) for k in free}
    std = {}
    if cfg.standardize:
        info = fisher_information(theta, ps, "phi", nu, cfg.dim, names=free)
        var = np.diag(np.linalg.inv(info))
        std = {k: (est[k] - theta.get(k)) / math.sqrt(var[i]) for i, k in enumerate(free)}
    c = microergodic(theta, nu)
    m = math.sqrt(cfg.n / 2.0) * (fit.microergodic_hat / c - 1.0)
    return ReplicateRecord(index, "ok", est, std, m, fit.iterations)


def run_study(cfg: SimConfig, nu: float, mu: float, free=("sigma2", "beta"),
              workers: int = 1) -> MCReport:
    """Simulate, fit and standardize ``cfg.replicates`` independent datasets.

    Data come from the phi model with smoothness ``nu`` (fixed and known),
    shape ``mu`` and variance ``cfg.sigma2``; parameters not in ``free`` are
    held at their true values.  Each replicate draws fresh uniform locations.

    Raises
    ------
    StudyFailure
        If more than 10% of the replicates fail.
    """
    free = tuple(k for k in ("sigma2", "beta", "mu_star", "tau2") if k in set(free))
    if not free:
        raise DomainError("at least one parameter must be free")
    lam = min_shape(cfg.dim, nu)
    if mu < lam:
        raise DomainError(f"mu = {mu} is below lambda(d, nu) = {lam}")
    theta = cfg.true_theta(nu, mu, free)
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    jobs = [(cfg, nu, mu, free, i, s) for i, s in enumerate(seqs)]
    if workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_replicate(j) for j in jobs]
    report = MCReport(cfg, float(nu), float(mu), free, theta, records)
    nfail = len(report.failures)
    if nfail > MAX_FAILURE_FRACTION * cfg.replicates:
        raise StudyFailure(f"{nfail} of {cfg.replicates} replicates failed", report)
    return report
