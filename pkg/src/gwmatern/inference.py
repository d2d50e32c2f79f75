"""Gaussian likelihood, maximum-likelihood fitting and related quantities.

Observations ``z`` at locations ``s_1..s_n`` are modelled as a zero-mean
Gaussian vector with covariance ``Sigma = sigma^2 R(tau)``, where
``R = (1 - tau^2) rho(||s_i - s_j||) + tau^2 I``.  The parameters are

* ``sigma2``: variance ``sigma^2``;
* ``beta``: scale (the compact support itself for the ``"gw"`` family);
* ``mu_star``: ``1 / mu`` for the Wendland families, in ``(0, 1/lambda]``;
* ``tau2``: nugget fraction in ``[0, 1)``.

The smoothness ``nu`` is always held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import optimize
from scipy.linalg import cho_solve

from .covmat import PointSet, assemble, cholesky
from .errors import DomainError, FitError, NotPositiveDefiniteError
from .kernels import (
    CorrelationModel,
    GenWendlandParams,
    MaternParams,
    PhiParams,
    min_shape,
    practical_range,
)
from .specfun import log_gamma

__all__ = [
    "FAMILIES",
    "ParamVector",
    "FitResult",
    "EquivalenceResult",
    "GaussianLikelihood",
    "build_model",
    "log_likelihood",
    "fit_ml",
    "initial_guess",
    "fisher_information",
    "microergodic",
    "equivalence_check",
]

FAMILIES = ("matern", "phi", "gw")
PARAM_ORDER = ("sigma2", "beta", "mu_star", "tau2")
BOUNDARY_TOL = 1e-6

# sparse storage pays off only for large, mostly empty matrices
_SPARSE_MIN_N = 300
_SPARSE_MIN_ZERO = 0.8


@dataclass(frozen=True)
class ParamVector:
    """Covariance parameters with a mask of fixed entries.

    ``mu_star`` is ``None`` for the Matérn family.
    """

    sigma2: float
    beta: float
    mu_star: float | None = None
    tau2: float = 0.0
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.mu_star is not None and not self.mu_star > 0:
            raise DomainError("mu_star must be positive")
        if not 0.0 <= self.tau2 < 1.0:
            raise DomainError("tau2 must lie in [0, 1)")
        unknown = self.fixed - set(PARAM_ORDER)
        if unknown:
            raise DomainError(f"unknown parameter names in fixed: {sorted(unknown)}")

    @property
    def mu(self) -> float | None:
        return None if self.mu_star is None else 1.0 / self.mu_star

    def names(self) -> tuple:
        return tuple(k for k in PARAM_ORDER if k != "mu_star" or self.mu_star is not None)

    def free_names(self) -> tuple:
        return tuple(k for k in self.names() if k not in self.fixed)

    def get(self, name: str) -> float:
        return float(getattr(self, name))

    def with_values(self, **values) -> "ParamVector":
        return replace(self, **{k: float(v) for k, v in values.items()})

    def as_dict(self) -> dict:
        return {k: self.get(k) for k in self.names()}


def _check_family(family):
    if family not in FAMILIES:
        raise DomainError(f"family must be one of {FAMILIES}, got {family!r}")


def build_model(theta: ParamVector, family: str, nu: float, dim: int = 2) -> CorrelationModel:
    """Correlation model described by ``theta`` (variance and nugget included)."""
    _check_family(family)
    if family == "matern":
        if theta.mu_star is not None:
            raise DomainError("the Matérn family has no mu_star")
        params = MaternParams(nu, theta.beta)
    else:
        if theta.mu_star is None:
            raise DomainError(f"family {family!r} needs mu_star")
        lam = min_shape(dim, nu)
        if theta.mu_star > 1.0 / lam * (1.0 + 1e-12):
            raise DomainError(f"mu_star exceeds 1/lambda = {1.0 / lam}")
        mu = max(1.0 / theta.mu_star, lam)
        if family == "phi":
            params = PhiParams(nu, mu, theta.beta, dim)
        else:
            params = GenWendlandParams(nu, mu, theta.beta, dim)
    return CorrelationModel(params, variance=theta.sigma2, nugget=theta.tau2)


class GaussianLikelihood:
    """Log-likelihood of zero-mean Gaussian data for one family and point set.

    Sorted pair distances are cached on first use so that repeated
    evaluations only re-evaluate the correlation function.
    """

    def __init__(self, ps: PointSet, z, family: str, nu: float, dim: int | None = None,
                 storage: str = "auto"):
        _check_family(family)
        self.ps = ps
        self.z = np.asarray(z, dtype=float).ravel()
        if self.z.shape[0] != ps.n:
            raise DomainError(f"{self.z.shape[0]} observations for {ps.n} locations")
        self.family = family
        self.nu = float(nu)
        self.dim = ps.dim if dim is None else int(dim)
        if storage not in ("auto", "dense", "sparse"):
            raise DomainError(f"unknown storage {storage!r}")
        self.storage = storage
        if ps._pairs is None and ps.n <= 6000:
            ps.cache_pairs()
        self.evaluations = 0

    def _storage_for(self, model: CorrelationModel) -> str:
        if self.storage != "auto":
            return self.storage
        n = self.ps.n
        if not model.is_compact or n < _SPARSE_MIN_N:
            return "dense"
        k = len(self.ps.neighbors_within(model.support)[0])
        zero = 1.0 - 2.0 * k / (n * (n - 1))
        return "sparse" if zero >= _SPARSE_MIN_ZERO else "dense"

    def factor(self, theta: ParamVector, unit_variance: bool = False):
        """Cholesky factor of ``Sigma`` (or of ``R`` with ``unit_variance``)."""
        if unit_variance:
            theta = theta.with_values(sigma2=1.0)
        model = build_model(theta, self.family, self.nu, self.dim)
        m = assemble(self.ps, model, storage=self._storage_for(model))
        return cholesky(m)

    def __call__(self, theta: ParamVector) -> float:
        """``-1/2 [n log(2 pi sigma^2) + log|R| + z^T R^{-1} z / sigma^2]``."""
        self.evaluations += 1
        f = self.factor(theta, unit_variance=True)
        n = self.ps.n
        q = f.quad_form(self.z)
        return -0.5 * (n * math.log(2.0 * math.pi * theta.sigma2) + f.logdet + q / theta.sigma2)

    def profile(self, theta: ParamVector) -> tuple[float, float]:
        """Log-likelihood maximized over ``sigma2``; returns ``(value, sigma2_hat)``."""
        self.evaluations += 1
        f = self.factor(theta, unit_variance=True)
        n = self.ps.n
        s2 = f.quad_form(self.z) / n
        if not s2 > 0:
            raise FitError("zero quadratic form; data identically zero?")
        return -0.5 * (n * math.log(2.0 * math.pi * s2) + f.logdet + n), s2


def log_likelihood(theta: ParamVector, family: str, ps: PointSet, z, nu: float,
                   dim: int | None = None, storage: str = "auto") -> float:
    """Gaussian log-likelihood of ``z`` under ``theta``.

    Raises
    ------
    NotPositiveDefiniteError
        If the covariance matrix cannot be factored.
    """
    return GaussianLikelihood(ps, z, family, nu, dim, storage)(theta)


# ---------------------------------------------------------------------------
# coordinates for the optimizer


def _to_free(name, value, lam):
    if name in ("sigma2", "beta"):
        return math.log(value)
    if name == "mu_star":
        u = min(max(value * lam, 1e-12), 1.0 - 1e-9)
        return math.log(u / (1.0 - u))
    u = min(max(value, 1e-9), 1.0 - 1e-9)
    return math.log(u / (1.0 - u))


def _from_free(name, eta, lam):
    if name in ("sigma2", "beta"):
        return math.exp(eta)
    u = 0.5 * (1.0 + math.tanh(0.5 * eta))  # overflow-safe logistic
    if name == "mu_star":
        return max(u, 1e-300) / lam
    return min(u, 1.0 - 1e-12)


def _d_eta_d_theta(name, value, lam):
    """Derivative of the transformed coordinate with respect to the parameter."""
    if name in ("sigma2", "beta"):
        return 1.0 / value
    if name == "mu_star":
        u = value * lam
        return lam / (u * (1.0 - u))
    return 1.0 / (value * (1.0 - value))


@dataclass
class FitResult:
    """Outcome of :func:`fit_ml`."""

    theta_hat: ParamVector
    family: str
    nu: float
    free: tuple
    std_errors: dict
    loglik_max: float
    aic: float
    fisher: np.ndarray | None
    microergodic_hat: float
    iterations: int = 0
    evaluations: int = 0
    converged: bool = True
    boundary: tuple = ()

    def summary(self) -> dict:
        """Flat key-value record of the fit."""
        out = {"family": self.family, "nu": self.nu}
        for k in self.theta_hat.names():
            out[k] = self.theta_hat.get(k)
            if k in self.std_errors:
                out[f"se_{k}"] = self.std_errors[k]
        if self.theta_hat.mu_star is not None:
            out["mu"] = self.theta_hat.mu
        out.update(
            loglik=self.loglik_max,
            aic=self.aic,
            microergodic=self.microergodic_hat,
            iterations=self.iterations,
            converged=self.converged,
            boundary=",".join(self.boundary) or "none",
        )
        return out


def initial_guess(ps: PointSet, z, family: str, nu: float, dim: int | None = None,
                  mu: float | None = None, nugget: bool = False) -> ParamVector:
    """Starting values: sample variance, a scale whose practical range is
    20% of the domain diameter, ``mu_star`` mid-interval, nugget 0.05."""
    _check_family(family)
    dim = ps.dim if dim is None else dim
    z = np.asarray(z, dtype=float)
    sigma2 = float(np.var(z)) or 1.0
    target = 0.2 * ps.diameter if ps.diameter > 0 else 1.0
    lam = min_shape(dim, nu)
    mu_star = None
    if family != "matern":
        mu_star = 1.0 / mu if mu is not None else 0.5 / lam
    unit = ParamVector(1.0, 1.0, mu_star)
    pr = practical_range(build_model(unit, family, nu, dim))
    beta = target / pr
    return ParamVector(sigma2, beta, mu_star, 0.05 if nugget else 0.0)


def fit_ml(ps: PointSet, z, family: str, nu: float, init: ParamVector | None = None,
           fixed: Iterable[str] | None = None, dim: int | None = None, max_iter: int = 5000,
           profile: bool = True, storage: str = "auto", compute_fisher: bool = True,
           simplex_step: float = 0.25) -> FitResult:
    """Maximum-likelihood estimate by Nelder-Mead in transformed coordinates.

    Parameters
    ----------
    ps, z : PointSet, array_like
        Locations and zero-mean observations.
    family : {"matern", "phi", "gw"}
    nu : float
        Fixed smoothness.
    init : ParamVector, optional
        Starting point; :func:`initial_guess` when omitted.
    fixed : iterable of str, optional
        Names held at their ``init`` values (overrides ``init.fixed``).
    max_iter : int
        Nelder-Mead iteration budget.  ``0`` returns ``init`` unchanged.
    profile : bool
        Maximize over ``sigma2`` in closed form (``z^T R^{-1} z / n``) and run
        the simplex over the remaining free parameters only.  The maximizer
        is the same; the search space loses one dimension.
    compute_fisher : bool
        Evaluate the Fisher information and standard errors at the optimum.

    Raises
    ------
    FitError
        If the simplex does not converge within ``max_iter`` iterations.
    """
    _check_family(family)
    dim = ps.dim if dim is None else dim
    if init is None:
        init = initial_guess(ps, z, family, nu, dim)
    if fixed is not None:
        init = replace(init, fixed=frozenset(fixed))
    lik = GaussianLikelihood(ps, z, family, nu, dim, storage)
    lam = min_shape(dim, nu)
    free = init.free_names()
    use_profile = profile and "sigma2" in free
    search = tuple(k for k in free if not (use_profile and k == "sigma2"))

    def theta_at(eta):
        return init.with_values(**{k: _from_free(k, e, lam) for k, e in zip(search, eta)})

    def objective(eta):
        try:
            th = theta_at(eta)
            return -(lik.profile(th)[0] if use_profile else lik(th))
        except (NotPositiveDefiniteError, DomainError, FloatingPointError):
            return math.inf

    iterations, converged = 0, True
    if max_iter == 0:
        theta_hat = init
        loglik = lik(init)
    else:
        if search:
            x0 = np.array([_to_free(k, init.get(k), lam) for k in search])
            simplex = np.vstack([x0] + [x0 + simplex_step * np.eye(len(x0))[i] for i in range(len(x0))])
            res = optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"maxiter": max_iter, "maxfev": 50 * max_iter, "xatol": 1e-6,
                         "fatol": 1e-8, "initial_simplex": simplex},
            )
            iterations = int(res.nit)
            converged = bool(res.success)
            if not math.isfinite(res.fun):
                raise FitError("no feasible parameter found")
            theta_hat = theta_at(res.x)
        else:
            theta_hat = init
        if use_profile:
            loglik, s2 = lik.profile(theta_hat)
            theta_hat = theta_hat.with_values(sigma2=s2)
        else:
            loglik = lik(theta_hat)
        if not converged:
            raise FitError(f"Nelder-Mead did not converge in {max_iter} iterations")

    boundary = []
    if theta_hat.mu_star is not None and "mu_star" in free:
        if abs(theta_hat.mu_star - 1.0 / lam) < BOUNDARY_TOL:
            boundary.append("mu_star_upper")
        if theta_hat.mu_star < BOUNDARY_TOL:
            boundary.append("mu_star_lower")

    fisher, se = None, {}
    if compute_fisher and free:
        fisher = fisher_information(theta_hat, ps, family, nu, dim, names=free)
        try:
            cov = np.linalg.inv(fisher)
            se = {k: float(math.sqrt(cov[i, i])) if cov[i, i] > 0 else math.nan
                  for i, k in enumerate(free)}
        except np.linalg.LinAlgError:
            se = {k: math.nan for k in free}
    p = len(free)
    return FitResult(
        theta_hat=theta_hat,
        family=family,
        nu=float(nu),
        free=free,
        std_errors=se,
        loglik_max=float(loglik),
        aic=2.0 * p - 2.0 * float(loglik),
        fisher=fisher,
        microergodic_hat=microergodic(theta_hat, nu, family),
        iterations=iterations,
        evaluations=lik.evaluations,
        converged=converged,
        boundary=tuple(boundary),
    )


# ---------------------------------------------------------------------------
# Fisher information


def _covariance_dense(theta, ps, family, nu, dim):
    return assemble(ps, build_model(theta, family, nu, dim), storage="dense").toarray()


def fisher_information(theta: ParamVector, ps: PointSet, family: str, nu: float,
                       dim: int | None = None, names: tuple | None = None) -> np.ndarray:
    """Expected Fisher information ``F_ij = 1/2 tr(S^-1 dS_i S^-1 dS_j)``.

    ``dS/dsigma2 = S / sigma2`` exactly; other derivatives are central
    differences in the optimizer coordinates (step ``1e-5 max(|eta|, 1)``)
    mapped back to the natural parameters.  Rows follow ``names`` (default:
    the free parameters of ``theta``).
    """
    _check_family(family)
    dim = ps.dim if dim is None else dim
    names = theta.free_names() if names is None else tuple(names)
    lam = min_shape(dim, nu)
    sigma = _covariance_dense(theta, ps, family, nu, dim)
    chol = cholesky(assemble(ps, build_model(theta, family, nu, dim), storage="dense"))
    cf = (chol.dense, True)
    mats = []
    for k in names:
        if k == "sigma2":
            d = sigma / theta.sigma2
        else:
            value = theta.get(k)
            if k == "tau2" and value == 0.0:
                h = 1e-5
                d = (_covariance_dense(theta.with_values(tau2=h), ps, family, nu, dim) - sigma) / h
            else:
                eta = _to_free(k, value, lam)
                h = 1e-5 * max(abs(eta), 1.0)
                plus = theta.with_values(**{k: _from_free(k, eta + h, lam)})
                minus = theta.with_values(**{k: _from_free(k, eta - h, lam)})
                d_eta = (_covariance_dense(plus, ps, family, nu, dim)
                         - _covariance_dense(minus, ps, family, nu, dim)) / (2.0 * h)
                d = d_eta * _d_eta_d_theta(k, value, lam)
        mats.append(cho_solve(cf, d, check_finite=False))
    p = len(names)
    f = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            f[i, j] = f[j, i] = 0.5 * float(np.sum(mats[i] * mats[j].T))
    return f


# ---------------------------------------------------------------------------
# microergodic parameter and equivalence


def _g(nu, mu):
    return math.exp(log_gamma(mu + 1.0) - log_gamma(2.0 * nu + mu + 1.0))


def microergodic(theta: ParamVector, nu: float, family: str = "phi") -> float:
    """Consistently estimable parameter under fixed-domain asymptotics.

    For the Wendland families ``sigma^2 beta^-(1+2nu) Gamma(mu+1) /
    Gamma(2nu+mu+1)``; for the Matérn family ``sigma^2 beta^-(2nu)``.
    """
    if family == "matern" or theta.mu_star is None:
        return theta.sigma2 * theta.beta ** (-2.0 * nu)
    return theta.sigma2 * theta.beta ** (-(1.0 + 2.0 * nu)) * _g(nu, theta.mu)


@dataclass(frozen=True)
class EquivalenceResult:
    """Outcome of :func:`equivalence_check`."""

    equivalent: bool
    lhs: float
    rhs: float
    precondition_ok: bool
    message: str = ""


def equivalence_check(theta0: ParamVector, theta1: ParamVector, nu: float, dim: int = 2,
                      rtol: float = 1e-12) -> EquivalenceResult:
    """Whether two Wendland parameter sets give equivalent Gaussian measures.

    Requires ``mu_i > nu + d + 1/2`` for both; equivalence then holds iff
    the microergodic parameters coincide.
    """
    if theta0.mu_star is None or theta1.mu_star is None:
        raise DomainError("equivalence_check needs mu_star for both parameter sets")
    lhs = microergodic(theta0, nu)
    rhs = microergodic(theta1, nu)
    bound = nu + dim + 0.5
    ok = theta0.mu > bound and theta1.mu > bound
    if not ok:
        return EquivalenceResult(False, lhs, rhs, False,
                                 f"precondition violated: need mu > {bound:g} for both")
    eq = abs(lhs - rhs) / max(lhs, rhs) < rtol
    return EquivalenceResult(eq, lhs, rhs, True, "")
