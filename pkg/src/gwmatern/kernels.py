"""Isotropic correlation functions.

Three families are provided:

* Matérn, ``M_{nu,beta}(r) = 2**(1-nu) / Gamma(nu) * (r/beta)**nu * K_nu(r/beta)``;
* generalized Wendland ``GW_{nu,mu,support}``, compactly supported on
  ``[0, support]``;
* the rescaled family ``phi_{nu,mu,beta}``, a generalized Wendland kernel
  whose support ``delta(nu, mu, beta)`` is chosen so that ``phi`` converges
  to ``M_{nu+1/2,beta}`` as ``mu`` grows.

All evaluators accept scalar or array distances and return values of the
same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate, optimize, special

from .errors import BracketError, ConvergenceError, DomainError
from .specfun import (
    DEFAULT_CONTROL,
    _hyp2f1_direct,
    _hyp2f1_transform,
    log_bessel_k,
)

__all__ = [
    "MaternParams",
    "GenWendlandParams",
    "PhiParams",
    "CorrelationModel",
    "min_shape",
    "matern",
    "gw_integral",
    "gw_askey",
    "gw_closed_form",
    "gw_hypergeometric",
    "delta_support",
    "phi",
    "apply_nugget_variance",
    "practical_range",
    "sup_abs_difference",
]


def min_shape(dim: int, nu: float) -> float:
    """Smallest ``mu`` for which ``GW_{nu,mu}`` is positive definite in R^dim."""
    return 0.5 * (dim + 1) + nu


def _check_dim(dim):
    if dim not in (1, 2, 3):
        raise DomainError(f"dim must be 1, 2 or 3, got {dim}")


@dataclass(frozen=True)
class MaternParams:
    """Matérn smoothness ``nu`` and scale ``beta``."""

    nu: float
    beta: float

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError("Matérn nu must be positive")
        if not self.beta > 0:
            raise DomainError("Matérn beta must be positive")


@dataclass(frozen=True)
class GenWendlandParams:
    """Generalized Wendland parameters with an explicit compact support."""

    nu: float
    mu: float
    support: float
    dim: int = 2

    def __post_init__(self):
        _check_dim(self.dim)
        if not self.nu >= 0:
            raise DomainError("generalized Wendland nu must be nonnegative")
        if not self.support > 0:
            raise DomainError("support must be positive")
        lam = min_shape(self.dim, self.nu)
        if not self.mu >= lam:
            raise DomainError(
                f"mu = {self.mu} is below the positive-definiteness bound {lam}"
            )


@dataclass(frozen=True)
class PhiParams:
    """Parameters of ``phi_{nu,mu,beta}``; the support is derived from them."""

    nu: float
    mu: float
    beta: float
    dim: int = 2

    def __post_init__(self):
        _check_dim(self.dim)
        if not self.nu >= 0:
            raise DomainError("nu must be nonnegative")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        lam = min_shape(self.dim, self.nu)
        if not self.mu >= lam:
            raise DomainError(
                f"mu = {self.mu} is below the positive-definiteness bound {lam}"
            )

    @property
    def support(self) -> float:
        return delta_support(self.nu, self.mu, self.beta)

    def as_wendland(self) -> GenWendlandParams:
        return GenWendlandParams(self.nu, self.mu, self.support, self.dim)


Params = Union[MaternParams, GenWendlandParams, PhiParams]


@dataclass(frozen=True)
class CorrelationModel:
    """A correlation family with variance and nugget.

    The covariance at lag ``r`` is ``variance * ((1 - nugget) * rho(r) +
    nugget * [r == 0])``.
    """

    params: Params
    variance: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        if not isinstance(self.params, (MaternParams, GenWendlandParams, PhiParams)):
            raise DomainError("unknown parameter record")
        if not self.variance > 0:
            raise DomainError("variance must be positive")
        if not 0.0 <= self.nugget < 1.0:
            raise DomainError("nugget must lie in [0, 1)")

    @property
    def family(self) -> str:
        if isinstance(self.params, MaternParams):
            return "matern"
        if isinstance(self.params, GenWendlandParams):
            return "gw"
        return "phi"

    @property
    def support(self) -> float:
        """Compact support radius (``inf`` for Matérn)."""
        if isinstance(self.params, MaternParams):
            return math.inf
        return self.params.support

    @property
    def is_compact(self) -> bool:
        return math.isfinite(self.support)

    @property
    def scale(self) -> float:
        """Natural length scale: ``beta`` for Matérn and phi, support for GW."""
        if isinstance(self.params, GenWendlandParams):
            return self.params.support
        return self.params.beta

    def correlation(self, r):
        """Correlation ``rho(r)`` without nugget."""
        p = self.params
        if isinstance(p, MaternParams):
            return matern(r, p)
        if isinstance(p, PhiParams):
            return phi(r, p)
        return gw_hypergeometric(r, p)

    def covariance(self, r):
        """Covariance including variance and nugget."""
        return apply_nugget_variance(self.correlation(r), r, self)


# ---------------------------------------------------------------------------
# Matérn


def _as_float_array(r):
    ra = np.asarray(r, dtype=float)
    if np.any(~(ra >= 0)):
        raise DomainError("distances must be nonnegative")
    return ra


def _restore(values, like):
    if np.ndim(like) == 0:
        return float(values.reshape(-1)[0]) if np.ndim(values) else float(values)
    return values


_MATERN_HALF_INTEGER = {
    0.5: lambda t: np.exp(-t),
    1.5: lambda t: np.exp(-t) * (1.0 + t),
    2.5: lambda t: np.exp(-t) * (1.0 + t + t * t / 3.0),
    3.5: lambda t: np.exp(-t) * (1.0 + t + 2.0 * t * t / 5.0 + t**3 / 15.0),
}


def matern(r, p: MaternParams, closed_form: bool = True):
    """Matérn correlation ``M_{nu,beta}(r)``.

    Parameters
    ----------
    r : float or array_like
        Nonnegative distances.
    p : MaternParams
    closed_form : bool
        Use the exponential-polynomial forms for ``nu`` in
        ``{0.5, 1.5, 2.5, 3.5}``.  Disable to force the Bessel path.
    """
    ra = _as_float_array(r)
    t = ra / p.beta
    if closed_form and p.nu in _MATERN_HALF_INTEGER:
        return _restore(_MATERN_HALF_INTEGER[p.nu](t), r)
    out = np.ones_like(t)
    pos = t > 0
    if pos.any():
        tp = t[pos]
        logm = (
            (1.0 - p.nu) * math.log(2.0)
            - special.gammaln(p.nu)
            + p.nu * np.log(tp)
            + log_bessel_k(p.nu, tp)
        )
        out[pos] = np.minimum(np.exp(logm), 1.0)
    return _restore(out, r)


# ---------------------------------------------------------------------------
# generalized Wendland


def _log_beta(a, b):
    return special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)


def gw_askey(r, p: GenWendlandParams):
    """Askey function ``(1 - r/support)_+^mu`` (the ``nu = 0`` member)."""
    if p.nu != 0:
        raise DomainError("gw_askey requires nu = 0")
    x = _as_float_array(r) / p.support
    out = np.where(x < 1.0, np.power(np.clip(1.0 - x, 0.0, None), p.mu), 0.0)
    return _restore(out, r)


def gw_closed_form(r, nu: int, mu: float, support: float):
    """Closed forms of ``GW_{nu,mu,support}`` for ``nu`` in {0, 1, 2, 3}."""
    x = _as_float_array(r) / support
    inside = x < 1.0
    xi = np.where(inside, x, 1.0)
    base = 1.0 - xi
    if nu == 0:
        val = base**mu
    elif nu == 1:
        val = base ** (mu + 1) * (1.0 + xi * (mu + 1))
    elif nu == 2:
        val = base ** (mu + 2) * (
            1.0 + xi * (mu + 2) + xi**2 * (mu * mu + 4 * mu + 3) / 3.0
        )
    elif nu == 3:
        val = base ** (mu + 3) * (
            1.0
            + xi * (mu + 3)
            + xi**2 * (2 * mu * mu + 12 * mu + 15) / 5.0
            + xi**3 * (mu**3 + 9 * mu * mu + 23 * mu + 15) / 15.0
        )
    else:
        raise DomainError("closed forms exist for nu in {0, 1, 2, 3} only")
    return _restore(np.where(inside, val, 0.0), r)


def gw_integral(r, p: GenWendlandParams, epsrel: float = 1e-12):
    """Generalized Wendland kernel by adaptive quadrature of its integral form.

    ``GW(r) = 1/B(2nu, mu+1) * int_x^1 u (u^2 - x^2)^(nu-1) (1-u)^mu du`` with
    ``x = r / support``.  The algebraic endpoint factors ``(u - x)^(nu-1)``
    and ``(1 - u)^mu`` are handled exactly by a weighted (QAWS) rule, so
    ``nu < 1`` needs no special treatment.  Intended as a reference
    implementation; it is slow.
    """
    if not p.nu > 0:
        raise DomainError("gw_integral requires nu > 0; use gw_askey")
    ra = _as_float_array(r)
    x = np.atleast_1d(ra / p.support).astype(float)
    out = np.zeros_like(x)
    lognorm = _log_beta(2.0 * p.nu, p.mu + 1.0)
    nu, mu = p.nu, p.mu
    for i, xi in enumerate(x):
        if xi >= 1.0:
            continue
        if xi == 0.0:
            out[i] = 1.0
            continue
        val, err, *rest = integrate.quad(
            lambda u: u * (u + xi) ** (nu - 1.0),
            xi,
            1.0,
            weight="alg",
            wvar=(nu - 1.0, mu),
            epsabs=0.0,
            epsrel=epsrel,
            limit=500,
            full_output=1,
        )
        if len(rest) >= 2 and rest[0]["last"] >= 500:
            raise ConvergenceError(f"quadrature did not converge at x = {xi}")
        out[i] = val * math.exp(-lognorm)
    return _restore(out.reshape(np.shape(ra)), r)


def _gw_log_k(nu, mu):
    """``ln K`` for the hypergeometric representation."""
    return (
        special.gammaln(nu)
        + special.gammaln(2 * nu + mu + 1)
        - special.gammaln(2 * nu)
        - special.gammaln(nu + mu + 1)
        - (mu + 1) * math.log(2.0)
    )


def _gw_general(x, nu, mu, control=DEFAULT_CONTROL):
    """``GW_{nu,mu,1}(x)`` for ``0 <= x < 1`` and ``nu > 0``.

    Near the origin the Gauss function is taken through its linear
    transformation in ``x**2``; this expansion suffers cancellation of order
    ``exp(2 mu x)``, so past ``x_s = min(1/2, 4/mu)`` the quadratic
    transformation ``2F1(mu, -nu; mu+nu+1; (1-x)/(1+x))`` is summed instead,
    whose terms do not cancel.
    """
    out = np.empty_like(x)
    logk = _gw_log_k(nu, mu)
    xs = min(0.5, 4.0 / mu)
    near = x <= xs
    if near.any():
        xn = x[near]
        a, b, c = 0.5 * mu, 0.5 * (mu + 1.0), nu + mu + 1.0
        f, _ = _hyp2f1_transform(a, b, c, xn * xn, control)
        out[near] = np.exp(logk + (nu + mu) * np.log1p(-xn * xn)) * f
    far = ~near
    if far.any():
        xf = x[far]
        w = (1.0 - xf) / (1.0 + xf)
        f = _hyp2f1_direct(mu, -nu, mu + nu + 1.0, w, control)
        logpref = logk + mu * math.log(2.0) + (mu + nu) * np.log1p(-xf) + nu * np.log1p(xf)
        out[far] = np.exp(logpref) * f
    return out


def gw_hypergeometric(r, p: GenWendlandParams, closed_form: bool = True):
    """Generalized Wendland kernel through hypergeometric functions.

    Parameters
    ----------
    r : float or array_like
        Nonnegative distances.
    p : GenWendlandParams
    closed_form : bool
        Use the polynomial closed forms for ``nu`` in {0, 1, 2, 3}.  Disable
        to force the series path (``nu > 0`` only).
    """
    if closed_form and p.nu in (0, 1, 2, 3):
        return gw_closed_form(r, int(p.nu), p.mu, p.support)
    if p.nu == 0:
        return gw_askey(r, p)
    ra = _as_float_array(r)
    x = np.atleast_1d(ra / p.support).astype(float)
    out = np.zeros_like(x)
    inside = x < 1.0
    if inside.any():
        out[inside] = np.clip(_gw_general(x[inside], p.nu, p.mu), 0.0, 1.0)
    return _restore(out.reshape(np.shape(ra)), r)


def delta_support(nu: float, mu: float, beta: float) -> float:
    """Compact support ``beta * (Gamma(mu+2nu+1) / Gamma(mu))**(1/(1+2nu))``."""
    if not (nu >= 0 and mu > 0 and beta > 0):
        raise DomainError("delta_support requires nu >= 0, mu > 0, beta > 0")
    logratio = special.gammaln(mu + 2 * nu + 1) - special.gammaln(mu)
    return float(beta * math.exp(logratio / (1.0 + 2.0 * nu)))


def phi(r, p: PhiParams):
    """``phi_{nu,mu,beta}(r) = GW_{nu,mu,delta(nu,mu,beta)}(r)``."""
    return gw_hypergeometric(r, p.as_wendland())


def apply_nugget_variance(rho, r, model: CorrelationModel):
    """Covariance ``sigma^2 ((1 - tau^2) rho + tau^2 [r == 0])``."""
    rho_a = np.asarray(rho, dtype=float)
    ra = np.asarray(r, dtype=float)
    tau2 = model.nugget
    out = model.variance * ((1.0 - tau2) * rho_a + tau2 * (ra == 0.0))
    if np.ndim(out) == 0:
        return float(out)
    return out


def practical_range(model: CorrelationModel, threshold: float = 0.05) -> float:
    """Distance at which the correlation first falls to ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie in (0, 1)")

    def f(r):
        return float(model.correlation(r)) - threshold

    hi = model.scale
    limit = 1e6 * model.scale
    while f(hi) >= 0.0:
        hi *= 2.0
        if hi > limit:
            raise BracketError("correlation stays above threshold within 1e6 scales")
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-14 * hi, rtol=1e-10))


# ---------------------------------------------------------------------------
# sup-norm distance between two correlation functions


_GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return f(x), x


def sup_abs_difference(f, g, r_max: float, n_grid: int = 4096):
    """Maximum of ``|f(r) - g(r)|`` over ``[0, r_max]``.

    The maximum is located on a uniform grid and refined by golden-section
    search on the two grid cells around the grid argmax.

    Returns
    -------
    (float, float)
        The maximum and its location.
    """
    grid = np.linspace(0.0, r_max, n_grid)
    diff = np.abs(np.asarray(f(grid)) - np.asarray(g(grid)))
    i = int(np.argmax(diff))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, n_grid - 1)]

    def h(r):
        return abs(float(f(r)) - float(g(r)))

    best, where = _golden_max(h, a, b, tol=1e-10 * max(r_max, 1.0))
    if diff[i] >= best:
        return float(diff[i]), float(grid[i])
    return float(best), float(where)
