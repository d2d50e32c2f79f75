"""Special functions used by the correlation models.

Log-gamma and the modified Bessel function of the second kind are thin,
domain-checked wrappers over :mod:`scipy.special`.  The hypergeometric
series ``2F1`` and ``1F2`` are summed here, with explicit control over
truncation, so that callers can choose the series argument that keeps the
evaluation well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConvergenceError, DomainError, PrecisionLossError

__all__ = [
    "SeriesControl",
    "X_MAX_1F2",
    "log_gamma",
    "gamma_ratio",
    "bessel_k",
    "log_bessel_k",
    "hyp2f1",
    "hyp1f2",
]

# Largest |x| accepted by hyp1f2; past this the alternating series loses
# more than about six digits to cancellation.
X_MAX_1F2 = 400.0

# Distance from an integer below which c - a - b is treated as degenerate
# and the logarithmic formula is used (with interpolation if not exact).
_NEAR_INT = 1e-4
_INTERP_STEP = 1e-3


@dataclass(frozen=True)
class SeriesControl:
    """Truncation rule for hypergeometric series.

    Summation stops once two consecutive terms satisfy
    ``|t_k| <= rel_tol * |S_k| + abs_tol``.
    """

    max_terms: int = 10000
    rel_tol: float = 1e-14
    abs_tol: float = 1e-300

    def __post_init__(self):
        if int(self.max_terms) < 1:
            raise DomainError("max_terms must be at least 1")
        if not 0.0 < self.rel_tol < 1.0:
            raise DomainError("rel_tol must lie in (0, 1)")
        if self.abs_tol < 0.0:
            raise DomainError("abs_tol must be nonnegative")


DEFAULT_CONTROL = SeriesControl()


def _scalar_or_array(values, like):
    if np.ndim(like) == 0:
        return float(np.asarray(values).reshape(-1)[0])
    return values


def log_gamma(x):
    """Natural logarithm of the gamma function for positive arguments.

    Parameters
    ----------
    x : float or array_like
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        ``ln Gamma(x)``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("log_gamma requires x > 0")
    return _scalar_or_array(special.gammaln(xa), x)


def gamma_ratio(a, b):
    """Return ``Gamma(a) / Gamma(b)`` computed in log space."""
    aa = np.asarray(a, dtype=float)
    ba = np.asarray(b, dtype=float)
    if np.any(~(aa > 0)) or np.any(~(ba > 0)):
        raise DomainError("gamma_ratio requires positive arguments")
    out = np.exp(special.gammaln(aa) - special.gammaln(ba))
    return _scalar_or_array(out, aa + ba)


def bessel_k(order, x):
    """Modified Bessel function of the second kind, ``K_order(x)``.

    Parameters
    ----------
    order : float
        Nonnegative order.
    x : float or array_like
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        Values of ``K_order(x)``; overflow near ``x = 0`` saturates to ``inf``.
    """
    if not order >= 0:
        raise DomainError("bessel_k requires order >= 0")
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("bessel_k requires x > 0")
    with np.errstate(over="ignore"):
        out = special.kv(float(order), xa)
    return _scalar_or_array(out, x)


def log_bessel_k(order, x):
    """Natural logarithm of ``K_order(x)``, finite where ``K`` itself overflows.

    Uses the exponentially scaled Bessel function where it is finite and
    otherwise the upward recurrence ``K_{v+1} = K_{v-1} + (2v/x) K_v``,
    which is stable for ``K``, accumulated in log space from the fractional
    part of the order.
    """
    order = float(order)
    if not order >= 0:
        raise DomainError("log_bessel_k requires order >= 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(xa > 0)):
        raise DomainError("log_bessel_k requires x > 0")
    with np.errstate(over="ignore", divide="ignore"):
        out = np.log(special.kve(order, xa)) - xa
    bad = ~np.isfinite(out)
    if bad.any():
        xb = xa[bad]
        frac = order - math.floor(order)
        steps = int(math.floor(order))
        with np.errstate(over="ignore", divide="ignore"):
            k0 = np.log(special.kve(frac, xb)) - xb
            k1 = np.log(special.kve(frac + 1.0, xb)) - xb
        if steps == 0:
            out[bad] = k0
        else:
            # ratio r_j = K_{frac+j+1} / K_{frac+j}
            acc = k1
            ratio = np.exp(k1 - k0)
            for j in range(1, steps):
                ratio = 1.0 / ratio + 2.0 * (frac + j) / xb
                acc = acc + np.log(ratio)
            out[bad] = acc
    return _scalar_or_array(out, x)


# ---------------------------------------------------------------------------
# series machinery


def _series(upper, lower, x, control, compensated=False, magnitude=False):
    """Sum ``sum_k prod (upper)_k / prod (lower)_k * x**k / k!`` elementwise.

    ``x`` is a 1-d float array.  Converged entries are dropped from the
    working set so that slowly converging points do not slow the others.
    With ``magnitude=True`` the sum of absolute terms is returned as well.
    """
    x = np.asarray(x, dtype=float)
    total = np.ones_like(x)
    absum = np.ones_like(x)
    comp = np.zeros_like(x)
    term = np.ones_like(x)
    run = np.zeros(x.shape, dtype=np.int64)
    idx = np.arange(x.size)
    xs = x.copy()
    upper = [float(u) for u in upper]
    lower = [float(v) for v in lower]
    for k in range(int(control.max_terms)):
        ratio = 1.0 / (k + 1.0)
        for u in upper:
            ratio *= u + k
        for v in lower:
            ratio /= v + k
        term = term * (ratio * xs)
        s = total[idx]
        if compensated:
            y = term - comp[idx]
            t = s + y
            comp[idx] = (t - s) - y
            s = t
        else:
            s = s + term
        total[idx] = s
        if magnitude:
            absum[idx] += np.abs(term)
        small = np.abs(term) <= control.rel_tol * np.abs(s) + control.abs_tol
        r = np.where(small, run[idx] + 1, 0)
        run[idx] = r
        keep = r < 2
        if not keep.any():
            return (total, absum) if magnitude else total
        if not keep.all():
            idx = idx[keep]
            term = term[keep]
            xs = xs[keep]
    raise ConvergenceError(
        f"hypergeometric series did not converge in {control.max_terms} terms"
    )


# Double-double arithmetic (Dekker / Knuth error-free transformations).  The
# 1F2 series alternates with terms far larger than its sum, so both the term
# recurrence and the running sum are carried as unevaluated pairs hi + lo.

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd_add(xh, xl, yh, yl):
    s, e = _two_sum(xh, yh)
    return _fast_two_sum(s, e + xl + yl)


def _dd_mul(xh, xl, yh, yl):
    p, e = _two_prod(xh, yh)
    return _fast_two_sum(p, e + xh * yl + xl * yh)


def _dd_div(xh, xl, yh, yl):
    q1 = xh / yh
    ph, pl = _dd_mul(yh, yl, q1, 0.0)
    rh, rl = _dd_add(xh, xl, -ph, -pl)
    q2 = rh / yh
    return _fast_two_sum(q1, q2)


def _series_1f2_dd(a, b, c, x, control):
    """``1F2(a; b, c; x)`` summed in double-double arithmetic."""
    x = np.asarray(x, dtype=float)
    th = np.ones_like(x)
    tl = np.zeros_like(x)
    sh = np.ones_like(x)
    sl = np.zeros_like(x)
    run = np.zeros(x.shape, dtype=np.int64)
    idx = np.arange(x.size)
    xs = x.copy()
    for k in range(int(control.max_terms)):
        nh, nl = _two_sum(a, float(k))
        dh, dl = _two_sum(b, float(k))
        eh, el = _two_sum(c, float(k))
        dh, dl = _dd_mul(dh, dl, eh, el)
        dh, dl = _dd_mul(dh, dl, k + 1.0, 0.0)
        rh, rl = _dd_div(nh, nl, dh, dl)
        th, tl = _dd_mul(th, tl, rh, rl)
        th, tl = _dd_mul(th, tl, xs, 0.0)
        h, l = _dd_add(sh[idx], sl[idx], th, tl)
        sh[idx] = h
        sl[idx] = l
        small = np.abs(th) <= control.rel_tol * np.abs(h) + control.abs_tol
        r = np.where(small, run[idx] + 1, 0)
        run[idx] = r
        keep = r < 2
        if not keep.any():
            return sh + sl
        if not keep.all():
            idx = idx[keep]
            th = th[keep]
            tl = tl[keep]
            xs = xs[keep]
    raise ConvergenceError(
        f"1F2 series did not converge in {control.max_terms} terms"
    )


def _lgamma_sign(x):
    """Return ``(ln|Gamma(x)|, sign Gamma(x))``; poles give ``(inf, 0)``."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        return math.inf, 0.0
    return float(special.gammaln(x)), float(special.gammasgn(x))


def _log_gamma_quotient(num, den):
    """Like :func:`_gamma_quotient` but returns ``(log|q|, sign)``."""
    logv, sign = 0.0, 1.0
    for v in num:
        lg, s = _lgamma_sign(v)
        if s == 0.0:
            raise DomainError("gamma pole in numerator")
        logv += lg
        sign *= s
    for v in den:
        lg, s = _lgamma_sign(v)
        if s == 0.0:
            return -math.inf, 0.0
        logv -= lg
        sign *= s
    return logv, sign


def _is_nonpos_int(v):
    return v <= 0 and v == math.floor(v)


def _hyp2f1_direct(a, b, c, z, control):
    return _series((a, b), (c,), z, control)


def _hyp2f1_log_case(a, b, m, w, control):
    """``2F1(a, b; a+b+m; 1-w)`` for integer ``m >= 0`` (logarithmic case).

    Returns the value and the sum of absolute contributions.
    """
    c = a + b + m
    w = np.asarray(w, dtype=float)
    logw = np.log(w)
    out = np.zeros_like(w)
    mag = np.zeros_like(w)
    # finite polynomial part
    if m > 0:
        lq, sq = _log_gamma_quotient((m, c), (a + m, b + m))
        if sq != 0.0:
            part = np.zeros_like(w)
            apart = np.zeros_like(w)
            term = np.ones_like(w)
            for n in range(m):
                part += term
                apart += np.abs(term)
                if n + 1 < m:
                    term = term * ((a + n) * (b + n) / ((n + 1.0) * (1.0 - m + n))) * w
            out += sq * math.exp(lq) * part
            mag += math.exp(lq) * apart
    # logarithmic part
    lq, sq = _log_gamma_quotient((c,), (a, b))
    if sq == 0.0:
        return out, mag
    if _is_nonpos_int(a + m) or _is_nonpos_int(b + m):
        raise DomainError("terminating parameters are not supported in the log case")
    lpref = lq - special.gammaln(m + 1.0) + m * logw
    pref = sq * (-1.0) ** (m + 1) * np.exp(lpref)
    psi1 = special.psi(1.0)
    psim = special.psi(m + 1.0)
    psia = special.psi(a + m)
    psib = special.psi(b + m)
    term = np.ones_like(w)
    part = np.zeros_like(w)
    apart = np.zeros_like(w)
    run = np.zeros(w.shape, dtype=np.int64)
    for n in range(int(control.max_terms)):
        contrib = term * (logw - psi1 - psim + psia + psib)
        part += contrib
        apart += np.abs(contrib)
        small = np.abs(contrib) <= control.rel_tol * np.abs(part) + control.abs_tol
        run = np.where(small, run + 1, 0)
        if np.all(run >= 2):
            break
        term = term * ((a + m + n) * (b + m + n) / ((n + 1.0) * (n + m + 1.0))) * w
        psi1 += 1.0 / (n + 1.0)
        psim += 1.0 / (n + m + 1.0)
        psia += 1.0 / (a + m + n)
        psib += 1.0 / (b + m + n)
    else:
        raise ConvergenceError("logarithmic 2F1 series did not converge")
    out += pref * part
    mag += np.abs(pref) * apart
    return out, mag


def _hyp2f1_transform_generic(a, b, c, w, control):
    """Linear ``1 - z`` transformation for non-integer ``c - a - b``."""
    s = c - a - b
    la, sa = _log_gamma_quotient((c, s), (c - a, c - b))
    lb, sb = _log_gamma_quotient((c, -s), (a, b))
    out = np.zeros_like(w)
    mag = np.zeros_like(w)
    if sa != 0.0:
        f1, m1 = _series((a, b), (1.0 - s,), w, control, magnitude=True)
        out += sa * np.exp(la) * f1
        mag += np.exp(la) * m1
    if sb != 0.0:
        f2, m2 = _series((c - a, c - b), (s + 1.0,), w, control, magnitude=True)
        scale = np.exp(lb + s * np.log(w))
        out += sb * scale * f2
        mag += scale * m2
    return out, mag


def _hyp2f1_transform(a, b, c, w, control):
    """``2F1(a, b; c; 1 - w)`` through the linear transformation in ``w``.

    Returns ``(value, magnitude)`` where ``magnitude`` bounds the size of the
    terms that were combined; ``magnitude / |value|`` estimates the loss of
    relative accuracy to cancellation.
    """
    s = c - a - b
    w = np.asarray(w, dtype=float)
    at_one = w == 0.0
    if at_one.any():
        # Gauss summation
        out = np.empty_like(w)
        mag = np.empty_like(w)
        lg, sg = _log_gamma_quotient((c, s), (c - a, c - b))
        out[at_one] = sg * math.exp(lg)
        mag[at_one] = abs(out[at_one][0])
        if (~at_one).any():
            out[~at_one], mag[~at_one] = _hyp2f1_transform(a, b, c, w[~at_one], control)
        return out, mag
    m = round(s)
    if s == m:
        return _hyp2f1_log_case(a, b, int(m), w, control)
    if abs(s - m) < _NEAR_INT and m >= 0:
        # quadratic interpolation in c through the exact logarithmic value
        d = s - m
        c0 = c - d
        h = _INTERP_STEP
        f0, m0 = _hyp2f1_log_case(a, b, int(m), w, control)
        fm, mm = _hyp2f1_transform_generic(a, b, c0 - h, w, control)
        fp, mp = _hyp2f1_transform_generic(a, b, c0 + h, w, control)
        val = f0 + d * (fp - fm) / (2 * h) + d * d * (fp - 2 * f0 + fm) / (2 * h * h)
        return val, np.maximum(m0, np.maximum(mm, mp))
    return _hyp2f1_transform_generic(a, b, c, w, control)


# Largest tolerated ratio of term magnitude to result in the 1 - z route
# before "auto" falls back to the direct series.
_MAX_CANCELLATION = 1e4


def hyp2f1(a, b, c, z, control: SeriesControl | None = None, method: str = "auto"):
    """Gauss hypergeometric function ``2F1(a, b; c; z)`` for ``z`` in [0, 1].

    Parameters
    ----------
    a, b, c : float
        Parameters; ``c`` must be positive.
    z : float or array_like
        Argument(s) in ``[0, 1]``.  ``z = 1`` requires ``c - a - b > 0``.
    control : SeriesControl, optional
        Truncation rule.
    method : {"auto", "direct", "transform"}
        ``"auto"`` sums the power series for ``z <= 0.5`` and uses the linear
        transformation in ``1 - z`` otherwise.  When ``c - a - b`` is an
        integer the logarithmic form of the transformation is used.  If the
        transformation would cancel more than four digits (large ``a, b``)
        "auto" falls back to the power series.

    Returns
    -------
    float or ndarray
    """
    control = control or DEFAULT_CONTROL
    a, b, c = float(a), float(b), float(c)
    if not c > 0:
        raise DomainError("hyp2f1 requires c > 0")
    za = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any((za < 0) | (za > 1)) or np.any(np.isnan(za)):
        raise DomainError("hyp2f1 requires z in [0, 1]")
    if method not in ("auto", "direct", "transform"):
        raise DomainError(f"unknown method {method!r}")
    s = c - a - b
    if np.any(za == 1.0) and not s > 0:
        raise DomainError("hyp2f1 at z = 1 requires c - a - b > 0")
    if s < 0:
        # Euler transformation makes the excess positive
        with np.errstate(divide="ignore"):
            scale = (1.0 - za) ** s
        inner = hyp2f1(c - a, c - b, c, za, control, method)
        return _scalar_or_array(scale * inner, z)
    out = np.empty_like(za)
    if method == "direct":
        if np.any(za == 1.0):
            raise DomainError("direct series cannot be evaluated at z = 1")
        out[:] = _hyp2f1_direct(a, b, c, za, control)
    elif method == "transform":
        out[:] = _hyp2f1_transform(a, b, c, 1.0 - za, control)[0]
    else:
        low = za <= 0.5
        if low.any():
            out[low] = _hyp2f1_direct(a, b, c, za[low], control)
        high = ~low
        if high.any():
            val, mag = _hyp2f1_transform(a, b, c, 1.0 - za[high], control)
            with np.errstate(divide="ignore", invalid="ignore"):
                bad = ~(mag <= _MAX_CANCELLATION * np.abs(val)) & (za[high] < 1.0)
            if bad.any():
                # ill-conditioned transformation (large a, b): sum directly
                val[bad] = _hyp2f1_direct(a, b, c, za[high][bad], control)
            out[high] = val
    return _scalar_or_array(out, z)


def hyp1f2(a, b, c, x, control: SeriesControl | None = None):
    """Generalized hypergeometric function ``1F2(a; b, c; x)``.

    Terms and partial sums are carried in double-double arithmetic, which
    absorbs the cancellation of the alternating series for negative ``x``.
    Arguments with ``|x| > X_MAX_1F2``
    raise :class:`PrecisionLossError`; callers are expected to fall back to
    quadrature there.
    """
    control = control or DEFAULT_CONTROL
    if not (b > 0 and c > 0):
        raise DomainError("hyp1f2 requires b, c > 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.isnan(xa)):
        raise DomainError("hyp1f2 argument is NaN")
    if np.any(np.abs(xa) > X_MAX_1F2):
        raise PrecisionLossError(
            f"|x| exceeds {X_MAX_1F2}; series would lose too many digits"
        )
    out = _series_1f2_dd(float(a), float(b), float(c), xa, control)
    return _scalar_or_array(out, x)
