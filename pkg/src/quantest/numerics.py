"""Gaussian special functions used by every likelihood, EM and Fisher formula.

All routines broadcast over numpy arrays.  Cell probabilities are handled in
log space so that cells many standard deviations away from the mean keep
full relative precision.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import EmptyCell, NonFinite, NotConverged, Saturated

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)

#: erf_inv refuses arguments this close to +-1.
EPS_SAT = 1e-15


class Interval(NamedTuple):
    """Half-open cell ``[lo, up)``; either end may be infinite."""

    lo: float
    up: float


def _check_nan(x, name="x"):
    if np.any(np.isnan(x)):
        raise NonFinite(f"{name} contains NaN")


def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute over the real line."""
    x = np.asarray(x, dtype=float)
    _check_nan(x)
    # ndtr underflows to zero below about -37.5; exp(log_ndtr) reaches the subnormals
    with np.errstate(under="ignore"):
        out = np.where(x < -20.0, np.exp(special.log_ndtr(np.minimum(x, 0.0))), special.ndtr(x))
    return out if out.ndim else float(out)


def std_normal_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - LOG_SQRT2PI


def erf_inv(p):
    """Inverse error function on the open interval (-1, 1).

    Raises :class:`Saturated` when ``|p| >= 1 - EPS_SAT``; whether to clamp is
    the caller's decision.
    """
    p = np.asarray(p, dtype=float)
    _check_nan(p, "p")
    if np.any(np.abs(p) >= 1.0 - EPS_SAT):
        raise Saturated(f"erf_inv argument saturated: max |p| = {float(np.max(np.abs(p)))!r}")
    out = special.erfinv(p)
    return out if out.ndim else float(out)


def _standardize(lo, up, mean, sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    lo = np.asarray(lo, dtype=float)
    up = np.asarray(up, dtype=float)
    mean = np.asarray(mean, dtype=float)
    _check_nan(mean, "mean")
    return (lo - mean) / sigma, (up - mean) / sigma


def _log_prob_standard(a, b):
    """log(Phi(b) - Phi(a)) for standardized bounds a < b.

    The cell is reflected into the lower half-line first, so the ratio
    Phi(a)/Phi(b) is computed from two log-CDF values that never lose
    precision in the tails.
    """
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    lb = special.log_ndtr(b2)
    la = special.log_ndtr(a2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log(-np.expm1(la - lb))
    # both ends beyond the representable tail: the cell is empty
    return np.where(np.isneginf(lb) | (a2 >= b2), -np.inf, out)


def log_cell_prob(lo, up, mean, sigma, strict: bool = True):
    """``log P(lo <= mean + sigma*Z < up)`` for Z standard normal.

    With ``strict=False`` a vanishing probability is returned as ``-inf``
    instead of raising :class:`EmptyCell`.
    """
    a, b = _standardize(lo, up, mean, sigma)
    out = _log_prob_standard(a, b)
    if strict and np.any(~np.isfinite(out)):
        raise EmptyCell("cell probability underflows to zero")
    return out if out.ndim else float(out)


def cell_conditional_moments(lo, up, mean, sigma, strict: bool = True):
    """First and second moments of the noise given the observed cell.

    With ``y = mean + eta`` and ``eta ~ N(0, sigma^2)``, returns
    ``m1 = E[eta | lo <= y < up]`` and ``m2 = E[eta^2 | lo <= y < up]``.
    With ``strict=False`` empty cells yield NaN moments instead of raising.
    """
    a, b = _standardize(lo, up, mean, sigma)
    sigma = np.asarray(sigma, dtype=float)
    logp = _log_prob_standard(a, b)
    if strict and np.any(~np.isfinite(logp)):
        raise EmptyCell("cell probability underflows to zero")
    # Mills-type ratios phi(z)/P; an infinite bound contributes nothing.
    fa, fb = np.isfinite(a), np.isfinite(b)
    a0, b0 = np.where(fa, a, 0.0), np.where(fb, b, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        ra = np.where(fa, np.exp(std_normal_logpdf(a0) - logp), 0.0)
        rb = np.where(fb, np.exp(std_normal_logpdf(b0) - logp), 0.0)
        m1 = sigma * (ra - rb)
        m2 = sigma * sigma * (1.0 + a0 * ra - b0 * rb)
    if m1.ndim == 0:
        return float(m1), float(m2)
    return m1, m2


def golden_section_max(f, lo: float, hi: float, xtol: float = 1e-10, max_iter: int = 500):
    """Maximize a unimodal scalar function on ``[lo, hi]``.

    Returns ``(x_best, f_best)``.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * (1.0 + abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    else:
        raise NotConverged(f"golden-section search did not reach xtol={xtol} in {max_iter} steps")
    if fc > fd:
        return c, fc
    return d, fd
