"""Likelihood, score, closed-form one-bit ML estimators and EM.

Quantized observations are passed around as integer cell indices into a
:class:`~quantest.quantizer.Quantizer`; one-bit closed forms take the usual
+-1 sign vectors instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import (
    DegeneratePilot,
    DimensionMismatch,
    InsufficientResolution,
    QuantestInputError,
)
from .models import SystemModel
from .numerics import cell_conditional_moments, erf_inv, log_cell_prob, std_normal_logpdf
from .quantizer import Quantizer


@dataclass(frozen=True)
class Prior:
    """Parameter prior: flat (``kind="uniform"``) or zero-mean Gaussian."""

    kind: str = "uniform"
    cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise QuantestInputError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian":
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise QuantestInputError("prior covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise QuantestInputError("prior covariance must be positive definite") from None
            object.__setattr__(self, "cov", cov)

    @classmethod
    def uniform(cls) -> "Prior":
        return cls("uniform")

    @classmethod
    def gaussian(cls, cov) -> "Prior":
        return cls("gaussian", cov)

    def precision(self, dim: int) -> np.ndarray:
        if self.kind == "uniform":
            return np.zeros((dim, dim))
        if self.cov.shape[0] != dim:
            raise DimensionMismatch(f"prior covariance is {self.cov.shape[0]}-dimensional, model has {dim}")
        return np.linalg.inv(self.cov)

    def log_density(self, theta) -> float:
        """Log prior density up to an additive constant."""
        if self.kind == "uniform":
            return 0.0
        theta = np.asarray(theta, dtype=float)
        return -0.5 * float(theta @ np.linalg.solve(self.cov, theta))

    def grad_log(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "uniform":
            return np.zeros_like(theta)
        return -np.linalg.solve(self.cov, theta)


_FLAT = Prior()


@dataclass
class EmConfig:
    max_iters: int = 500
    tol: float = 1e-8
    likelihood_check: bool = True
    newton_steps: int = 8
    accelerate: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0:
            raise QuantestInputError("EmConfig needs max_iters >= 1 and tol > 0")


@dataclass
class EstimateTrace:
    """EM result.  ``loglik[0]`` is the objective at the starting point,
    ``loglik[l]`` after iteration ``l``."""

    theta_hat: np.ndarray
    iterations: int
    loglik: np.ndarray
    converged: bool
    extra: dict = field(default_factory=dict)

    @property
    def loglik_per_iter(self) -> np.ndarray:
        return self.loglik


def _cells(model: SystemModel, quantizer: Quantizer, r):
    r = np.asarray(r)
    if r.shape != (model.output_dim,):
        raise DimensionMismatch(f"expected {model.output_dim} observations, got shape {r.shape}")
    return quantizer.lower[r], quantizer.upper[r]


def log_likelihood(model: SystemModel, quantizer: Quantizer, r, theta, sigma: float, prior: Prior = _FLAT) -> float:
    """Log posterior (log likelihood plus log prior, up to a constant)."""
    lo, up = _cells(model, quantizer, r)
    f = model.eval(theta)
    return float(np.sum(log_cell_prob(lo, up, f, sigma))) + prior.log_density(theta)


def kkt_residual(model: SystemModel, quantizer: Quantizer, r, theta, sigma: float, prior: Prior = _FLAT) -> np.ndarray:
    """Gradient of :func:`log_likelihood` with respect to ``theta``.

    Each output contributes ``E[eta_i | cell_i] / sigma^2`` times its
    parameter gradient; the stationary condition of the MAP problem is a
    zero residual.
    """
    lo, up = _cells(model, quantizer, r)
    f = model.eval(theta)
    m1, _ = cell_conditional_moments(lo, up, f, sigma)
    return model.jacobian(theta).T @ (m1 / sigma**2) + prior.grad_log(theta)


def _pm1(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(np.abs(v) == 1):
        raise QuantestInputError(f"{name} must contain only +-1 entries")
    return v


def ml_siso_one_bit(r, x, sigma: float) -> float:
    """Closed-form ML gain of a one-tap channel from sign observations."""
    r = _pm1(r, "r").ravel()
    x = _pm1(x, "x").ravel()
    if r.size != x.size or r.size == 0:
        raise DimensionMismatch("r and x must have the same nonzero length")
    return math.sqrt(2.0) * sigma * erf_inv(float(r @ x) / r.size)


def ml_siso_two_tap(r, x, sigma: float):
    """Closed-form ML taps ``(h0, h1)`` of ``sign(h0 x_i + h1 x_{i-1} + eta_i)``.

    The first output is ignored.  Sum and difference channels are estimated
    from the pilot pairs that excite them, normalized by ``N-1 +- sum
    x_i x_{i-1}`` (the number of such pairs, times two).
    """
    r = _pm1(r, "r").ravel()
    x = _pm1(x, "x").ravel()
    if r.size != x.size or r.size < 2:
        raise DimensionMismatch("r and x must have the same length >= 2")
    N = r.size
    cur, prev, ri = x[1:], x[:-1], r[1:]
    s = float(cur @ prev)
    d_sum, d_diff = N - 1 + s, N - 1 - s
    if d_sum == 0:
        raise DegeneratePilot("pilot never repeats a symbol: sum channel h0+h1 unobservable")
    if d_diff == 0:
        raise DegeneratePilot("pilot never alternates: difference channel h0-h1 unobservable")
    a = erf_inv(float((cur + prev) @ ri) / d_sum)
    b = erf_inv(float((cur - prev) @ ri) / d_diff)
    c = math.sqrt(sigma**2 / 2.0)
    return c * (a + b), c * (a - b)


def ml_mimo_2x2_one_bit(R, X, sigma: float) -> np.ndarray:
    """Closed-form ML estimate of a real 2x2 channel from sign outputs.

    ``R`` holds the received sign vectors as rows, ``X`` the two transmit
    pilot vectors as rows.  Returns ``H`` with ``H[i, j]`` the gain from
    transmitter ``j`` to receiver ``i``.
    """
    R = _pm1(R, "R")
    X = _pm1(X, "X")
    if R.shape != X.shape or R.shape[0] != 2:
        raise DimensionMismatch("R and X must both be 2 x N")
    N = X.shape[1]
    x1, x2 = X
    c = float(x1 @ x2)
    if abs(c) == N:
        raise DegeneratePilot("pilot vectors are collinear")
    scale = math.sqrt(sigma**2 / 2.0)
    H = np.empty((2, 2))
    for i in range(2):
        a = erf_inv(float((x1 + x2) @ R[i]) / (N + c))
        for j, (xj, xo) in enumerate(((x1, x2), (x2, x1))):
            H[i, j] = scale * (a + erf_inv(float((xj - xo) @ R[i]) / (N - c)))
    return H


class _Stopper:
    """Stops when the projected distance to the fixed point is below tol.

    EM converges linearly, so the last step divided by ``1 - rate`` bounds
    the remaining distance much better than the raw step.
    """

    def __init__(self, tol: float):
        self.tol = tol
        self.prev = None

    def done(self, step: float) -> bool:
        rate = 0.0
        if self.prev:
            rate = min(step / self.prev, 0.999)
        self.prev = step
        return step <= self.tol * (1.0 - rate)


def _check_monotone(loglik, cfg: EmConfig, label: str):
    if cfg.likelihood_check and len(loglik) > 1:
        drop = loglik[-2] - loglik[-1]
        if drop > 1e-9 * (1.0 + abs(loglik[-2])):
            warnings.warn(f"{label}: likelihood decreased by {drop:.3g}", RuntimeWarning, stacklevel=3)


def _fd_hessian(grad_fn, theta, rel_step=1e-5):
    P = theta.size
    H = np.empty((P, P))
    for p in range(P):
        h = rel_step * (1.0 + abs(theta[p]))
        e = np.zeros(P)
        e[p] = h
        H[:, p] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _neg_definite_factor(H):
    """Cholesky factor of ``-H``, shifting the diagonal until it is positive definite.

    The shift is proportional to ``|diag H|`` because parameters may carry
    very different units.
    """
    shift, scale = 0.0, np.abs(np.diag(H)) + 1e-12
    for _ in range(40):
        try:
            return linalg.cho_factor(-(H - shift * np.diag(scale)))
        except linalg.LinAlgError:
            shift = 1e-6 if shift == 0 else shift * 10
    return None


def _newton_mstep(model, y_hat, sigma, prior, theta, steps, xtol):
    """Damped Newton ascent on ``g(t) = -|y_hat - f(t)|^2 / 2 sigma^2 + log p(t)``."""

    def g(t):
        res = y_hat - model.eval(t)
        return -0.5 * float(res @ res) / sigma**2 + prior.log_density(t)

    def grad(t):
        return model.jacobian(t).T @ (y_hat - model.eval(t)) / sigma**2 + prior.grad_log(t)

    theta = theta.copy()
    g0 = g(theta)
    cf = None
    for _ in range(steps):
        gr = grad(theta)
        if cf is None:
            # One Hessian per M-step; later steps reuse it (chord iterations).
            cf = _neg_definite_factor(_fd_hessian(grad, theta))
            if cf is None:
                break
        d = linalg.cho_solve(cf, gr)
        slope = float(gr @ d)
        t = 1.0
        for _ in range(40):
            cand = theta + t * d
            gc = g(cand)
            if gc >= g0 + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        theta, g0 = cand, gc
        if np.max(np.abs(t * d)) < xtol:
            break
    return theta


def em_pilot(
    model: SystemModel,
    quantizer: Quantizer,
    r,
    sigma: float,
    prior: Prior = _FLAT,
    theta0=None,
    cfg: Optional[EmConfig] = None,
) -> EstimateTrace:
    """EM for the MAP estimate with known input.

    E-step: pseudo-observations ``y_hat = f(theta_l) + E[eta | cell, theta_l]``.
    M-step: maximize ``-|y_hat - f(theta)|^2 / (2 sigma^2) + log p(theta)``;
    regularized least squares for linear models, damped Newton otherwise.
    """
    cfg = cfg or EmConfig()
    lo, up = _cells(model, quantizer, r)
    theta = np.zeros(model.param_dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if theta.shape != (model.param_dim,) or not np.all(np.isfinite(theta)):
        raise QuantestInputError("theta0 must be a finite vector of the model's parameter dimension")

    if model.linear:
        X = model.X
        A = X.T @ X + sigma**2 * prior.precision(model.param_dim)
        try:
            cf = linalg.cho_factor(A)
        except linalg.LinAlgError:
            raise DegeneratePilot("X^T X is singular under a flat prior") from None

    stop = _Stopper(cfg.tol)
    f = model.eval(theta)
    loglik = [float(np.sum(log_cell_prob(lo, up, f, sigma))) + prior.log_density(theta)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        m1, _ = cell_conditional_moments(lo, up, f, sigma)
        y_hat = f + m1
        if model.linear:
            new = linalg.cho_solve(cf, X.T @ y_hat)
        else:
            new = _newton_mstep(model, y_hat, sigma, prior, theta, cfg.newton_steps, 0.01 * cfg.tol)
        step = float(np.max(np.abs(new - theta))) if new.size else 0.0
        theta = new
        f = model.eval(theta)
        loglik.append(float(np.sum(log_cell_prob(lo, up, f, sigma))) + prior.log_density(theta))
        _check_monotone(loglik, cfg, "em_pilot")
        if stop.done(step):
            converged = True
            break
    return EstimateTrace(theta, it, np.array(loglik), converged)


# ---------------------------------------------------------------------------
# Blind SISO: y = h x + eta with x = +-1 equiprobable, theta = (h, sigma)
# ---------------------------------------------------------------------------


def _blind_counts(r, quantizer: Quantizer):
    r = np.asarray(r).ravel()
    if r.size == 0:
        raise DimensionMismatch("need at least one observation")
    counts = np.bincount(r, minlength=quantizer.n_cells)
    used = counts > 0
    return counts[used].astype(float), quantizer.lower[used], quantizer.upper[used]


def _blind_terms(lo, up, h, sigma):
    lp = log_cell_prob(lo, up, h, sigma, strict=False)
    lm = log_cell_prob(lo, up, -h, sigma, strict=False)
    ls = np.logaddexp(lp, lm)
    return lp, lm, ls


def blind_log_likelihood(r, quantizer: Quantizer, h: float, sigma: float) -> float:
    """``sum_i log( (P(r_i | +h) + P(r_i | -h)) / 2 )`` for equiprobable +-1 symbols."""
    n, lo, up = _blind_counts(r, quantizer)
    _, _, ls = _blind_terms(lo, up, h, sigma)
    return float(n @ ls) - n.sum() * math.log(2.0)


def blind_score(r, quantizer: Quantizer, h: float, sigma: float) -> np.ndarray:
    """Gradient of :func:`blind_log_likelihood` with respect to ``(h, sigma)``."""
    n, lo, up = _blind_counts(r, quantizer)
    _, _, ls = _blind_terms(lo, up, h, sigma)
    dh = np.zeros_like(ls)
    ds = np.zeros_like(ls)
    for x in (1.0, -1.0):
        for bound, sgn in ((up, 1.0), (lo, -1.0)):
            fin = np.isfinite(bound)
            z = np.where(fin, (bound - x * h) / sigma, 0.0)
            w = np.where(fin, np.exp(std_normal_logpdf(z) - ls), 0.0)
            # d/dh Phi(z) = -x phi(z)/sigma ; d/dsigma Phi(z) = -z phi(z)/sigma
            dh += sgn * (-x) * w / sigma
            ds += sgn * (-z) * w / sigma
    return np.array([n @ dh, n @ ds])


def _blind_loglik_counts(n, lo, up, h, s) -> float:
    _, _, ls = _blind_terms(lo, up, h, s)
    return float(n @ ls) - n.sum() * math.log(2.0)


def _blind_em_map(n, lo, up, h, s):
    """One EM update of ``(h, sigma)`` from cell counts ``n``.

    Each cell's posterior over ``x = +-1`` weights the truncated-Gaussian
    moments of the noise: ``h' = mean E[x y | r]`` and
    ``sigma'^2 = mean E[(y - x h)^2 | r]``.
    """
    lp, lm, ls = _blind_terms(lo, up, h, s)
    exy = np.full_like(ls, h)
    eta2 = np.zeros_like(ls)
    for x, lx in ((1.0, lp), (-1.0, lm)):
        w = np.exp(lx - ls)
        m1, m2 = cell_conditional_moments(lo, up, x * h, s, strict=False)
        ok = w > 0
        exy += np.where(ok, w * x * np.where(ok, m1, 0.0), 0.0)
        eta2 += np.where(ok, w * np.where(ok, m2, 0.0), 0.0)
    N = n.sum()
    return np.array([float(n @ exy) / N, math.sqrt(float(n @ eta2) / N)])


def em_blind_siso(r, quantizer: Quantizer, sigma0: float, h0: float, cfg: Optional[EmConfig] = None) -> EstimateTrace:
    """Blind EM for gain and noise level of ``y = h x + eta`` with unknown +-1 data.

    ``theta_hat = [h, sigma]`` with the sign ambiguity resolved to ``h >= 0``.
    With ``cfg.accelerate`` each iteration is a SQUAREM cycle (two EM maps,
    a squared extrapolation and a stabilizing EM map), falling back to the
    plain double EM step whenever the extrapolation does not improve the
    likelihood.  Fixed points are the same; only the speed changes.
    """
    cfg = cfg or EmConfig()
    if quantizer.n_cells < 4:
        raise InsufficientResolution(
            "blind gain estimation needs at least 2 bits: a sign output carries no information about h"
        )
    if not sigma0 > 0:
        raise QuantestInputError("sigma0 must be positive")
    n, lo, up = _blind_counts(r, quantizer)
    theta = np.array([float(h0), float(sigma0)])
    stop = _Stopper(cfg.tol)
    loglik = [_blind_loglik_counts(n, lo, up, *theta)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        t1 = _blind_em_map(n, lo, up, *theta)
        r1 = t1 - theta
        if stop.done(float(np.max(np.abs(r1)))):
            theta = t1
            loglik.append(_blind_loglik_counts(n, lo, up, *theta))
            converged = True
            break
        if not cfg.accelerate:
            theta = t1
            loglik.append(_blind_loglik_counts(n, lo, up, *theta))
            _check_monotone(loglik, cfg, "em_blind_siso")
            continue
        t2 = _blind_em_map(n, lo, up, *t1)
        l2 = _blind_loglik_counts(n, lo, up, *t2)
        v = t2 - 2 * t1 + theta
        nv = float(np.linalg.norm(v))
        new, lnew = t2, l2
        if nv > 0:
            alpha = min(-float(np.linalg.norm(r1)) / nv, -1.0)
            ext = theta - 2 * alpha * r1 + alpha * alpha * v
            if ext[1] > 0:
                cand = _blind_em_map(n, lo, up, *ext)
                lc = _blind_loglik_counts(n, lo, up, *cand)
                if lc >= l2:
                    new, lnew = cand, lc
        theta = new
        loglik.append(lnew)
        _check_monotone(loglik, cfg, "em_blind_siso")
    return EstimateTrace(np.array([abs(theta[0]), theta[1]]), it, np.array(loglik), converged)
