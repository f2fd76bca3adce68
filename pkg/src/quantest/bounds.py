"""Fisher information, Cramer-Rao bounds and unquantized baselines."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import special

from .errors import DimensionMismatch, QuantestInputError, SingularFisher, SingularFisherWarning
from .models import SystemModel
from .numerics import golden_section_max, log_cell_prob, std_normal_logpdf
from .quantizer import Quantizer, rho_q

RCOND = 1e-12
_CHUNK = 1 << 20  # outputs x cells evaluated per block


@dataclass
class FisherMatrix:
    J: np.ndarray
    theta_at: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        if J.shape[0] != J.shape[1]:
            raise DimensionMismatch("Fisher matrix must be square")
        self.J = 0.5 * (J + J.T)
        self.theta_at = np.atleast_1d(np.asarray(self.theta_at, dtype=float))

    @property
    def dim(self) -> int:
        return self.J.shape[0]


@dataclass
class Crb:
    """Inverse Fisher information.  ``singular`` marks a pseudo-inverse."""

    cov: np.ndarray
    singular: bool = False

    @property
    def bounds(self) -> np.ndarray:
        """Per-parameter variance bounds (diagonal of :attr:`cov`)."""
        return np.diag(self.cov).copy()

    def __array__(self, dtype=None, copy=None):
        return self.cov if dtype is None else self.cov.astype(dtype)


def _fisher_weights(f: np.ndarray, quantizer: Quantizer, sigma: float) -> np.ndarray:
    """Per-output weights ``sum_r (phi(b) - phi(a))^2 / (sigma^2 P_r)``.

    ``a, b`` are the standardized bounds of cell ``r``; empty cells drop out.
    """
    lo, up = quantizer.lower, quantizer.upper
    K = lo.size
    w = np.empty(f.size)
    step = max(1, _CHUNK // K)
    for s in range(0, f.size, step):
        fi = f[s : s + step, None]
        logp = log_cell_prob(lo[None, :], up[None, :], fi, sigma, strict=False)
        a = (lo[None, :] - fi) / sigma
        b = (up[None, :] - fi) / sigma
        la = np.where(np.isfinite(a), std_normal_logpdf(np.where(np.isfinite(a), a, 0.0)), -np.inf)
        lb = np.where(np.isfinite(b), std_normal_logpdf(np.where(np.isfinite(b), b, 0.0)), -np.inf)
        hi = np.maximum(la, lb)
        lo_ = np.minimum(la, lb)
        with np.errstate(divide="ignore", invalid="ignore"):
            logdiff = hi + np.log1p(-np.exp(lo_ - hi))
            terms = np.exp(2.0 * logdiff - logp)
        terms[~np.isfinite(logp) | ~np.isfinite(terms)] = 0.0
        w[s : s + step] = terms.sum(axis=1)
    return w / sigma**2


def fisher_pilot(model: SystemModel, quantizer: Quantizer, theta, sigma: float) -> FisherMatrix:
    """Exact Fisher information of quantized observations with known input."""
    if not sigma > 0:
        raise QuantestInputError("sigma must be positive")
    theta = np.asarray(theta, dtype=float)
    f = model.eval(theta)
    G = model.jacobian(theta)
    if G.shape != (model.output_dim, model.param_dim):
        raise DimensionMismatch("model Jacobian has the wrong shape")
    w = _fisher_weights(f, quantizer, sigma)
    J = G.T @ (w[:, None] * G)
    return FisherMatrix(J, theta, {"kind": "pilot", "sigma": sigma, "cells": quantizer.n_cells})


def fisher_low_snr(model: SystemModel, quantizer: Quantizer, theta, sigma: float) -> FisherMatrix:
    """Low-SNR approximation ``rho_Q / sigma^2 * sum_i grad f_i grad f_i^T``."""
    G = model.jacobian(theta)
    J = rho_q(quantizer, sigma) / sigma**2 * (G.T @ G)
    return FisherMatrix(J, theta, {"kind": "low_snr", "sigma": sigma})


def fisher_unquantized(model: SystemModel, theta, sigma: float) -> FisherMatrix:
    G = model.jacobian(theta)
    return FisherMatrix(G.T @ G / sigma**2, theta, {"kind": "unquantized", "sigma": sigma})


Component = tuple  # (weight, mean function of theta)


def _marginal_probs(quantizer, components, theta, sigma_fn):
    s = sigma_fn(theta)
    p = np.zeros(quantizer.n_cells)
    for weight, mean_fn in components:
        p += weight * np.exp(log_cell_prob(quantizer.lower, quantizer.upper, mean_fn(theta), s, strict=False))
    return p


def fisher_marginal_discrete(
    quantizer: Quantizer,
    components: Sequence[Component],
    theta,
    sigma: Union[float, Callable],
    N: int,
) -> FisherMatrix:
    """Fisher information of ``N`` i.i.d. outputs drawn from a finite input mixture.

    Each sample has ``p(r | theta) = sum_x w_x P(cell r; mean_x(theta), sigma)``.
    ``sigma`` may itself be a function of ``theta`` (noise level estimated
    jointly).  Derivatives of ``p`` are central differences with step
    ``1e-5 (1 + |theta_p|)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sigma_fn = sigma if callable(sigma) else (lambda t, s=float(sigma): s)
    p = _marginal_probs(quantizer, components, theta, sigma_fn)
    grads = np.empty((theta.size, p.size))
    for k in range(theta.size):
        h = 1e-5 * (1.0 + abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        grads[k] = (
            _marginal_probs(quantizer, components, theta + e, sigma_fn)
            - _marginal_probs(quantizer, components, theta - e, sigma_fn)
        ) / (2 * h)
    live = p > 0
    J = N * (grads[:, live] / p[live]) @ grads[:, live].T
    return FisherMatrix(J, theta, {"kind": "marginal", "N": N})


def blind_fisher(quantizer: Quantizer, h: float, sigma: float, N: int) -> FisherMatrix:
    """Fisher information for ``(h, sigma)`` of ``y = h x + eta`` with equiprobable ``x = +-1``."""
    comps = ((0.5, lambda t: t[0]), (0.5, lambda t: -t[0]))
    return fisher_marginal_discrete(quantizer, comps, [h, sigma], lambda t: t[1], N)


def crb(J) -> Crb:
    """Inverse of a Fisher matrix.

    The conditioning test runs on the diagonally normalized matrix so that
    parameters with very different units do not look singular.  Below
    ``RCOND`` a pseudo-inverse is returned together with a
    :class:`SingularFisherWarning`.
    """
    J = J.J if isinstance(J, FisherMatrix) else np.atleast_2d(np.asarray(J, dtype=float))
    d = np.diag(J)
    singular = bool(np.any(d <= 0))
    if not singular:
        s = 1.0 / np.sqrt(d)
        ev = np.linalg.eigvalsh(J * np.outer(s, s))
        singular = ev[0] <= RCOND * ev[-1]
    if singular:
        warnings.warn("Fisher information is singular; returning pseudo-inverse", SingularFisherWarning, stacklevel=2)
        return Crb(np.linalg.pinv(J, rcond=RCOND, hermitian=True), True)
    cov = (np.linalg.inv(J * np.outer(s, s))) * np.outer(s, s)
    return Crb(0.5 * (cov + cov.T), False)


def siso_normalized_fisher(snr):
    """``h^2 J(h) / N`` for a one-bit, one-tap channel at linear SNR ``h^2/sigma^2``.

    Equals ``snr * exp(-snr) / (2 pi Phi(sqrt snr) Phi(-sqrt snr))``.
    """
    snr = np.asarray(snr, dtype=float)
    r = np.sqrt(snr)
    log = np.log(snr) - snr - math.log(2 * math.pi) - special.log_ndtr(r) - special.log_ndtr(-r)
    out = np.exp(log)
    return out if out.ndim else float(out)


def siso_optimal_snr():
    """SNR maximizing :func:`siso_normalized_fisher`; returns ``(linear, dB)``."""
    x, _ = golden_section_max(lambda t: siso_normalized_fisher(10 ** (t / 10)), -10.0, 15.0, xtol=1e-12)
    return 10 ** (x / 10), x


def unquantized_mse_linear(X, sigma: float, prior=None) -> float:
    """Total MSE of the (MAP) estimator from unquantized Gaussian observations."""
    X = np.asarray(X, dtype=float)
    G = X.T @ X
    if prior is not None and prior.kind == "gaussian":
        A = G + sigma**2 * prior.precision(G.shape[0])
    else:
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise SingularFisher("pilot matrix is rank deficient under a flat prior")
        A = G
    return float(sigma**2 * np.trace(np.linalg.inv(A)))
