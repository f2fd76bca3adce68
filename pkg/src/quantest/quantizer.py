"""Scalar quantizers, the low-SNR Fisher loss factor, and quantizer design."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidQuantizer, NonFinite, NotConverged
from .numerics import Interval, golden_section_max, log_cell_prob, std_normal_logpdf


@dataclass(frozen=True, eq=False)
class Quantizer:
    """Partition of the real line into ``K`` half-open cells.

    Cell ``k`` is ``[t_k, t_{k+1})`` with ``t_0 = -inf`` and ``t_K = +inf``.
    Representatives only label cells; inference always uses cell bounds.
    """

    thresholds: np.ndarray
    representatives: np.ndarray
    bits: Optional[int] = None
    delta: Optional[float] = None
    _edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float).ravel()
        reps = np.asarray(self.representatives, dtype=float).ravel()
        if reps.size < 2:
            raise InvalidQuantizer("a quantizer needs at least two cells")
        if t.size != reps.size - 1:
            raise InvalidQuantizer(
                f"{t.size} thresholds do not fit {reps.size} representatives (need K-1)"
            )
        if not np.all(np.isfinite(t)):
            raise InvalidQuantizer("thresholds must be finite")
        if np.any(np.diff(t) <= 0):
            raise InvalidQuantizer("thresholds must be strictly increasing")
        t.setflags(write=False)
        reps.setflags(write=False)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "representatives", reps)
        edges = np.concatenate([[-np.inf], t, [np.inf]])
        edges.setflags(write=False)
        object.__setattr__(self, "_edges", edges)

    @property
    def n_cells(self) -> int:
        return self.representatives.size

    @property
    def lower(self) -> np.ndarray:
        return self._edges[:-1]

    @property
    def upper(self) -> np.ndarray:
        return self._edges[1:]

    def cell(self, index) -> Interval:
        index = np.asarray(index)
        lo, up = self.lower[index], self.upper[index]
        if index.ndim == 0:
            return Interval(float(lo), float(up))
        return Interval(lo, up)

    def index(self, y) -> np.ndarray:
        """Cell index of each sample (lower-inclusive boundaries)."""
        y = np.asarray(y, dtype=float)
        if np.any(np.isnan(y)):
            raise NonFinite("cannot quantize NaN")
        return np.searchsorted(self.thresholds, y, side="right")

    def scaled(self, c: float) -> "Quantizer":
        return Quantizer(
            self.thresholds * c,
            self.representatives * c,
            bits=self.bits,
            delta=None if self.delta is None else self.delta * c,
        )

    def to_dict(self) -> dict:
        d = {
            "thresholds": self.thresholds.tolist(),
            "representatives": self.representatives.tolist(),
        }
        if self.bits is not None:
            d["bits"] = int(self.bits)
        if self.delta is not None:
            d["delta"] = float(self.delta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Quantizer":
        try:
            return cls(
                d["thresholds"],
                d["representatives"],
                bits=d.get("bits"),
                delta=d.get("delta"),
            )
        except KeyError as exc:
            raise InvalidQuantizer(f"quantizer record lacks field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Quantizer":
        return cls.from_dict(json.loads(text))


def make_midriser(bits: int, delta: float) -> Quantizer:
    """Uniform symmetric mid-riser quantizer with ``2**bits`` levels.

    Representatives are ``(k - 2**b/2 - 1/2) * delta`` for ``k = 1..2**b``;
    thresholds sit halfway between neighbours, so 0 is always a threshold.
    """
    if not isinstance(bits, (int, np.integer)) or bits < 1:
        raise InvalidQuantizer(f"bit count must be a positive integer, got {bits!r}")
    if bits > 8:
        raise InvalidQuantizer("at most 8 bits (256 cells) are supported")
    if not delta > 0:
        raise InvalidQuantizer(f"step size must be positive, got {delta!r}")
    K = 2**bits
    k = np.arange(1, K + 1)
    reps = (k - K / 2 - 0.5) * delta
    thresholds = (reps[:-1] + reps[1:]) / 2
    return Quantizer(thresholds, reps, bits=int(bits), delta=float(delta))


def make_custom(thresholds, representatives=None) -> Quantizer:
    """Quantizer with an explicit partition.

    Without representatives, interior cells get their midpoints and the two
    unbounded cells sit one mean gap beyond the outermost thresholds.
    """
    t = np.asarray(thresholds, dtype=float).ravel()
    if representatives is None:
        if t.size == 0:
            raise InvalidQuantizer("need at least one threshold")
        if np.any(np.diff(t) <= 0):
            raise InvalidQuantizer("thresholds must be strictly increasing")
        gap = float(np.mean(np.diff(t))) if t.size > 1 else 1.0
        representatives = np.concatenate([[t[0] - gap / 2], (t[:-1] + t[1:]) / 2, [t[-1] + gap / 2]])
    return Quantizer(t, representatives)


def sign_quantizer() -> Quantizer:
    return make_midriser(1, 2.0)


def quantize(q: Quantizer, y):
    """Return ``(index, representative, cell)`` for a sample or an array."""
    idx = q.index(y)
    reps = q.representatives[idx]
    cell = q.cell(idx)
    if idx.ndim == 0:
        return int(idx), float(reps), cell
    return idx, reps, cell


def _rho_from_edges(edges: np.ndarray) -> float:
    a, b = edges[:-1], edges[1:]
    logp = log_cell_prob(a, b, 0.0, 1.0)
    pa = np.where(np.isfinite(a), np.exp(std_normal_logpdf(np.where(np.isfinite(a), a, 0.0))), 0.0)
    pb = np.where(np.isfinite(b), np.exp(std_normal_logpdf(np.where(np.isfinite(b), b, 0.0))), 0.0)
    diff = np.abs(pb - pa)
    with np.errstate(divide="ignore"):
        terms = np.exp(2.0 * np.log(diff) - logp)
    return float(np.sum(terms))


def rho_q(q: Quantizer, sigma: float = 1.0) -> float:
    """Low-SNR Fisher information retained by the quantizer, in (0, 1].

    Equals ``sum_cells (phi(u) - phi(l))**2 / (Phi(u) - Phi(l))`` with the
    cell bounds ``l, u`` normalized by ``sigma``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    edges = np.concatenate([[-np.inf], q.thresholds / sigma, [np.inf]])
    return _rho_from_edges(edges)


def _rho_symmetric(pos: np.ndarray) -> float:
    """rho for the symmetric threshold set {0, +-pos} (sigma = 1)."""
    edges = np.concatenate([[-np.inf], -pos[::-1], [0.0], pos, [np.inf]])
    return _rho_from_edges(edges)


def _rho_uniform(bits: int, d: float) -> float:
    K = 2**bits
    t = d * np.arange(-(K // 2 - 1), K // 2)
    return _rho_from_edges(np.concatenate([[-np.inf], t, [np.inf]]))


def _optimize_uniform(bits: int, lo: float = 1e-3, hi: float = 10.0, n_scan: int = 200):
    # Coarse scan first: rho(delta) flattens out for large steps.
    grid = np.linspace(lo, hi, n_scan)
    vals = np.array([_rho_uniform(bits, d) for d in grid])
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_scan - 1)]
    d, r = golden_section_max(lambda d: _rho_uniform(bits, d), a, b, xtol=1e-10)
    return d, r


def _optimize_free(bits: int, tol: float = 1e-9, max_sweeps: int = 2000):
    n = 2 ** (bits - 1) - 1
    if n == 0:
        return np.zeros(0), _rho_symmetric(np.zeros(0))
    d0, _ = _optimize_uniform(bits)
    pos = d0 * np.arange(1, n + 1, dtype=float)
    best = _rho_symmetric(pos)
    for _ in range(max_sweeps):
        moved = 0.0
        for j in range(n):
            left = pos[j - 1] if j > 0 else 0.0
            right = pos[j + 1] if j < n - 1 else pos[j] + 10.0
            eps = 1e-12 * (1.0 + right)

            def f(t, j=j):
                trial = pos.copy()
                trial[j] = t
                return _rho_symmetric(trial)

            t_new, val = golden_section_max(f, left + eps, right - eps, xtol=1e-12)
            if val >= best:
                moved = max(moved, abs(t_new - pos[j]))
                pos[j] = t_new
                best = val
        if moved < tol:
            return pos, best
    raise NotConverged(f"free-mode quantizer search did not settle within {max_sweeps} sweeps")


def optimize_quantizer(bits: int, sigma: float = 1.0, mode: str = "uniform"):
    """Quantizer maximizing the low-SNR loss factor ``rho_q``.

    ``mode="uniform"`` searches the mid-riser step size; ``mode="free"``
    searches symmetric threshold sets containing 0.  The result is scaled by
    ``sigma``.  Returns ``(quantizer, rho)``.
    """
    if not isinstance(bits, (int, np.integer)) or bits < 1:
        raise InvalidQuantizer(f"bit count must be a positive integer, got {bits!r}")
    if mode not in ("uniform", "free"):
        raise ValueError(f"unknown mode {mode!r}")
    if bits == 1:
        q = make_midriser(1, 2.0 * sigma)
        return q, 2.0 / math.pi
    if mode == "uniform":
        d, r = _optimize_uniform(bits)
        return make_midriser(bits, d * sigma), r
    pos, r = _optimize_free(bits)
    t = np.concatenate([-pos[::-1], [0.0], pos]) * sigma
    q = make_custom(t)
    return Quantizer(q.thresholds, q.representatives, bits=bits), r


def fine_quantizer(sigma: float = 1.0, bits: int = 8) -> Quantizer:
    """High-resolution reference quantizer (optimal uniform at ``bits``)."""
    return optimize_quantizer(bits, sigma, "uniform")[0]
