"""Deterministic Monte Carlo sweeps.

Every trial draws from its own Philox stream keyed by ``(seed, trial_index)``,
so results do not depend on worker count or execution order, and all axis
values of a sweep see the same noise realizations (common random numbers).
Per-trial results are reduced in trial order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from . import bounds, estimators, models
from .errors import ConfigError, QuantestNumericalError, SingularFisherWarning
from .gnss import signal as gsignal
from .quantizer import Quantizer, optimize_quantizer

SCENARIOS = ("siso1tap", "siso2tap", "blind", "mimo2x2", "mimoNxN", "gnss")
CSV_FIELDS = ("scenario", "axis", "axis_value", "bits", "snr_db", "mse", "rmse", "crb", "trials", "failures", "seed")
RNG_NAME = "Philox4x64-10 (numpy), SeedSequence([seed, trial_index])"

MIMO2X2_H = ((2.0, 1.5), (0.5, -1.0))
_DEFAULT_H = {"siso1tap": (1.0,), "siso2tap": (1.0, 0.5), "blind": (1.0,)}
_DEFAULT_N = {"siso1tap": 200, "siso2tap": 200, "blind": 1000, "mimo2x2": 64, "mimoNxN": 1000}


def _parse_bits(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "unquantized"):
        return math.inf
    if isinstance(v, float) and math.isinf(v):
        return math.inf
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bit count must be an integer or 'inf', got {v!r}") from None
    if math.isinf(f) and f > 0:
        return math.inf
    b = int(f) if f.is_integer() else 0
    if not 1 <= b <= 8:
        raise ConfigError(f"bit count must be an integer in 1..8 or 'inf', got {v!r}")
    return b


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: a scenario evaluated along an SNR or bit-resolution axis.

    SNR is ``|h|^2 / sigma^2`` for the single-antenna scenarios and
    ``1 / sigma^2`` for MIMO; GNSS uses the scenario's own definition.
    ``snr_unit`` says whether SNR values are given in dB or linear.
    """

    scenario: str
    axis: str
    axis_values: tuple
    trials: int = 100
    seed: int = 0
    estimator: str = "em"
    bits: object = 1
    snr: Optional[float] = None
    snr_unit: str = "db"
    n_pilots: Optional[int] = None
    quantizer_mode: str = "uniform"
    h: Optional[tuple] = None
    n_antennas: int = 4
    prior: Optional[str] = None
    gnss: Optional[gsignal.GnssScenario] = None
    em_tol: float = 1e-8
    em_max_iters: int = 500
    output: Optional[str] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: must be one of {', '.join(SCENARIOS)}, got {self.scenario!r}")
        if self.axis not in ("snr", "bits"):
            raise ConfigError(f"axis: must be 'snr' or 'bits', got {self.axis!r}")
        vals = tuple(self.axis_values) if isinstance(self.axis_values, (list, tuple)) else (self.axis_values,)
        if not vals:
            raise ConfigError("axis_values: must be nonempty")
        if self.axis == "bits":
            vals = tuple(_parse_bits(v) for v in vals)
        else:
            try:
                vals = tuple(float(v) for v in vals)
            except (TypeError, ValueError):
                raise ConfigError("axis_values: SNR values must be numbers") from None
        object.__setattr__(self, "axis_values", vals)
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError(f"trials: must be an integer >= 1, got {self.trials!r}")
        if self.estimator not in ("closed_form", "em"):
            raise ConfigError(f"estimator: must be 'closed_form' or 'em', got {self.estimator!r}")
        if self.snr_unit not in ("db", "linear"):
            raise ConfigError(f"snr_unit: must be 'db' or 'linear', got {self.snr_unit!r}")
        if self.quantizer_mode not in ("uniform", "free"):
            raise ConfigError(f"quantizer_mode: must be 'uniform' or 'free', got {self.quantizer_mode!r}")
        object.__setattr__(self, "bits", _parse_bits(self.bits))
        if self.axis == "bits" and self.snr is None and self.scenario != "gnss":
            raise ConfigError("snr: required when sweeping over bits")
        if self.h is not None:
            object.__setattr__(self, "h", tuple(float(v) for v in np.ravel(self.h)))
        if self.prior not in (None, "uniform", "gaussian"):
            raise ConfigError(f"prior: must be 'uniform' or 'gaussian', got {self.prior!r}")
        if self.scenario == "gnss" and self.gnss is None:
            object.__setattr__(self, "gnss", gsignal.multipath_array_scenario())
        if self.scenario == "gnss" and self.estimator != "em":
            raise ConfigError("estimator: the gnss scenario only supports 'em'")
        if self.scenario == "blind":
            bit_values = self.axis_values if self.axis == "bits" else (self.bits,)
            if any(b == 1 for b in bit_values):
                raise ConfigError("bits: blind estimation needs at least 2 bits")
            if any(math.isinf(b) for b in bit_values):
                raise ConfigError("bits: blind scenario requires a finite quantizer")
        if self.scenario == "gnss" and any(
            math.isinf(b) for b in (self.axis_values if self.axis == "bits" else (self.bits,))
        ):
            raise ConfigError("bits: gnss scenario requires a finite quantizer (use 8 for near-unquantized)")
        if self.estimator == "closed_form":
            if self.scenario not in ("siso1tap", "siso2tap", "mimo2x2"):
                raise ConfigError(f"estimator: no closed form for scenario {self.scenario!r}")
            bit_values = self.axis_values if self.axis == "bits" else (self.bits,)
            if any(b not in (1, math.inf) for b in bit_values):
                raise ConfigError("estimator: closed-form estimators exist only for 1 bit")
        if self.em_tol <= 0 or self.em_max_iters < 1:
            raise ConfigError("em_tol must be > 0 and em_max_iters >= 1")

    @property
    def pilots(self) -> int:
        return self.n_pilots or _DEFAULT_N.get(self.scenario, 0)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
        for req in ("scenario", "axis", "axis_values"):
            if req not in d:
                raise ConfigError(f"{req}: required field missing")
        if isinstance(d.get("gnss"), dict):
            try:
                d["gnss"] = gsignal.GnssScenario.from_dict(d["gnss"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"gnss: {exc}") from None
        if isinstance(d.get("h"), list):
            d["h"] = tuple(np.ravel(d["h"]).tolist())
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class SweepRow:
    scenario: str
    axis: str
    axis_value: object
    bits: object
    snr_db: float
    mse: float
    rmse: float
    crb: float
    trials: int
    failures: int
    seed: int
    stderr: float = field(default=math.nan, repr=False)

    def csv_record(self) -> dict:
        return {k: _fmt(getattr(self, k)) for k in CSV_FIELDS}


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return "%.9g" % v


@dataclass
class TrialResult:
    sq_error: float
    estimate: Optional[np.ndarray]
    failure: Optional[str] = None


# ---------------------------------------------------------------------------
# per-axis-value context
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    bits: object
    snr_lin: float
    sigma: float
    quantizer: Optional[Quantizer]
    truth: Optional[np.ndarray]
    model: object = None
    pilots: Optional[np.ndarray] = None
    prior: estimators.Prior = field(default_factory=estimators.Prior)
    gnss: Optional[gsignal.GnssScenario] = None


def _rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial_index)])))


def _pilot_rng(seed: int) -> np.random.Generator:
    # pilots are fixed per sweep and independent of every trial stream
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2**63])))


def orthogonal_pilots(n_tx: int, N: int) -> np.ndarray:
    """``n_tx x N`` matrix of +-1 rows with orthogonal rows (tiled Hadamard, padded)."""
    size = 1
    while size < n_tx:
        size *= 2
    from scipy.linalg import hadamard

    Hd = hadamard(size)[:n_tx]
    reps = -(-N // size)
    P = np.tile(Hd, (1, reps))[:, :N].astype(float)
    return P


@lru_cache(maxsize=64)
def _quantizer(bits, mode: str) -> Quantizer:
    return optimize_quantizer(int(bits), 1.0, mode)[0]


def _snr_linear(cfg: SweepConfig, axis_value) -> float:
    v = axis_value if cfg.axis == "snr" else cfg.snr
    return float(v) if cfg.snr_unit == "linear" else 10 ** (float(v) / 10)


@lru_cache(maxsize=256)
def _context(cfg: SweepConfig, axis_value) -> _Context:
    bits = axis_value if cfg.axis == "bits" else cfg.bits
    sc = cfg.scenario
    if sc == "gnss":
        scen = cfg.gnss
        if cfg.axis == "snr":
            scen = scen.with_snr(float(axis_value) if cfg.snr_unit == "db" else 10 * math.log10(axis_value))
        elif cfg.snr is not None:
            scen = scen.with_snr(float(cfg.snr) if cfg.snr_unit == "db" else 10 * math.log10(cfg.snr))
        sigma = scen.sigma
        q = _quantizer(bits, cfg.quantizer_mode).scaled(sigma)
        from .gnss.report import default_free

        model = models.GnssModel(scen, default_free(scen))
        return _Context(bits, 10 ** (scen.snr_db / 10), sigma, q, model.theta_true, model, gnss=scen)

    snr = _snr_linear(cfg, axis_value)
    N = cfg.pilots
    prng = _pilot_rng(cfg.seed)
    prior = estimators.Prior()
    if sc in ("siso1tap", "siso2tap", "blind"):
        h = np.array(cfg.h or _DEFAULT_H[sc])
        sigma = float(np.linalg.norm(h)) / math.sqrt(snr)
        if sc == "siso1tap":
            x = prng.choice([-1.0, 1.0], N)
            model = models.build_siso_model(x)
        elif sc == "siso2tap":
            x = prng.choice([-1.0, 1.0], N)
            model = models.build_two_tap_model(x)
        else:
            x, model = None, None
    elif sc == "mimo2x2":
        h = np.array(MIMO2X2_H if cfg.h is None else np.reshape(cfg.h, (2, 2))).ravel(order="F")
        sigma = 1.0 / math.sqrt(snr)
        x = prng.choice([-1.0, 1.0], (2, N))
        model = models.build_mimo_model(x, 2)
    else:  # mimoNxN
        M = cfg.n_antennas
        h = None
        sigma = 1.0 / math.sqrt(snr)
        # unit-norm orthogonal pilot rows, so that X^T X = I
        x = orthogonal_pilots(M, N) / math.sqrt(N)
        model = models.build_mimo_model(x, M)
        if (cfg.prior or "gaussian") == "gaussian":
            prior = estimators.Prior.gaussian(np.eye(M * M))
    if cfg.prior == "gaussian" and sc != "mimoNxN":
        prior = estimators.Prior.gaussian(np.eye(model.param_dim if model is not None else 1))
    q = None if math.isinf(bits) else _quantizer(bits, cfg.quantizer_mode).scaled(sigma)
    return _Context(bits, snr, sigma, q, h, model, x, prior)


def scenario_crb(cfg: SweepConfig, axis_value) -> dict:
    """Bound reported next to the empirical MSE.

    Returns ``total`` (summed over the parameters the MSE is taken over),
    ``per_param`` (diagonal) and ``singular``.  Blind rows cover ``h`` only
    and GNSS rows ``tau1`` in square meters.  For ``mimoNxN`` with its
    Gaussian prior the value is the low-SNR Bayesian bound
    ``tr((rho/sigma^2 X^T X + R^-1)^-1)``, exact when unquantized.
    """
    ctx = _context(cfg, axis_value)
    sc = cfg.scenario
    if sc == "gnss":
        from .gnss.report import gnss_crb_report

        rep = gnss_crb_report(ctx.gnss, ctx.quantizer, ctx.model.free_names)
        return {"total": rep["tau1"] ** 2, "per_param": rep.sqrt_crb**2, "names": rep.names, "singular": False}
    if sc == "blind":
        c = _quiet_crb(bounds.blind_fisher(ctx.quantizer, float(ctx.truth[0]), ctx.sigma, cfg.pilots))
        total = math.inf if c.singular else float(c.cov[0, 0])
        return {"total": total, "per_param": c.bounds, "names": ["h", "sigma"], "singular": c.singular}
    names = [f"theta{k + 1}" for k in range(ctx.model.param_dim)]
    if sc == "mimoNxN":
        rho = 1.0 if ctx.quantizer is None else bounds.rho_q(ctx.quantizer, ctx.sigma)
        X = ctx.model.X
        cov = np.linalg.inv(rho / ctx.sigma**2 * (X.T @ X) + ctx.prior.precision(X.shape[1]))
        return {"total": float(np.trace(cov)), "per_param": np.diag(cov), "names": names, "singular": False}
    if ctx.quantizer is None:
        cov = ctx.sigma**2 * np.linalg.inv(ctx.model.X.T @ ctx.model.X)
        return {"total": float(np.trace(cov)), "per_param": np.diag(cov), "names": names, "singular": False}
    c = _quiet_crb(bounds.fisher_pilot(ctx.model, ctx.quantizer, ctx.truth, ctx.sigma))
    total = math.inf if c.singular else float(np.trace(c.cov))
    return {"total": total, "per_param": c.bounds, "names": names, "singular": c.singular}


def _quiet_crb(F):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularFisherWarning)
        return bounds.crb(F)


def _blind_init(values: np.ndarray):
    """Moment-based start for the +-h mixture: E y^2 = h^2 + s^2, E y^4 = h^4 + 6 h^2 s^2 + 3 s^4."""
    m2 = float(np.mean(values**2))
    m4 = float(np.mean(values**4))
    disc = max((3 * m2 * m2 - m4) / 2, 0.0)
    v = min(max(m2 - math.sqrt(disc), 0.05 * m2), 0.95 * m2)
    return math.sqrt(m2 - v), math.sqrt(v)


def run_trial(cfg: SweepConfig, axis_value, trial_index: int) -> TrialResult:
    """One Monte Carlo draw, its estimate and squared error.

    Estimation failures (saturation, non-convergence, degenerate cells) are
    returned as a recorded failure, never raised.
    """
    ctx = _context(cfg, axis_value)
    rng = _rng(cfg.seed, trial_index)
    em_cfg = estimators.EmConfig(max_iters=cfg.em_max_iters, tol=cfg.em_tol, likelihood_check=False)
    sc = cfg.scenario
    try:
        if sc == "gnss":
            from .gnss.report import estimate_em, simulate

            y = simulate(ctx.gnss, rng)
            r = ctx.quantizer.index(y)
            tr = estimate_em(ctx.gnss, ctx.quantizer, r, ctx.model.free_names)
            if not tr.converged:
                return TrialResult(math.nan, tr.theta_hat, "NotConverged")
            k = ctx.model.free_names.index("tau1")
            err = float(gsignal.C0 * ctx.gnss.chip_duration * (tr.theta_hat[k] - ctx.truth[k]))
            return TrialResult(err * err, tr.theta_hat)

        if sc == "blind":
            h = float(ctx.truth[0])
            x = rng.choice([-1.0, 1.0], cfg.pilots)
            y = h * x + ctx.sigma * rng.standard_normal(cfg.pilots)
            r = ctx.quantizer.index(y)
            h0, s0 = _blind_init(ctx.quantizer.representatives[r])
            tr = estimators.em_blind_siso(r, ctx.quantizer, s0, h0, replace(em_cfg, accelerate=True))
            if not tr.converged:
                return TrialResult(math.nan, tr.theta_hat, "NotConverged")
            return TrialResult(float((tr.theta_hat[0] - h) ** 2), tr.theta_hat)

        truth = ctx.truth if sc != "mimoNxN" else rng.standard_normal(ctx.model.param_dim)
        f = ctx.model.eval(truth)
        y = f + ctx.sigma * rng.standard_normal(f.size)
        if ctx.quantizer is None:
            X = ctx.model.X
            A = X.T @ X + ctx.sigma**2 * ctx.prior.precision(X.shape[1])
            est = np.linalg.solve(A, X.T @ y)
        elif cfg.estimator == "closed_form":
            signs = np.where(y >= 0, 1.0, -1.0)
            if sc == "siso1tap":
                est = np.array([estimators.ml_siso_one_bit(signs, ctx.pilots, ctx.sigma)])
            elif sc == "siso2tap":
                # the first output has no previous symbol and is not used
                est = np.array(estimators.ml_siso_two_tap(np.concatenate([[1.0], signs]), ctx.pilots, ctx.sigma))
            else:
                R = signs.reshape(2, -1, order="F")
                est = estimators.ml_mimo_2x2_one_bit(R, ctx.pilots, ctx.sigma).ravel(order="F")
        else:
            r = ctx.quantizer.index(y)
            tr = estimators.em_pilot(ctx.model, ctx.quantizer, r, ctx.sigma, ctx.prior, cfg=em_cfg)
            if not tr.converged:
                return TrialResult(math.nan, tr.theta_hat, "NotConverged")
            est = tr.theta_hat
        return TrialResult(float(np.sum((est - truth) ** 2)), est)
    except QuantestNumericalError as exc:
        return TrialResult(math.nan, None, type(exc).__name__)


def _work(args):
    cfg, value, start, stop = args
    out = []
    for t in range(start, stop):
        res = run_trial(cfg, value, t)
        out.append((res.sq_error, res.failure))
    return out


def worker_count() -> int:
    env = os.environ.get("QUANTEST_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"QUANTEST_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def _run_trials(cfg: SweepConfig, value, workers: int):
    n = cfg.trials
    if workers <= 1 or n < 2:
        return _work((cfg, value, 0, n))
    chunk = max(1, -(-n // (4 * workers)))
    jobs = [(cfg, value, s, min(s + chunk, n)) for s in range(0, n, chunk)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_work, jobs))  # map preserves job order
    return [r for part in parts for r in part]


def run_sweep(cfg: SweepConfig, workers: Optional[int] = None) -> list:
    """Run every axis value and return one :class:`SweepRow` per value, in axis order."""
    workers = worker_count() if workers is None else max(1, workers)
    rows = []
    for value in cfg.axis_values:
        ctx = _context(cfg, value)
        results = _run_trials(cfg, value, workers)
        errs = np.array([e for e, f in results if f is None], dtype=float)
        failures = sum(1 for _, f in results if f is not None)
        if errs.size:
            mse = math.fsum(errs) / errs.size
            se = float(np.std(errs, ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else math.nan
        else:
            mse, se = math.nan, math.nan
        bits = ctx.bits
        rows.append(
            SweepRow(
                scenario=cfg.scenario,
                axis=cfg.axis,
                axis_value="inf" if cfg.axis == "bits" and math.isinf(value) else value,
                bits="inf" if math.isinf(bits) else int(bits),
                snr_db=10 * math.log10(ctx.snr_lin),
                mse=mse,
                rmse=math.sqrt(mse) if mse == mse else math.nan,
                crb=scenario_crb(cfg, value)["total"],
                trials=cfg.trials,
                failures=failures,
                seed=cfg.seed,
                stderr=se,
            )
        )
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row.csv_record())
    return buf.getvalue()


def rows_to_json(rows) -> str:
    recs = [row.csv_record() for row in rows]
    return json.dumps({"rng": RNG_NAME, "rows": recs}, indent=2)

