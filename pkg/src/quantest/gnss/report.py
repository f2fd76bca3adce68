"""CRB reports in physical units and EM estimation for the GNSS model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import bounds, estimators, models
from ..errors import SingularFisher
from ..quantizer import Quantizer
from .signal import C0, CODE_LENGTH, GnssScenario

_UNITS = {"re_gamma": "", "im_gamma": "", "tau": "m", "nu": "Hz", "phi": "deg"}


def default_free(scenario: GnssScenario) -> list:
    """All parameters, minus azimuths when a single antenna cannot see them."""
    groups = ["gamma", "tau", "nu"]
    if scenario.antennas > 1:
        groups.append("phi")
    return models.resolve_free(groups, scenario.n_paths)


@dataclass
class CrbReport:
    """Square-root CRB per free parameter.

    Delays are converted from chips to meters, azimuths stay in degrees,
    Doppler in Hz and amplitudes unitless.
    """

    names: list
    sqrt_crb: np.ndarray
    units: list
    fisher: bounds.FisherMatrix

    def __getitem__(self, name: str) -> float:
        return float(self.sqrt_crb[self.names.index(name)])

    def to_dict(self) -> dict:
        return {n: {"sqrt_crb": float(v), "unit": u} for n, v, u in zip(self.names, self.sqrt_crb, self.units)}


def chips_to_meters(scenario: GnssScenario, chips):
    return np.asarray(chips) * scenario.chip_duration * C0


def gnss_crb_report(scenario: GnssScenario, quantizer: Quantizer, free=None) -> CrbReport:
    """CRB of the quantized GNSS observation at the scenario's true parameters.

    ``quantizer`` acts independently on the I and Q component of every
    antenna sample, in the units of the received signal.
    """
    model = models.GnssModel(scenario, default_free(scenario) if free is None else free)
    F = bounds.fisher_pilot(model, quantizer, model.theta_true, scenario.sigma)
    F.meta.update(scenario="gnss", free=model.free_names)
    d = np.diag(F.J)
    if np.any(d <= 0):
        raise SingularFisher("some free parameter has zero Fisher information")
    s = 1.0 / np.sqrt(d)
    ev = np.linalg.eigvalsh(F.J * np.outer(s, s))
    if ev[0] <= bounds.RCOND * ev[-1]:
        raise SingularFisher("paths are not distinguishable: Fisher information is singular")
    var = bounds.crb(F).bounds
    root = np.sqrt(np.maximum(var, 0.0))
    units = []
    for k, name in enumerate(model.free_names):
        group = name.rstrip("0123456789")
        units.append(_UNITS[group])
        if group == "tau":
            root[k] = float(chips_to_meters(scenario, root[k]))
    return CrbReport(model.free_names, root, units, F)


def simulate(scenario: GnssScenario, rng: np.random.Generator) -> np.ndarray:
    """Unquantized real-stacked observation ``f(theta) + eta``."""
    model = models.GnssModel(scenario, [])
    f = model.eval(np.zeros(0))
    return f + scenario.sigma * rng.standard_normal(f.size)


def _ls_gamma(Y: np.ndarray, atoms: list) -> np.ndarray:
    A = np.column_stack([a.ravel() for a in atoms])
    g, *_ = np.linalg.lstsq(A, Y.ravel(), rcond=None)
    return g


def _residual_energy(Y, atoms):
    A = np.column_stack([a.ravel() for a in atoms])
    g, *_ = np.linalg.lstsq(A, Y.ravel(), rcond=None)
    res = Y.ravel() - A @ g
    return float(np.vdot(res, res).real)


def grid_init(
    model: "models.GnssModel",
    y_hat: np.ndarray,
    phi_step: float = 1.0,
    nu_grid=(0.0,),
    fine_tau: float = 0.01,
    fine_phi: float = 0.1,
    sweeps: int = 3,
    max_excess_delay: float = 1.5,
) -> np.ndarray:
    """Coarse-to-fine initial guess of the full parameter vector.

    Paths are found one at a time: beamform over an azimuth grid, correlate
    with the code at every sample delay (FFT, circular), take the strongest
    peak and subtract its least-squares fit.  Paths after the first are
    only searched within ``max_excess_delay`` chips of the first detection
    (reflections arrive shortly after the direct signal), which keeps noise
    peaks elsewhere in the code period from being mistaken for them.  Delays and azimuths are then
    refined path by path on fine local grids, refitting all amplitudes
    jointly.  Paths are returned sorted by delay, so path 1 is the earliest.
    """
    sc = model.scenario
    L, M, Ns = sc.n_paths, model.M, model.Ns
    Y = models.unstack_complex(y_hat).reshape(M, Ns)
    spc = sc.samples_per_chip
    code_ref = np.fft.fft(model._code(0.0))
    phis = np.arange(-90.0, 90.0 + 1e-9, phi_step) if M > 1 else np.array([0.0])
    A = np.exp(1j * np.pi * np.outer(np.sin(np.radians(phis)), np.arange(M)))  # (P, M)

    lags = np.arange(Ns)
    lags = np.where(lags <= Ns // 2, lags, lags - Ns) / spc  # in chips
    params = []
    resid = Y.copy()
    for l in range(L):
        window = np.ones(Ns, bool)
        if l > 0:
            dist = np.abs((lags - params[0][0] + CODE_LENGTH / 2) % CODE_LENGTH - CODE_LENGTH / 2)
            window = dist <= max_excess_delay
        best = (-1.0, 0.0, 0.0, 0.0)
        for nu in nu_grid:
            z = (A.conj() @ resid) * np.exp(-2j * np.pi * nu * model._t)
            corr = np.abs(np.fft.ifft(np.fft.fft(z, axis=1) * code_ref.conj(), axis=1))
            corr[:, ~window] = 0.0
            p, k = np.unravel_index(np.argmax(corr), corr.shape)
            if corr[p, k] > best[0]:
                best = (corr[p, k], float(lags[k]), float(nu), float(phis[p]))
        _, tau, nu, phi = best
        params.append([tau, nu, phi])
        atom = model.path_signal(tau, nu, phi)
        g = _ls_gamma(resid, [atom])[0]
        resid = resid - g * atom

    def energy(ps):
        return _residual_energy(Y, [model.path_signal(*p) for p in ps])

    taus = np.arange(-0.5, 0.5 + 1e-12, fine_tau)
    dphis = np.arange(-2 * phi_step, 2 * phi_step + 1e-12, fine_phi)
    for _ in range(sweeps):
        for l in range(L):
            # one coordinate at a time: delay, then azimuth
            axes = [(0, taus)] + ([(2, dphis)] if M > 1 else [])
            for k, offsets in axes:
                base = list(params[l])
                best_e, best_p = energy(params), base
                for off in offsets:
                    cand = list(base)
                    cand[k] = base[k] + off
                    if k == 2:
                        cand[2] = float(np.clip(cand[2], -90.0, 90.0))
                    e = energy(params[:l] + [cand] + params[l + 1 :])
                    if e < best_e:
                        best_e, best_p = e, cand
                params[l] = best_p
    params.sort(key=lambda p: p[0])
    g = _ls_gamma(Y, [model.path_signal(*p) for p in params])
    P = np.array(params)
    return np.concatenate([g.real, g.imag, P[:, 0], P[:, 1], P[:, 2]])


def estimate_em(
    scenario: GnssScenario,
    quantizer: Quantizer,
    r: np.ndarray,
    free=None,
    cfg: Optional[estimators.EmConfig] = None,
    init: Optional[np.ndarray] = None,
) -> estimators.EstimateTrace:
    """EM estimate of the free parameters from quantized I/Q cells ``r``.

    Without ``init`` the starting point comes from :func:`grid_init` applied
    to the cell representatives.
    """
    model = models.GnssModel(scenario, default_free(scenario) if free is None else free)
    if init is None:
        full = grid_init(model, quantizer.representatives[r])
        # parameters held fixed keep their known values
        init = model.free_from_full(full)
    cfg = cfg or estimators.EmConfig(max_iters=200, tol=1e-7, likelihood_check=False)
    return estimators.em_pilot(model, quantizer, r, scenario.sigma, theta0=init, cfg=cfg)


def tau_error_meters(scenario: GnssScenario, tau_hat_chips: float, path: int = 0) -> float:
    err = tau_hat_chips - scenario.paths[path].tau
    return float(chips_to_meters(scenario, err))


__all__ = [
    "CrbReport",
    "default_free",
    "gnss_crb_report",
    "simulate",
    "grid_init",
    "estimate_em",
    "chips_to_meters",
    "tau_error_meters",
]
