"""Differentiable system functions ``f(x, theta)``.

The known input ``x`` (pilot matrix, code waveform, array geometry) is bound
into the model when it is built, so every model exposes ``eval(theta)`` and
``jacobian(theta)`` (rows are the gradients of the individual outputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidScenario
from .gnss.signal import GnssScenario, gen_ca_code, interp_code


class SystemModel:
    param_dim: int
    output_dim: int
    linear: bool = False

    def eval(self, theta) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta) -> np.ndarray:
        raise NotImplementedError

    def grad(self, theta, i: int) -> np.ndarray:
        """Gradient of output ``i`` with respect to the parameters."""
        return self.jacobian(theta)[i]

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.param_dim:
            raise DimensionMismatch(f"expected {self.param_dim} parameters, got {theta.size}")
        return theta


class LinearModel(SystemModel):
    """``f(theta) = X @ theta``."""

    linear = True

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.size == 0:
            raise DimensionMismatch("pilot matrix must be a nonempty 2-D array")
        self.X = X
        self.X.setflags(write=False)
        self.output_dim, self.param_dim = X.shape

    def eval(self, theta):
        return self.X @ self._check_theta(theta)

    def jacobian(self, theta=None):
        return self.X

    def __repr__(self):
        return f"LinearModel(N={self.output_dim}, P={self.param_dim})"


def build_linear_model(X) -> LinearModel:
    return LinearModel(X)


def build_siso_model(x) -> LinearModel:
    """One-tap channel ``f_i = h * x_i``."""
    return LinearModel(np.asarray(x, dtype=float).reshape(-1, 1))


def two_tap_matrix(x) -> np.ndarray:
    """Rows ``[x_i, x_{i-1}]`` for ``i = 2..N``; the first output is dropped."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise DimensionMismatch("two-tap model needs at least two pilot symbols")
    return np.column_stack([x[1:], x[:-1]])


def build_two_tap_model(x) -> LinearModel:
    return LinearModel(two_tap_matrix(x))


def mimo_matrix(pilots, n_rx: int) -> np.ndarray:
    """Regressor for ``vec(H @ pilots)`` with ``theta = vec(H)`` (column-major).

    ``pilots`` is ``M x N`` (one row per transmit antenna); ``H`` is
    ``n_rx x M``.
    """
    pilots = np.asarray(pilots, dtype=float)
    if pilots.ndim != 2:
        raise DimensionMismatch("pilots must be an M x N matrix")
    return np.kron(pilots.T, np.eye(n_rx))


def build_mimo_model(pilots, n_rx: int) -> LinearModel:
    return LinearModel(mimo_matrix(pilots, n_rx))


def stack_complex(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    return np.concatenate([z.real, z.imag])


def unstack_complex(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size % 2:
        raise DimensionMismatch("stacked vector must have even length")
    n = v.size // 2
    return v[:n] + 1j * v[n:]


_GROUPS = ("re_gamma", "im_gamma", "tau", "nu", "phi")


def gnss_param_names(n_paths: int) -> list:
    return [f"{g}{l + 1}" for g in _GROUPS for l in range(n_paths)]


def resolve_free(free, n_paths: int) -> list:
    """Expand a parameter selector into full parameter names.

    Accepts full names (``"tau1"``), groups (``"tau"``) and ``"gamma"`` for
    both amplitude components.  ``None`` frees everything.
    """
    names = gnss_param_names(n_paths)
    if free is None:
        return names
    if isinstance(free, str):
        free = [free]
    chosen = set()
    for item in free:
        if item == "gamma":
            chosen.update(n for n in names if "gamma" in n)
        elif item in _GROUPS:
            chosen.update(n for n in names if n.rstrip("0123456789") == item)
        elif item in names:
            chosen.add(item)
        else:
            raise InvalidScenario(f"unknown parameter selector {item!r}")
    return [n for n in names if n in chosen]


@dataclass
class _Unpacked:
    gamma: np.ndarray
    tau: np.ndarray
    nu: np.ndarray
    phi: np.ndarray


class GnssModel(SystemModel):
    """Real-stacked multipath array signal.

    Complex baseband ``s[m, k] = sum_l gamma_l a_m(phi_l) c(t_k - tau_l)
    exp(j 2 pi nu_l t_k)`` flattened antenna-major and stacked as
    ``[Re s; Im s]``.  Delays are in chips, Doppler in Hz, azimuth in
    degrees.  Parameters not selected as free are held at the scenario's
    values.
    """

    def __init__(self, scenario: GnssScenario, free=None, fd_step: float = 1e-6):
        self.scenario = scenario
        self.code = gen_ca_code(scenario.prn)
        L = scenario.n_paths
        self.names = gnss_param_names(L)
        self.free_names = resolve_free(free, L)
        self.free_idx = np.array([self.names.index(n) for n in self.free_names], dtype=int)
        self.full_truth = self._pack(scenario)
        self.param_dim = len(self.free_idx)
        self.M = scenario.antennas
        self.Ns = scenario.n_samples
        self.output_dim = 2 * self.M * self.Ns
        self.fd_step = fd_step
        self._u = np.arange(self.Ns) / scenario.samples_per_chip
        self._t = scenario.times
        self._m = np.arange(self.M)

    @staticmethod
    def _pack(sc: GnssScenario) -> np.ndarray:
        g = np.array([p.gamma for p in sc.paths], dtype=complex)
        return np.concatenate(
            [g.real, g.imag, [p.tau for p in sc.paths], [p.nu for p in sc.paths], [p.phi for p in sc.paths]]
        ).astype(float)

    @property
    def theta_true(self) -> np.ndarray:
        return self.full_truth[self.free_idx].copy()

    def full(self, theta) -> np.ndarray:
        full = self.full_truth.copy()
        full[self.free_idx] = self._check_theta(theta)
        return full

    def free_from_full(self, full) -> np.ndarray:
        return np.asarray(full, dtype=float)[self.free_idx]

    def _unpack(self, full) -> _Unpacked:
        L = self.scenario.n_paths
        return _Unpacked(
            gamma=full[:L] + 1j * full[L : 2 * L],
            tau=full[2 * L : 3 * L],
            nu=full[3 * L : 4 * L],
            phi=full[4 * L : 5 * L],
        )

    def _steer(self, phi):
        return np.exp(1j * np.pi * self._m * math.sin(math.radians(phi)))

    def _code(self, tau):
        return interp_code(self.code, self._u - tau)

    def path_signal(self, tau, nu, phi) -> np.ndarray:
        """Unit-amplitude complex signal of one path, shape ``(M, Ns)``."""
        return np.outer(self._steer(phi), self._code(tau) * np.exp(2j * np.pi * nu * self._t))

    def complex_eval_full(self, full) -> np.ndarray:
        p = self._unpack(full)
        s = np.zeros((self.M, self.Ns), dtype=complex)
        for l in range(self.scenario.n_paths):
            s += p.gamma[l] * self.path_signal(p.tau[l], p.nu[l], p.phi[l])
        return s

    def eval(self, theta):
        return stack_complex(self.complex_eval_full(self.full(theta)))

    def jacobian(self, theta):
        full = self.full(theta)
        p = self._unpack(full)
        cols = []
        for name in self.free_names:
            group = name.rstrip("0123456789")
            l = int(name[len(group):]) - 1
            tau, nu, phi, g = p.tau[l], p.nu[l], p.phi[l], p.gamma[l]
            dop = np.exp(2j * np.pi * nu * self._t)
            a = self._steer(phi)
            if group == "re_gamma":
                d = np.outer(a, self._code(tau) * dop)
            elif group == "im_gamma":
                d = 1j * np.outer(a, self._code(tau) * dop)
            elif group == "nu":
                d = g * np.outer(a, self._code(tau) * (2j * np.pi * self._t) * dop)
            elif group == "phi":
                da = 1j * np.pi * self._m * math.cos(math.radians(phi)) * math.radians(1.0) * a
                d = g * np.outer(da, self._code(tau) * dop)
            else:  # tau: central difference, the waveform is only piecewise smooth
                h = self.fd_step * (1.0 + abs(tau))
                dc = (self._code(tau + h) - self._code(tau - h)) / (2 * h)
                d = g * np.outer(a, dc * dop)
            cols.append(stack_complex(d))
        return np.column_stack(cols) if cols else np.zeros((self.output_dim, 0))

    def __repr__(self):
        return f"GnssModel(M={self.M}, Ns={self.Ns}, free={self.free_names})"


def build_gnss_model(scenario: GnssScenario, free=None) -> GnssModel:
    return GnssModel(scenario, free)
