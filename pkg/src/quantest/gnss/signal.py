"""GPS C/A code, ULA steering vectors and the sampled two-path scenario."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..errors import InvalidScenario

C0 = 299_792_458.0
CODE_LENGTH = 1023
CODE_PERIOD = 1e-3

# G2 phase-selector taps (1-based register stages) for PRN 1..32.
_G2_TAPS = (
    (2, 6), (3, 7), (4, 8), (5, 9), (1, 9), (2, 10), (1, 8), (2, 9),
    (3, 10), (2, 3), (3, 4), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10),
    (1, 4), (2, 5), (3, 6), (4, 7), (5, 8), (6, 9), (1, 3), (4, 6),
    (5, 7), (6, 8), (7, 9), (8, 10), (1, 6), (2, 7), (3, 8), (4, 9),
)


@lru_cache(maxsize=None)
def _ca_bits(prn: int) -> tuple:
    g1 = [1] * 10
    g2 = [1] * 10
    s1, s2 = _G2_TAPS[prn - 1]
    out = []
    for _ in range(CODE_LENGTH):
        out.append(g1[9] ^ g2[s1 - 1] ^ g2[s2 - 1])
        fb1 = g1[2] ^ g1[9]
        fb2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9]
        g1 = [fb1] + g1[:9]
        g2 = [fb2] + g2[:9]
    return tuple(out)


def gen_ca_code(prn: int) -> np.ndarray:
    """GPS L1 C/A Gold code as +-1 chips (logic 0 -> +1, logic 1 -> -1)."""
    if not isinstance(prn, (int, np.integer)) or not 1 <= prn <= 32:
        raise InvalidScenario(f"PRN must be an integer in 1..32, got {prn!r}")
    return 1.0 - 2.0 * np.array(_ca_bits(int(prn)), dtype=float)


def steering_vector(phi_deg: float, M: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(j*pi*m*sin(phi))``, ``m = 0..M-1``."""
    if M < 1:
        raise InvalidScenario("array needs at least one element")
    if abs(phi_deg) > 90:
        raise InvalidScenario(f"azimuth must lie in [-90, 90] degrees, got {phi_deg}")
    m = np.arange(M)
    return np.exp(1j * np.pi * m * math.sin(math.radians(phi_deg)))


@dataclass(frozen=True)
class Path:
    gamma: complex
    tau: float  # chips
    nu: float = 0.0  # Hz
    phi: float = 0.0  # degrees


@dataclass(frozen=True)
class GnssScenario:
    """Received signal description.

    Delays are stored in chips; :attr:`chip_duration` converts to seconds.
    The noise level follows from ``snr_db`` (power of path 1 over the noise
    power of one complex sample, i.e. ``|gamma_1|^2 / (2 sigma^2)``).
    """

    paths: tuple
    prn: int = 1
    chip_duration: float = 977.52e-9
    bandwidth: float = 1.023e6
    sample_rate: float = 2 * 1.023e6
    antennas: int = 1
    snr_db: float = -20.0
    smr_db: float | None = None
    periods: int = 1

    def __post_init__(self):
        paths = tuple(p if isinstance(p, Path) else Path(**p) for p in self.paths)
        object.__setattr__(self, "paths", paths)
        if not paths:
            raise InvalidScenario("scenario needs at least one path")
        if self.antennas < 1:
            raise InvalidScenario("antennas must be >= 1")
        if not self.sample_rate > 0 or not self.chip_duration > 0:
            raise InvalidScenario("sample rate and chip duration must be positive")
        if self.periods < 1:
            raise InvalidScenario("periods must be >= 1")
        if not 1 <= self.prn <= 32:
            raise InvalidScenario(f"PRN must be in 1..32, got {self.prn}")
        for p in paths:
            if abs(p.phi) > 90:
                raise InvalidScenario(f"azimuth {p.phi} outside [-90, 90]")
            if not abs(p.tau) < CODE_LENGTH:
                raise InvalidScenario(f"delay {p.tau} chips exceeds one code period")

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * CODE_PERIOD * self.periods))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    @property
    def samples_per_chip(self) -> float:
        return self.sample_rate * self.chip_duration

    @property
    def sigma(self) -> float:
        """Noise standard deviation per real dimension."""
        g1 = abs(self.paths[0].gamma)
        return math.sqrt(g1**2 / (2.0 * 10 ** (self.snr_db / 10)))

    def with_snr(self, snr_db: float) -> "GnssScenario":
        return replace(self, snr_db=snr_db)

    @classmethod
    def from_dict(cls, d: dict) -> "GnssScenario":
        d = dict(d)
        paths = []
        for p in d.pop("paths"):
            p = dict(p)
            g = p.get("gamma", 1.0)
            if isinstance(g, (list, tuple)):
                g = complex(g[0], g[1])
            elif isinstance(g, str):
                g = complex(g.replace(" ", ""))
            p["gamma"] = complex(g)
            if "tau_s" in p:
                p["tau"] = p.pop("tau_s") / d.get("chip_duration", 977.52e-9)
            paths.append(Path(**p))
        smr = d.get("smr_db")
        if smr is not None and len(paths) > 1:
            # In-phase reflections with amplitude set by the SMR.
            g1 = paths[0].gamma
            amp = abs(g1) * 10 ** (-smr / 20)
            unit = g1 / abs(g1) if g1 != 0 else 1.0
            paths = [paths[0]] + [replace(p, gamma=complex(amp * unit)) for p in paths[1:]]
        d["paths"] = tuple(paths)
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidScenario(str(exc)) from None


def sample_code(code: np.ndarray, tau: float, scenario: GnssScenario) -> np.ndarray:
    """Code waveform at the sample instants, delayed circularly by ``tau`` chips.

    The continuous waveform linearly interpolates the chip values placed at
    integer chip positions, so fractional delays are differentiable.
    """
    if not abs(tau) < CODE_LENGTH:
        raise InvalidScenario(f"delay {tau} chips exceeds one code period")
    u = np.arange(scenario.n_samples) / scenario.samples_per_chip - tau
    return interp_code(code, u)


def interp_code(code: np.ndarray, u: np.ndarray) -> np.ndarray:
    u = np.mod(u, CODE_LENGTH)
    n = np.floor(u).astype(int)
    frac = u - n
    n0 = n % CODE_LENGTH
    n1 = (n + 1) % CODE_LENGTH
    return (1.0 - frac) * code[n0] + frac * code[n1]


def multipath_array_scenario(tau1: float = 0.1, snr_db: float = -22.8) -> GnssScenario:
    """Two in-phase paths on an 8-element ULA (LOSS at -30 deg, reflection at 62 deg)."""
    g1 = 1.0 + 0.0j
    g2 = g1 * 10 ** (-5.0 / 20)
    return GnssScenario(
        paths=(Path(g1, tau1, 0.0, -30.0), Path(g2, tau1 + 0.3, 0.0, 62.0)),
        antennas=8,
        snr_db=snr_db,
        smr_db=5.0,
    )


def single_antenna_scenario(tau: float = 0.1, snr_db: float = -20.0) -> GnssScenario:
    return GnssScenario(paths=(Path(1.0 + 0.0j, tau, 0.0, 0.0),), antennas=1, snr_db=snr_db)
