"""GNSS two-path array scenario: signal construction, CRB reports and EM."""

from .signal import (
    C0,
    CODE_LENGTH,
    GnssScenario,
    Path,
    multipath_array_scenario,
    gen_ca_code,
    sample_code,
    single_antenna_scenario,
    steering_vector,
)

_REPORT = {
    "CrbReport",
    "chips_to_meters",
    "default_free",
    "estimate_em",
    "gnss_crb_report",
    "grid_init",
    "simulate",
    "tau_error_meters",
}


def __getattr__(name):
    # report depends on quantest.models, which itself imports .signal
    if name in _REPORT:
        from . import report

        return getattr(report, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "C0",
    "CODE_LENGTH",
    "CrbReport",
    "GnssScenario",
    "Path",
    "chips_to_meters",
    "default_free",
    "estimate_em",
    "multipath_array_scenario",
    "gen_ca_code",
    "gnss_crb_report",
    "grid_init",
    "sample_code",
    "simulate",
    "single_antenna_scenario",
    "steering_vector",
    "tau_error_meters",
]
