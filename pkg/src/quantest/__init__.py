"""Parameter estimation and performance bounds from quantized observations."""

from .bounds import (
    Crb,
    FisherMatrix,
    blind_fisher,
    crb,
    fisher_low_snr,
    fisher_marginal_discrete,
    fisher_pilot,
    fisher_unquantized,
    siso_normalized_fisher,
    siso_optimal_snr,
    unquantized_mse_linear,
)
from .errors import *  # noqa: F401,F403
from .estimators import (
    EmConfig,
    EstimateTrace,
    Prior,
    blind_log_likelihood,
    blind_score,
    em_blind_siso,
    em_pilot,
    kkt_residual,
    log_likelihood,
    ml_mimo_2x2_one_bit,
    ml_siso_one_bit,
    ml_siso_two_tap,
)
from .models import (
    GnssModel,
    LinearModel,
    SystemModel,
    build_gnss_model,
    build_linear_model,
    build_mimo_model,
    build_siso_model,
    build_two_tap_model,
)
from .quantizer import (
    Quantizer,
    fine_quantizer,
    make_custom,
    make_midriser,
    optimize_quantizer,
    quantize,
    rho_q,
    sign_quantizer,
)

__version__ = "0.1.0"
