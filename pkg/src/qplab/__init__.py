"""qplab: a numerical laboratory for switched predictor feedback under
dynamic state/input quantization of input-delayed nonlinear systems."""

__version__ = "0.1.0"

from .errors import (ConfigError, GridTooCoarse, Infeasible, InvalidDelta,
                     NonFiniteError, NotContracting, QplabError)
from .gains import DesignParams, GainLedger, compute_gains, default_design, estimate_ges, search_eps_nu
from .model import (ActuatorGrid, CompositeState, FeedbackSpec, GesCertificate,
                    PlantSpec, builtin_plants, composite_norm, linear_plant, norm_xu)
from .predictor import (backstepping_direct, backstepping_inverse, input_mismatch,
                        inverse_predictor, predictor_exact, predictor_mismatch,
                        predictor_quantized, u_nominal)
from .quantizer import (JOINT_ERROR_FACTOR, QuantizerSpec, base_quantize,
                        quantize_input, quantize_state)
from .sim import ScenarioConfig, SimTrace, run, step
from .verify import (EnvelopeReport, check_contraction, check_norm_equivalence,
                     check_open_loop, check_decay_envelope, run_checks)

__all__ = [
    "ActuatorGrid", "CompositeState", "ConfigError", "DesignParams",
    "EnvelopeReport", "FeedbackSpec", "GainLedger", "GesCertificate",
    "GridTooCoarse", "Infeasible", "InvalidDelta", "JOINT_ERROR_FACTOR",
    "NonFiniteError", "NotContracting", "PlantSpec", "QplabError",
    "QuantizerSpec", "ScenarioConfig", "SimTrace", "backstepping_direct",
    "backstepping_inverse", "base_quantize", "builtin_plants",
    "check_contraction", "check_norm_equivalence", "check_open_loop",
    "check_decay_envelope", "composite_norm", "compute_gains",
    "default_design", "estimate_ges", "input_mismatch", "inverse_predictor",
    "linear_plant", "norm_xu", "predictor_exact", "predictor_mismatch",
    "predictor_quantized", "quantize_input", "quantize_state", "run",
    "run_checks", "search_eps_nu", "step", "u_nominal",
]
