"""Controlled random walk queueing networks under myopic field-driven scheduling."""

from .analysis import (
    CheckReport,
    SampleSpec,
    check_cor42,
    check_cor43,
    check_dp_inequality,
    check_remark3,
    check_thm41_cond1,
    check_thm41_cond2,
    estimate_drift,
)
from .fields import (
    FieldSpec,
    HMaxWeightField,
    Linear,
    MaxWeightField,
    MuPThetaField,
    Perturbation,
    QuadraticDiag,
    TandemFluid,
    make_field,
    normalize_field,
)
from .model import (
    Network,
    NetworkSpec,
    check_stabilizable,
    feasible_controls,
    fig1_loop,
    load_network,
    tandem2,
    validate_network,
)
from .policy import Policy, select_control
from .sim import RunConfig, SimMetrics, simulate, step, sweep

__version__ = "0.1.0"

__all__ = [
    "CheckReport", "SampleSpec", "check_cor42", "check_cor43", "check_dp_inequality",
    "check_remark3", "check_thm41_cond1", "check_thm41_cond2", "estimate_drift",
    "FieldSpec", "HMaxWeightField", "Linear", "MaxWeightField", "MuPThetaField",
    "Perturbation", "QuadraticDiag", "TandemFluid", "make_field", "normalize_field",
    "Network", "NetworkSpec", "check_stabilizable", "feasible_controls", "fig1_loop",
    "load_network", "tandem2", "validate_network", "Policy", "select_control",
    "RunConfig", "SimMetrics", "simulate", "step", "sweep",
]
