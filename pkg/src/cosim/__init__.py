"""Iterative co-simulation with estimator-based rollback avoidance."""

from .costarica import (
    ControlHistory,
    ControlPolicy,
    CostaricaEstimator,
    EstimatorTensors,
    control_predict,
    estimate,
    update1,
    update2,
)
from .laplace import StehfestWeights, inverse_laplace_at, inverse_laplace_tensor, stehfest_weights
from .models import CosimModel, ModelId, build_model
from .orchestrator import (
    ConvergenceFailure,
    CosimConfig,
    CouplingGraph,
    Mode,
    TraceRecord,
    Wire,
    anderson_update,
    fit_loglog_slope,
    measure_convergence,
    monolithic_reference,
    run_cosimulation,
)
from .rational import (
    LaplaceEnsemble,
    PoleError,
    RationalFn,
    eval_rational,
    p_matrix,
    r_from_p,
    resolvent_rationals,
)
from .signals import PolyVecSignal, XiMatrix, build_xi, eval_signal, hermite_cubic, shift_coefficients
from .systems import (
    CapabilityError,
    CapabilityFlags,
    DivergenceError,
    LinearizationPoint,
    StepResult,
    System,
    SystemSpec,
)

__version__ = "0.1.0"
