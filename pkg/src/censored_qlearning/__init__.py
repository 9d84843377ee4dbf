"""Q-learning for dynamic treatment regimes with censored survival outcomes."""
from .kaplan_meier import KaplanMeierCurve, fit_censoring_survival
from .qlearning import (
    InsufficientDataError,
    Policy,
    QModel,
    StageArrays,
    WeightMode,
    extract_policy,
    fit_q_functions,
    fit_stage,
    q_value,
)
from .regression import FeatureMap, StageQModel, build_design_row, fit_weighted_least_squares
from .trajectory import (
    AuxiliaryTrajectory,
    StageState,
    Trajectory,
    read_jsonl,
    to_auxiliary,
    validate,
    write_jsonl,
)
from .trial_sim import (
    CensoringSpec,
    FixedSequence,
    TrialConfig,
    UniformExploration,
    calibrate_uniform_censoring,
    simulate,
    simulate_trajectory,
)

__version__ = "0.1.0"
