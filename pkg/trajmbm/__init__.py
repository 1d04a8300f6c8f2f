from .assignment import (
    AssignmentMatrix,
    DualState,
    MultiFrameProblem,
    auction_solve,
    build_subproblem,
    recover_primal,
    solve,
    solve_subproblem,
    subgradient_step,
)
from .config import RunConfig, apply_overrides, load_run_config, run_config_from_dict, run_config_to_dict
from .densities import PoissonIntensity, Trajectory, TrajectoryBernoulli
from .gaussian_models import (
    GaussianDensity,
    MeasurementModel,
    MotionModel,
    gate,
    kf_predict,
    kf_update,
    rts_smooth,
)
from .hypotheses import (
    GlobalHypothesis,
    HypothesisForest,
    SingleTrajectoryHypothesis,
    Track,
    apply_miss_only_policy,
    enumerate_global_hypotheses,
    n_scan_prune,
)
from .metrics import GospaConfig, GospaResult, gospa, matched_position_rmse
from .pmbm import (
    FilterConfig,
    FilterState,
    TrajectoryPMBMFilter,
    extract_estimates,
    new_track,
    predict,
    prune_ppp,
    sth_meas_update,
    sth_miss_update,
    update,
)
from .results import emit_results
from .simulation import (
    ScenarioConfig,
    Scan,
    generate_scan,
    generate_truth,
    run_monte_carlo,
    run_trial,
)

__all__ = [
    "GaussianDensity",
    "MotionModel",
    "MeasurementModel",
    "kf_predict",
    "kf_update",
    "rts_smooth",
    "gate",
    "Trajectory",
    "TrajectoryBernoulli",
    "PoissonIntensity",
    "FilterConfig",
    "FilterState",
    "TrajectoryPMBMFilter",
    "predict",
    "update",
    "sth_miss_update",
    "sth_meas_update",
    "new_track",
    "extract_estimates",
    "prune_ppp",
    "SingleTrajectoryHypothesis",
    "Track",
    "GlobalHypothesis",
    "HypothesisForest",
    "n_scan_prune",
    "apply_miss_only_policy",
    "enumerate_global_hypotheses",
    "MultiFrameProblem",
    "DualState",
    "AssignmentMatrix",
    "auction_solve",
    "build_subproblem",
    "solve_subproblem",
    "subgradient_step",
    "recover_primal",
    "solve",
    "GospaConfig",
    "GospaResult",
    "gospa",
    "matched_position_rmse",
    "ScenarioConfig",
    "Scan",
    "generate_truth",
    "generate_scan",
    "run_trial",
    "run_monte_carlo",
    "RunConfig",
    "load_run_config",
    "run_config_from_dict",
    "run_config_to_dict",
    "apply_overrides",
    "emit_results",
]
