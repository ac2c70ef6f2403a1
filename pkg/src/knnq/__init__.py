"""Nearest-neighbor Q-learning for continuous-state MDPs.

Offline fixed-point and online streaming estimators with exact kNN search,
synthetic environments, a grid value-iteration oracle, and a convergence-rate
harness.
"""

from .mdp import (
    EnvSpec,
    Policy,
    StepRecord,
    Trajectory,
    as_state,
    read_trajectory_csv,
    sample_action,
    sample_trajectory,
    step_env,
    write_trajectory_csv,
)
from .envs import ar1_env, box_env, const_env, make_env, make_policy, tilted_policy, two_arm_env, uniform_policy
from .neighbors import KnnResult, NeighborIndex
from .offline import (
    OfflineModel,
    OfflineParams,
    apply_bellman_operator,
    build_sweep_plan,
    choose_k_offline,
    evaluate_q,
    fit_offline,
    load_model,
    save_model,
)
from .online import (
    OnlineLearner,
    OnlineParams,
    load_checkpoint,
    online_query,
    online_step,
    replay_trajectory,
    save_checkpoint,
    schedule_beta,
    schedule_k_online,
    warmup_threshold,
)
from .oracle import (
    OracleQ,
    OutOfDomainError,
    UnsupportedEnvironmentError,
    bellman_residual,
    estimate_truncation_box,
    grid_value_iteration,
    lipschitz_constant,
    load_oracle,
    oracle_eval,
    save_oracle,
)
from .harness import (
    ExperimentConfig,
    RateFit,
    RateReport,
    Record,
    burn_in_diagnostic,
    build_oracle,
    build_query_grid,
    rate_fit,
    run_experiment,
    stationary_samples,
    sup_error,
    weighted_l1_error,
    write_report,
)

__version__ = "0.1.0"
