"""Linear contextual bandits with hybridized randomization (HyRan) and the
baselines, environments, diagnostics and experiment harness around it."""

from hyran.core import (
    BanditState,
    ContextSet,
    HybridizationConfig,
    HyRanBandit,
    RegularizationSchedule,
    compute_pseudo_rewards,
    estimate,
    lambda_value,
    sample_hybridization,
    select_arm,
    update_state,
)
from hyran.environment import EnvironmentSpec, RegretTrace, correlated_gaussian_env, gen_hard_instance

__all__ = [
    "BanditState",
    "ContextSet",
    "EnvironmentSpec",
    "HybridizationConfig",
    "HyRanBandit",
    "RegretTrace",
    "RegularizationSchedule",
    "compute_pseudo_rewards",
    "correlated_gaussian_env",
    "estimate",
    "gen_hard_instance",
    "lambda_value",
    "sample_hybridization",
    "select_arm",
    "update_state",
]

__version__ = "0.1.0"
