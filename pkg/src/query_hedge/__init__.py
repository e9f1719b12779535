"""Online learning with best-action queries: learners, hard instances, oracles and a Monte Carlo harness."""

from query_hedge.instances import (
    FixedInstance,
    IidBernoulliInstance,
    InstanceStats,
    LossSequence,
    LowerBoundFamily,
    LowerBoundInstance,
    TwoExpertEpsInstance,
    instance_stats,
    looping_increasing_adversary,
    lower_bound_params,
    sample_loss_sequence,
)
from query_hedge.learners import (
    HedgeState,
    LearnerConfig,
    Trajectory,
    hedge_step,
    run_etc,
    run_ftl,
    run_hedge_full,
    run_hedge_le_bernoulli,
    run_hedge_le_uniform,
    run_learner,
)
from query_hedge.oracles import (
    BoundSpec,
    theorem_bound,
    vanilla_hedge_closed_form_regret,
    vanilla_hedge_exact_recursion,
)
from query_hedge.harness import (
    ExperimentPlan,
    RegretReport,
    compute_regret,
    fit_scaling_exponent,
    monte_carlo,
)

__version__ = "0.1.0"

__all__ = [
    "BoundSpec",
    "ExperimentPlan",
    "FixedInstance",
    "HedgeState",
    "IidBernoulliInstance",
    "InstanceStats",
    "LearnerConfig",
    "LossSequence",
    "LowerBoundFamily",
    "LowerBoundInstance",
    "RegretReport",
    "Trajectory",
    "TwoExpertEpsInstance",
    "compute_regret",
    "fit_scaling_exponent",
    "hedge_step",
    "instance_stats",
    "looping_increasing_adversary",
    "lower_bound_params",
    "monte_carlo",
    "run_etc",
    "run_ftl",
    "run_hedge_full",
    "run_hedge_le_bernoulli",
    "run_hedge_le_uniform",
    "run_learner",
    "sample_loss_sequence",
    "theorem_bound",
    "vanilla_hedge_closed_form_regret",
    "vanilla_hedge_exact_recursion",
]
