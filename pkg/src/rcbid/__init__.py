"""ROI-constrained bidding in non-stationary second-price auction markets.

Subpackage map: ``market`` (synthetic days, auction mechanism, dataset
IO), ``env`` (slot-level episode engine), ``rewards`` (terminal,
hard-barrier, and curriculum rewards), ``oracle`` (hindsight solvers),
``belief`` (regime filter and posterior sampling), ``agents`` /
``training`` (policies and learning), ``metrics`` / ``experiment``
(evaluation and orchestration).
"""

from .market import (
    AuctionOutcome,
    Impression,
    MarketConfig,
    ProblemInstance,
    RegimeModel,
    UNLIMITED_BUDGET,
    generate_day,
    read_dataset,
    run_auction,
    write_dataset,
)
from .env import BidEnv, EpisodeLedger, SlotObservation, build_observation, feasibility
from .rewards import (
    CurriculumSchedule,
    CurriculumStage,
    curriculum_limits,
    default_curriculum,
    dense_reward,
    indicator_reward,
    smooth_indicator,
    sparse_cost,
    sparse_reward,
)
from .oracle import (
    RatioGrid,
    SlotItem,
    brute_force_oracle,
    default_grid,
    enumerate_items,
    solve_fixed_ratio,
    solve_slotwise_oracle,
)
from .belief import (
    Belief,
    SlotEvidence,
    elbo_loss,
    gaussian_kl,
    init_belief,
    slot_log_likelihood,
    thompson_sample,
    update_belief,
)
from .agents import (
    CEMSearch,
    PIDController,
    PIDGains,
    PolicyArtifact,
    QFunction,
    act,
    linear_bid,
    load_artifact,
    save_artifact,
    td_target,
)
from .training import TrainingConfig, evaluate, train
from .metrics import DayResult, andr, ans, csr
from .experiment import ExperimentConfig, load_config, run_experiment

__version__ = "0.1.0"
