"""Canonical synthetic benchmarks.

The default market has two well-separated price regimes (cheap and
expensive, log levels log 0.5 and log 2.0) switching with 5% per-slot
probability, ~50 impressions per slot, and mild delivery noise. The
regimes demand genuinely different ratios, so tracking the active regime
matters: the cheap regime rewards aggressive bidding while the expensive
one forces restraint to protect the ROI constraint.
"""

from __future__ import annotations

import math

from .experiment import ExperimentConfig
from .market import MarketConfig, ProblemInstance, RegimeModel, generate_day
from .rewards import CurriculumSchedule, CurriculumStage, default_curriculum
from .training import TrainingConfig


def two_regime_market(
    seed: int = 7,
    arrival_rate: float = 50.0,
    persistence: float = 0.95,
    price_levels: tuple[float, float] = (0.5, 2.0),
    price_log_std: float = 0.5,
    utility_log_std: float = 0.5,
    delivery_noise_log_std: float = 0.2,
    slots_per_day: int = 48,
) -> MarketConfig:
    """The default two-regime market (price log levels ln 4 apart)."""
    stay = persistence
    switch = 1.0 - persistence
    regimes = tuple(
        RegimeModel(
            regime_id=i,
            price_ratio_log_mean=math.log(level),
            price_ratio_log_std=price_log_std,
            arrival_rate=arrival_rate,
            utility_log_mean=0.0,
            utility_log_std=utility_log_std,
            delivery_noise_log_std=delivery_noise_log_std,
        )
        for i, level in enumerate(price_levels)
    )
    return MarketConfig(
        regimes=regimes,
        transition_matrix=((stay, switch), (switch, stay)),
        slots_per_day=slots_per_day,
        seed=seed,
    )


def default_sc_config(seed: int = 0, output_dir: str = "results/sc") -> ExperimentConfig:
    """The single-constraint benchmark: L=1, no budget."""
    return ExperimentConfig(
        market=two_regime_market(),
        schedule=default_curriculum(),
        training=TrainingConfig(),
        setting="SC",
        roi_limit=1.0,
        num_test_days=100,
        num_shifted_days=100,
        eval_seeds=20,
        seed=seed,
        output_dir=output_dir,
    )


def default_mc_config(seed: int = 0, output_dir: str = "results/mc") -> ExperimentConfig:
    """The multi-constraint benchmark: per-day sampled ROI limits and budgets."""
    return ExperimentConfig(
        market=two_regime_market(),
        schedule=default_curriculum(),
        training=TrainingConfig(),
        setting="MC",
        roi_limit=1.0,
        num_test_days=100,
        num_shifted_days=100,
        eval_seeds=20,
        seed=seed,
        output_dir=output_dir,
    )


def smoke_config(seed: int = 0, output_dir: str = "results/smoke") -> ExperimentConfig:
    """A seconds-scale configuration exercising the whole pipeline."""
    return ExperimentConfig(
        market=two_regime_market(seed=11, arrival_rate=4.0, slots_per_day=6),
        schedule=CurriculumSchedule(
            stages=(CurriculumStage(relaxation=0.1, budget_headroom=0.95, epochs=1),),
            final_stage_epochs=1,
        ),
        training=TrainingConfig(
            episodes_per_epoch=3,
            num_train_days=2,
            batch_size=16,
            warmup_transitions=8,
            grid_step=1.0,
        ),
        setting="SC",
        roi_limit=1.0,
        num_test_days=2,
        num_shifted_days=2,
        eval_seeds=2,
        seed=seed,
        output_dir=output_dir,
    )


def switching_days(
    market: MarketConfig,
    constraints: tuple[float, float],
    num_days: int,
    day_seed_base: int = 300_000,
    window: tuple[int, int] | None = None,
) -> list[ProblemInstance]:
    """Days whose regime provably switches mid-day.

    Scans day seeds upward and keeps days with at least one regime
    change inside the window (defaults to the middle two thirds of the
    day), so belief tracking demonstrably matters on every kept day.
    """
    T = market.slots_per_day
    lo, hi = window if window is not None else (T // 6, T - T // 6)
    days: list[ProblemInstance] = []
    day_seed = day_seed_base
    while len(days) < num_days:
        instance = generate_day(market, constraints, day_seed)
        trace = instance.regime_trace
        if any(trace[t] != trace[t + 1] for t in range(lo, min(hi, T - 1))):
            days.append(instance)
        day_seed += 1
    return days
