"""Experiment orchestration: config files, day-set construction, and runs.

A run generates train/test/shifted day sets, solves normalization
oracles, trains the learned bidder through its curriculum, evaluates it
against the baselines over several evaluation seeds, and writes one
per-day CSV plus one summary CSV. Identical configs and seeds produce
byte-identical output files.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .agents import PIDGains
from .market import MarketConfig, ProblemInstance, RegimeModel, UNLIMITED_BUDGET, generate_day
from .metrics import DayResult, summarize, write_day_results, write_summary
from .oracle import RatioGrid, fixed_ratio_rollout, solve_fixed_ratio, solve_slotwise_oracle
from .rewards import CurriculumSchedule, CurriculumStage
from .training import (
    EvalDay,
    TrainingConfig,
    cem_rollout,
    evaluate,
    fixed_ratio_day,
    pid_rollout,
    train,
)

_SEED_MASK = (1 << 64) - 1
_TRAIN_BASE = 0
_TEST_BASE = 100_000
_SHIFTED_BASE = 200_000

ALL_AGENTS = ("policy", "pid", "cem", "fixed")


class ConfigError(ValueError):
    """An experiment config is missing fields or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketConfig
    schedule: CurriculumSchedule
    training: TrainingConfig
    setting: str = "SC"
    roi_limit: float = 1.0
    budget: float | None = None
    mc_roi_range: tuple[float, float] = (0.8, 1.5)
    mc_budget_fraction: tuple[float, float] = (0.25, 0.75)
    num_test_days: int = 100
    num_shifted_days: int = 100
    shift_log_price: float = math.log(1.5)
    eval_seeds: int = 20
    normalizer: str = "oracle"
    trailing_window: int = 10
    agents: tuple[str, ...] = ALL_AGENTS
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self) -> None:
        if self.setting not in ("SC", "MC"):
            raise ConfigError(f"setting must be SC or MC, got {self.setting!r}")
        if self.normalizer not in ("oracle", "trailing"):
            raise ConfigError(f"normalizer must be oracle or trailing, got {self.normalizer!r}")
        if self.setting == "SC" and self.budget is not None:
            raise ConfigError("SC setting has no budget constraint; leave budget unset")
        if not self.roi_limit > 0:
            raise ConfigError("roi_limit must be positive")
        unknown = set(self.agents) - set(ALL_AGENTS)
        if unknown:
            raise ConfigError(f"unknown agents: {sorted(unknown)}")


def _regime_from_dict(index: int, raw: dict) -> RegimeModel:
    try:
        return RegimeModel(
            regime_id=int(raw.get("regime_id", index)),
            price_ratio_log_mean=float(raw["price_ratio_log_mean"]),
            price_ratio_log_std=float(raw["price_ratio_log_std"]),
            arrival_rate=float(raw["arrival_rate"]),
            utility_log_mean=float(raw.get("utility_log_mean", 0.0)),
            utility_log_std=float(raw.get("utility_log_std", 0.5)),
            delivery_noise_log_std=float(raw.get("delivery_noise_log_std", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid regime #{index}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from plain data."""
    try:
        market_raw = raw["market"]
        regimes = tuple(_regime_from_dict(i, r) for i, r in enumerate(market_raw["regimes"]))
        market = MarketConfig(
            regimes=regimes,
            transition_matrix=tuple(tuple(row) for row in market_raw["transition_matrix"]),
            slots_per_day=int(market_raw.get("slots_per_day", 48)),
            seed=int(market_raw.get("seed", 0)),
            min_regime_separation=float(market_raw.get("min_regime_separation", 0.1)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid market section: {exc}") from exc

    try:
        sched_raw = raw.get("curriculum", {})
        stages = tuple(
            CurriculumStage(
                relaxation=float(s["relaxation"]),
                budget_headroom=float(s.get("budget_headroom", 0.95)),
                epochs=int(s.get("epochs", 3)),
            )
            for s in sched_raw.get("stages", [])
        )
        schedule = CurriculumSchedule(
            stages=stages,
            shape_exponent=float(sched_raw.get("shape_exponent", 3.0)),
            smoothness=float(sched_raw.get("smoothness", 10.0)),
            final_stage_epochs=int(sched_raw.get("final_stage_epochs", 4)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid curriculum section: {exc}") from exc

    try:
        train_raw = raw.get("training", {})
        known = {f.name for f in dataclasses.fields(TrainingConfig)}
        unknown = set(train_raw) - known
        if unknown:
            raise ConfigError(f"unknown training fields: {sorted(unknown)}")
        coerced = {}
        for f in dataclasses.fields(TrainingConfig):
            if f.name in train_raw:
                value = train_raw[f.name]
                coerced[f.name] = tuple(value) if isinstance(value, list) else value
        training = TrainingConfig(**coerced)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training section: {exc}") from exc

    try:
        exp_raw = raw.get("experiment", {})
        budget = exp_raw.get("budget")
        return ExperimentConfig(
            market=market,
            schedule=schedule,
            training=training,
            setting=str(exp_raw.get("setting", "SC")),
            roi_limit=float(exp_raw.get("roi_limit", 1.0)),
            budget=None if budget is None else float(budget),
            mc_roi_range=tuple(exp_raw.get("mc_roi_range", (0.8, 1.5))),
            mc_budget_fraction=tuple(exp_raw.get("mc_budget_fraction", (0.25, 0.75))),
            num_test_days=int(exp_raw.get("num_test_days", 100)),
            num_shifted_days=int(exp_raw.get("num_shifted_days", 100)),
            shift_log_price=float(exp_raw.get("shift_log_price", math.log(1.5))),
            eval_seeds=int(exp_raw.get("eval_seeds", 20)),
            normalizer=str(exp_raw.get("normalizer", "oracle")),
            trailing_window=int(exp_raw.get("trailing_window", 10)),
            agents=tuple(exp_raw.get("agents", ALL_AGENTS)),
            seed=int(exp_raw.get("seed", 0)),
            output_dir=str(exp_raw.get("output_dir", "results")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment section: {exc}") from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "market": {
            "slots_per_day": config.market.slots_per_day,
            "seed": config.market.seed,
            "min_regime_separation": config.market.min_regime_separation,
            "transition_matrix": [list(row) for row in config.market.transition_matrix],
            "regimes": [
                {
                    "regime_id": r.regime_id,
                    "price_ratio_log_mean": r.price_ratio_log_mean,
                    "price_ratio_log_std": r.price_ratio_log_std,
                    "arrival_rate": r.arrival_rate,
                    "utility_log_mean": r.utility_log_mean,
                    "utility_log_std": r.utility_log_std,
                    "delivery_noise_log_std": r.delivery_noise_log_std,
                }
                for r in config.market.regimes
            ],
        },
        "curriculum": {
            "stages": [
                {"relaxation": s.relaxation, "budget_headroom": s.budget_headroom, "epochs": s.epochs}
                for s in config.schedule.stages
            ],
            "shape_exponent": config.schedule.shape_exponent,
            "smoothness": config.schedule.smoothness,
            "final_stage_epochs": config.schedule.final_stage_epochs,
        },
        "training": {
            f.name: (list(v) if isinstance(v := getattr(config.training, f.name), tuple) else v)
            for f in dataclasses.fields(TrainingConfig)
        },
        "experiment": {
            "setting": config.setting,
            "roi_limit": config.roi_limit,
            "budget": config.budget,
            "mc_roi_range": list(config.mc_roi_range),
            "mc_budget_fraction": list(config.mc_budget_fraction),
            "num_test_days": config.num_test_days,
            "num_shifted_days": config.num_shifted_days,
            "shift_log_price": config.shift_log_price,
            "eval_seeds": config.eval_seeds,
            "normalizer": config.normalizer,
            "trailing_window": config.trailing_window,
            "agents": list(config.agents),
            "seed": config.seed,
            "output_dir": config.output_dir,
        },
    }


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False), encoding="utf-8")


def shift_market(market: MarketConfig, log_shift: float) -> MarketConfig:
    """Market with every regime's log price level moved by ``log_shift``.

    The shifted price levels are disjoint from the originals for any
    shift that is not a multiple of the regime separation.
    """
    regimes = tuple(
        dataclasses.replace(r, price_ratio_log_mean=r.price_ratio_log_mean + log_shift)
        for r in market.regimes
    )
    return dataclasses.replace(market, regimes=regimes)


def sc_constraints(config: ExperimentConfig) -> tuple[float, float]:
    budget = UNLIMITED_BUDGET if config.budget is None else config.budget
    return (config.roi_limit, budget)


def build_split_days(
    config: ExperimentConfig,
    market: MarketConfig,
    num_days: int,
    day_seed_base: int,
) -> list[ProblemInstance]:
    """Generate one split's days with per-day constraints.

    SC uses the fixed (L, unlimited) pair. MC samples each day's ROI
    limit uniformly and sets the budget to a sampled fraction of the
    day's unconstrained spend (the cost of always bidding the maximal
    ratio).
    """
    days: list[ProblemInstance] = []
    for i in range(num_days):
        day_seed = day_seed_base + i
        if config.setting == "SC":
            days.append(generate_day(market, sc_constraints(config), day_seed))
            continue
        instance = generate_day(market, (config.roi_limit, UNLIMITED_BUDGET), day_seed)
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed & _SEED_MASK, 0x4D43, day_seed & _SEED_MASK])
        )
        lo, hi = config.mc_roi_range
        roi_limit = float(rng.uniform(lo, hi))
        _, max_spend, _ = fixed_ratio_rollout(instance, 4.0, roi_limit=roi_limit)
        frac_lo, frac_hi = config.mc_budget_fraction
        budget = float(rng.uniform(frac_lo, frac_hi)) * max_spend
        if budget <= 0:
            budget = UNLIMITED_BUDGET
        days.append(dataclasses.replace(instance, roi_limit=roi_limit, budget=budget))
    return days


def feature_normalizers(oracle_values: Sequence[float], mode: str, window: int) -> list[float]:
    """Oracle values used for feature scaling during evaluation.

    ``oracle`` uses each day's own hindsight value; ``trailing`` uses the
    mean of the previous ``window`` days' values (first day falls back to
    its own).
    """
    if mode == "oracle":
        return [max(v, 1e-9) for v in oracle_values]
    out: list[float] = []
    history: list[float] = []
    for v in oracle_values:
        if history:
            out.append(max(float(np.mean(history[-window:])), 1e-9))
        else:
            out.append(max(v, 1e-9))
        history.append(v)
    return out


def _eval_to_result(
    day: EvalDay, instance: ProblemInstance, day_id: str, setting: str, agent: str
) -> DayResult:
    return DayResult(
        day_id=day_id,
        setting=setting,
        roi_limit=instance.roi_limit,
        budget=instance.budget,
        delivery=day.delivery,
        cost=day.cost,
        oracle_value=day.oracle_value,
        feasible=day.feasible,
        agent=agent,
    )


@dataclass
class ExperimentOutput:
    per_day_path: Path
    summary_path: Path
    results: list[DayResult]
    train_episodes: list
    fixed_ratio: float | None


def run_experiment(config: ExperimentConfig, output_dir: str | Path | None = None) -> ExperimentOutput:
    """Run the full pipeline and write ``per_day.csv`` and ``summary.csv``."""
    out_dir = Path(output_dir if output_dir is not None else config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = RatioGrid.with_step(config.training.grid_step)

    train_days = build_split_days(config, config.market, config.training.num_train_days, _TRAIN_BASE)
    train_pool = [(inst, solve_slotwise_oracle(inst, grid).delivery) for inst in train_days]
    if any(d_star <= 0 for _, d_star in train_pool):
        raise ValueError("a training day solved to a zero oracle; adjust the market config")

    splits: dict[str, list[ProblemInstance]] = {
        "test": build_split_days(config, config.market, config.num_test_days, _TEST_BASE)
    }
    if config.num_shifted_days > 0:
        shifted_market = shift_market(config.market, config.shift_log_price)
        splits["shifted"] = build_split_days(config, shifted_market, config.num_shifted_days, _SHIFTED_BASE)

    oracle_values = {
        split: [solve_slotwise_oracle(inst, grid).delivery for inst in days]
        for split, days in splits.items()
    }
    feature_values = {
        split: feature_normalizers(oracle_values[split], config.normalizer, config.trailing_window)
        for split in splits
    }

    train_result = None
    fixed_ratio = None
    if "policy" in config.agents:
        constraints = sc_constraints(config) if config.setting == "SC" else (config.roi_limit, UNLIMITED_BUDGET)
        train_result = train(
            config.market, constraints, config.schedule, config.training, config.seed, day_pool=train_pool
        )
    if "fixed" in config.agents:
        fixed_ratio = solve_fixed_ratio(
            [inst for inst, _ in train_pool], grid, oracle_values=[v for _, v in train_pool]
        )

    results: list[DayResult] = []
    shifted_markets = {"test": config.market}
    if "shifted" in splits:
        shifted_markets["shifted"] = shift_market(config.market, config.shift_log_price)

    for agent in config.agents:
        for eval_seed in range(config.eval_seeds):
            for split, days in splits.items():
                o_values = oracle_values[split]
                f_values = feature_values[split]
                day_ids = [f"{split}-{i:03d}-s{eval_seed:02d}" for i in range(len(days))]
                if agent == "policy":
                    assert train_result is not None
                    evals = evaluate(
                        train_result.artifact,
                        days,
                        o_values,
                        config.market,
                        seed=config.seed + eval_seed,
                        feature_values=f_values,
                    )
                elif agent == "pid":
                    evals = [pid_rollout(inst, d_star) for inst, d_star in zip(days, o_values)]
                elif agent == "cem":
                    evals = [
                        cem_rollout(
                            inst,
                            d_star,
                            np.random.default_rng(
                                np.random.SeedSequence(
                                    [config.seed & _SEED_MASK, 0x43454D, eval_seed, i]
                                )
                            ),
                        )
                        for i, (inst, d_star) in enumerate(zip(days, o_values))
                    ]
                else:
                    assert fixed_ratio is not None
                    evals = [
                        fixed_ratio_day(inst, d_star, fixed_ratio)
                        for inst, d_star in zip(days, o_values)
                    ]
                results.extend(
                    _eval_to_result(e, inst, day_id, config.setting, agent)
                    for e, inst, day_id in zip(evals, days, day_ids)
                )

    per_day_path = out_dir / "per_day.csv"
    summary_path = out_dir / "summary.csv"
    write_day_results(results, per_day_path)
    write_summary(summarize(results), summary_path)
    return ExperimentOutput(
        per_day_path=per_day_path,
        summary_path=summary_path,
        results=results,
        train_episodes=train_result.episodes if train_result else [],
        fixed_ratio=fixed_ratio,
    )
