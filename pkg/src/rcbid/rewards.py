"""Reward machinery for constrained bidding episodes.

Three reward layers, all normalized so objective value and constraint
violations live on comparable scales (objective by the day's oracle
delivery, ROI violation by the ROI limit, budget violation by the
budget):

* sparse terminal reward and cost, evaluated only at episode end;
* an indicator-augmented terminal reward that places every feasible
  episode strictly above every infeasible one, with no trade-off weight;
* dense per-slot rewards driven by a relaxed constraint schedule that
  tightens to the true constraints exactly at the horizon, used as
  curriculum stages.

Time is counted in completed slots: ``t`` runs from 1 (first slot done)
to ``T`` (episode over). The schedule's relaxation vanishes at ``t=T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .env import EpisodeLedger, feasibility


@dataclass(frozen=True)
class CurriculumStage:
    """One stage of the constraint-relaxation curriculum.

    ``relaxation`` scales how far the ROI limit is lowered early in the
    day; ``budget_headroom`` scales how much budget is held back early.
    """

    relaxation: float
    budget_headroom: float
    epochs: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.relaxation <= 1.0:
            raise ValueError("relaxation must be in [0, 1]")
        if not 0.0 <= self.budget_headroom <= 1.0:
            raise ValueError("budget_headroom must be in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered dense stages followed by the sparse hard-barrier stage.

    Earlier stages must be at least as tight as later ones (relaxation
    non-decreasing), so training starts with strong shaping and
    converges to the original problem.
    """

    stages: tuple[CurriculumStage, ...]
    shape_exponent: float = 3.0
    smoothness: float = 10.0
    final_stage_epochs: int = 4
    final_stage_is_sparse: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.shape_exponent > 0:
            raise ValueError("shape_exponent must be positive")
        if not self.smoothness > 0:
            raise ValueError("smoothness must be positive")
        if self.final_stage_epochs < 1:
            raise ValueError("final_stage_epochs must be positive")
        relaxations = [s.relaxation for s in self.stages]
        if any(b > a for a, b in zip(relaxations[1:], relaxations)):
            raise ValueError("stage relaxations must be non-decreasing")


def default_curriculum() -> CurriculumSchedule:
    """Cold-start and warm-up dense stages, then the sparse barrier stage."""
    return CurriculumSchedule(
        stages=(
            CurriculumStage(relaxation=0.1, budget_headroom=0.95, epochs=3),
            CurriculumStage(relaxation=0.2, budget_headroom=0.95, epochs=3),
        ),
        shape_exponent=3.0,
        smoothness=10.0,
        final_stage_epochs=4,
    )


def _violation(ledger: EpisodeLedger, roi_limit: float, budget: float) -> float:
    """Normalized constraint violation; 0 when the ledger is feasible."""
    total = 0.0
    if ledger.cost_total > 0:
        roi = ledger.delivery_total / ledger.cost_total
        if roi < roi_limit:
            total += (roi_limit - roi) / roi_limit
    if not math.isinf(budget) and ledger.cost_total > budget:
        total += (ledger.cost_total - budget) / budget
    return total


def sparse_reward(
    ledger: EpisodeLedger,
    baseline_delivery: float,
    roi_limit: float,
    budget: float,
    oracle_value: float,
) -> float:
    """Terminal objective reward: zero before the last slot."""
    if not ledger.is_terminal:
        return 0.0
    return (ledger.delivery_total - baseline_delivery) / oracle_value


def sparse_cost(ledger: EpisodeLedger, roi_limit: float, budget: float) -> float:
    """Terminal constraint cost: normalized violation sum, zero pre-terminal."""
    if not ledger.is_terminal:
        return 0.0
    return _violation(ledger, roi_limit, budget)


def indicator_reward(
    ledger: EpisodeLedger,
    baseline_delivery: float,
    roi_limit: float,
    budget: float,
    oracle_value: float,
) -> float:
    """Hard-barrier terminal reward.

    Feasible episodes earn the normalized delivery above the baseline;
    infeasible episodes are charged their normalized violation. Any
    feasible episode with at least one win therefore outranks every
    infeasible episode.
    """
    if not ledger.is_terminal:
        return 0.0
    if feasibility(ledger, roi_limit, budget).both:
        return (ledger.delivery_total - baseline_delivery) / oracle_value
    return -_violation(ledger, roi_limit, budget)


def curriculum_limits(
    t: int,
    num_slots: int,
    stage: CurriculumStage,
    shape_exponent: float,
    roi_limit: float,
    budget: float,
) -> tuple[float, float]:
    """Relaxed (ROI limit, budget reserve) at completed-slot count ``t``.

    The ROI limit rises as ``(1 - relaxation * (1 - t/T)^g) * L`` and the
    budget reserve decays as ``headroom * (1 - t/T)^g * B``; both reach
    ``(L, 0)`` exactly at ``t = T``.
    """
    if not 0 <= t <= num_slots:
        raise ValueError(f"t must be in [0, {num_slots}], got {t}")
    w = (1.0 - t / num_slots) ** shape_exponent
    relaxed_limit = (1.0 - stage.relaxation * w) * roi_limit
    reserve = 0.0 if math.isinf(budget) else stage.budget_headroom * w * budget
    return relaxed_limit, reserve


def dense_reward(
    ledger: EpisodeLedger,
    slot_delivery: float,
    t: int,
    stage: CurriculumStage,
    shape_exponent: float,
    roi_limit: float,
    budget: float,
    oracle_value: float,
) -> float:
    """Per-slot curriculum reward after completed-slot count ``t`` in [1, T].

    Credits the slot's normalized delivery while the relaxed cumulative
    constraints hold (boundary counts as satisfied; zero spend counts as
    satisfied), otherwise charges the normalized violations.
    """
    relaxed_limit, reserve = curriculum_limits(
        t, ledger.num_slots, stage, shape_exponent, roi_limit, budget
    )
    cost = ledger.cost_total
    roi_ok = cost <= 0 or ledger.delivery_total / cost >= relaxed_limit
    budget_ok = math.isinf(budget) or cost <= budget - reserve
    if roi_ok and budget_ok:
        return slot_delivery / oracle_value
    penalty = 0.0
    if cost > 0:
        roi = ledger.delivery_total / cost
        penalty += max(0.0, relaxed_limit - roi) / roi_limit
    if not math.isinf(budget):
        penalty += max(0.0, cost - (budget - reserve)) / budget
    return -penalty


def smooth_indicator(x: float | np.ndarray, smoothness: float) -> float | np.ndarray:
    """Sigmoid relaxation of the satisfaction indicator, in (0, 1).

    Midpoint at ``x = -sqrt(smoothness)``; approaches the step function
    pointwise as the smoothness grows.
    """
    if not smoothness > 0:
        raise ValueError("smoothness must be positive")
    out = expit(smoothness * (np.asarray(x, dtype=float) + math.sqrt(smoothness)))
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def curriculum_regret_loss(
    slot_delivery: np.ndarray,
    slot_cost: np.ndarray,
    relaxation: float,
    budget_headroom: float,
    shape_exponent: float,
    smoothness: float,
    roi_limit: float,
    budget: float,
    oracle_value: float,
) -> tuple[float, float]:
    """Regret of the smoothed dense proxy against the realized objective.

    Returns ``(loss, dloss/drelaxation)`` where the loss is the gap
    between the episode's normalized delivery and the proxy return with
    the ROI satisfaction indicator replaced by its sigmoid relaxation.
    Masked to zero (with zero gradient) on episodes that violate the
    original constraints.
    """
    slot_delivery = np.asarray(slot_delivery, dtype=float)
    slot_cost = np.asarray(slot_cost, dtype=float)
    T = len(slot_delivery)
    cum_d = np.cumsum(slot_delivery)
    cum_c = np.cumsum(slot_cost)
    total_d, total_c = float(cum_d[-1]), float(cum_c[-1])

    feasible = (total_c <= 0 or total_d / total_c >= roi_limit) and total_c <= budget
    if not feasible:
        return 0.0, 0.0

    stage = CurriculumStage(relaxation=relaxation, budget_headroom=budget_headroom, epochs=1)
    proxy_return = 0.0
    dproxy = 0.0
    for i in range(T):
        t = i + 1
        w = (1.0 - t / T) ** shape_exponent
        relaxed_limit, reserve = curriculum_limits(
            t, T, stage, shape_exponent, roi_limit, budget
        )
        budget_ok = math.isinf(budget) or cum_c[i] <= budget - reserve
        if cum_c[i] <= 0:
            # No spend yet: satisfaction is exact and insensitive to the
            # relaxation, so only the delivery credit contributes.
            proxy_return += slot_delivery[i] / oracle_value if budget_ok else 0.0
            continue
        roi = cum_d[i] / cum_c[i]
        x = roi - relaxed_limit
        sat = float(smooth_indicator(x, smoothness))
        dsat = smoothness * sat * (1.0 - sat) * w * roi_limit  # d(sat)/d(relaxation)
        credit = slot_delivery[i] / oracle_value if budget_ok else 0.0
        proxy_return += sat * credit - (1.0 - sat) * (relaxed_limit - roi) / roi_limit
        if not math.isinf(budget):
            proxy_return -= max(0.0, cum_c[i] - (budget - reserve)) / budget
        dproxy += dsat * credit + dsat * (relaxed_limit - roi) / roi_limit + (1.0 - sat) * w

    loss = total_d / oracle_value - proxy_return
    return float(loss), float(-dproxy)


def fit_relaxation(
    episodes: list[tuple[np.ndarray, np.ndarray, float]],
    initial_relaxation: float,
    budget_headroom: float,
    shape_exponent: float,
    smoothness: float,
    roi_limit: float,
    budget: float,
    learning_rate: float = 3e-3,
    steps: int = 100,
) -> list[float]:
    """Gradient-descent trajectory of the relaxation parameter.

    ``episodes`` holds ``(slot_delivery, slot_cost, oracle_value)``
    triples; infeasible episodes contribute nothing. Returns the full
    parameter path, final value last.
    """
    b = float(initial_relaxation)
    path = [b]
    for _ in range(steps):
        grad = 0.0
        count = 0
        for slot_d, slot_c, oracle_value in episodes:
            _, g = curriculum_regret_loss(
                slot_d, slot_c, b, budget_headroom, shape_exponent,
                smoothness, roi_limit, budget, oracle_value,
            )
            grad += g
            count += 1
        if count:
            grad /= count
        b = min(1.0, max(0.0, b - learning_rate * grad))
        path.append(b)
    return path
