"""Hindsight-optimal bidding plans.

With the bid ratio discretized, choosing one ratio per slot to maximize
total delivery under a budget cap and an aggregate ROI floor is a group
knapsack: each slot contributes exactly one (delivery, cost) item. The
ROI constraint is linearized as ``delivery - L * cost >= 0``, which is
equivalent for positive spend and correct for the no-spend plan.

The solver is a dynamic program over exact cumulative cost, merged at a
configurable cost resolution, with a lossless dominance prune. Plans are
re-evaluated exactly before being returned, and the all-zero plan is a
universal feasible fallback. With the merge resolution below the cost
quantum of the instance no merging occurs and the solution is exact;
otherwise the objective is optimal up to one resolution step per slot.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import BidEnv
from .market import ProblemInstance

DEFAULT_GRID_STEP = 0.1
MAX_GRID_RATIO = 4.0
_BUCKETS = 10_000


@dataclass(frozen=True)
class RatioGrid:
    """Sorted candidate bid ratios; always contains 0 (the no-bid action)."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) == 0:
            raise ValueError("grid must be non-empty")
        if self.values[0] != 0.0:
            raise ValueError("grid must start at 0")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("grid values must be strictly increasing")
        if self.values[-1] > MAX_GRID_RATIO:
            raise ValueError(f"grid values must not exceed {MAX_GRID_RATIO}")

    def __len__(self) -> int:
        return len(self.values)

    def index_of(self, ratio: float) -> int:
        return self.values.index(ratio)

    @classmethod
    def with_step(cls, step: float = DEFAULT_GRID_STEP, max_ratio: float = MAX_GRID_RATIO) -> "RatioGrid":
        n = int(round(max_ratio / step))
        return cls(tuple(float(np.round(i * step, 12)) for i in range(n + 1)))


def default_grid() -> RatioGrid:
    """41 ratios, step 0.1 on [0, 4]."""
    return RatioGrid.with_step(0.1, 4.0)


@dataclass(frozen=True)
class SlotItem:
    """Aggregate outcome of bidding one ratio on one slot's impressions."""

    slot: int
    ratio: float
    value: float
    weight: float


@dataclass(frozen=True)
class OracleSolution:
    betas: tuple[float, ...]
    delivery: float
    cost: float
    plan_indices: tuple[int, ...]


def _item_tables(instance: ProblemInstance, grid: RatioGrid) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-slot arrays of item values and weights, indexed by grid position.

    Slot sums use the same reduction as the episode engine, so replaying
    an oracle plan through the engine reproduces these numbers exactly.
    """
    values: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    for t in range(instance.num_slots):
        u, d, m = instance.slot_arrays(t)
        v = np.zeros(len(grid))
        w = np.zeros(len(grid))
        for j, ratio in enumerate(grid.values):
            if ratio <= 0 or len(u) == 0:
                continue
            won = ratio * u > m
            v[j] = d[won].sum()
            w[j] = m[won].sum()
        values.append(v)
        weights.append(w)
    return values, weights


def enumerate_items(instance: ProblemInstance, grid: RatioGrid) -> list[list[SlotItem]]:
    """All knapsack items, grouped by slot."""
    values, weights = _item_tables(instance, grid)
    return [
        [
            SlotItem(slot=t, ratio=grid.values[j], value=float(values[t][j]), weight=float(weights[t][j]))
            for j in range(len(grid))
        ]
        for t in range(instance.num_slots)
    ]


def _zero_solution(num_slots: int) -> OracleSolution:
    return OracleSolution(
        betas=(0.0,) * num_slots, delivery=0.0, cost=0.0, plan_indices=(0,) * num_slots
    )


def solve_slotwise_oracle(
    instance: ProblemInstance,
    grid: RatioGrid,
    roi_limit: float | None = None,
    budget: float | None = None,
    weight_resolution: float | None = None,
) -> OracleSolution:
    """Best one-ratio-per-slot plan under the budget and ROI constraints.

    The default merge resolution is ``budget / 10000`` for a finite
    budget, otherwise one ten-thousandth of the spend at the maximal
    ratio. Returned plans are always exactly feasible.
    """
    L = instance.roi_limit if roi_limit is None else float(roi_limit)
    B = instance.budget if budget is None else float(budget)
    values, weights = _item_tables(instance, grid)
    T = instance.num_slots
    J = len(grid)

    if weight_resolution is None:
        if math.isinf(B):
            max_spend = float(sum(w[-1] for w in weights))
            eps = max(max_spend, 1e-9) / _BUCKETS
        else:
            eps = B / _BUCKETS
    else:
        eps = float(weight_resolution)
    if not eps > 0:
        raise ValueError("weight_resolution must be positive")

    state_v = np.zeros(1)
    state_w = np.zeros(1)
    back: list[tuple[np.ndarray, np.ndarray]] = []
    for t in range(T):
        n = len(state_v)
        cand_v = (state_v[:, None] + values[t][None, :]).ravel()
        cand_w = (state_w[:, None] + weights[t][None, :]).ravel()
        cand_parent = np.repeat(np.arange(n), J)
        cand_item = np.tile(np.arange(J), n)
        if not math.isinf(B):
            keep = cand_w <= B
            cand_v, cand_w = cand_v[keep], cand_w[keep]
            cand_parent, cand_item = cand_parent[keep], cand_item[keep]
        bucket = np.floor(cand_w / eps).astype(np.int64)
        # Within each cost bucket keep the best value (ties to the
        # lighter plan); across buckets keep only states whose value
        # strictly improves on every lighter state, which is a lossless
        # dominance prune.
        order = np.lexsort((-cand_w, cand_v, bucket))
        cand_v, cand_w = cand_v[order], cand_w[order]
        cand_parent, cand_item = cand_parent[order], cand_item[order]
        bucket = bucket[order]
        last_in_bucket = np.concatenate([bucket[1:] != bucket[:-1], [True]])
        cand_v, cand_w = cand_v[last_in_bucket], cand_w[last_in_bucket]
        cand_parent, cand_item = cand_parent[last_in_bucket], cand_item[last_in_bucket]
        running = np.maximum.accumulate(cand_v)
        improving = cand_v > np.concatenate(([-np.inf], running[:-1]))
        state_v, state_w = cand_v[improving], cand_w[improving]
        back.append((cand_parent[improving], cand_item[improving]))

    surplus_ok = state_v - L * state_w >= 0.0
    if not surplus_ok.any():
        return _zero_solution(T)
    candidates = np.nonzero(surplus_ok)[0]
    best = int(candidates[np.argmax(state_v[candidates])])

    plan = [0] * T
    s = best
    for t in range(T - 1, -1, -1):
        parents, items = back[t]
        plan[t] = int(items[s])
        s = int(parents[s])

    delivery = 0.0
    cost = 0.0
    for t in range(T):
        delivery = delivery + float(values[t][plan[t]])
        cost = cost + float(weights[t][plan[t]])
    if cost > B or delivery - L * cost < 0:
        # The DP accumulates in the exact re-evaluation order, so this
        # cannot trip; guard against regressions rather than mis-solve.
        return _zero_solution(T)
    return OracleSolution(
        betas=tuple(grid.values[j] for j in plan),
        delivery=delivery,
        cost=cost,
        plan_indices=tuple(plan),
    )


def brute_force_oracle(
    instance: ProblemInstance,
    grid: RatioGrid,
    roi_limit: float | None = None,
    budget: float | None = None,
    max_plans: int = 1_000_000,
) -> OracleSolution:
    """Exact optimum by full enumeration; reference for small instances."""
    L = instance.roi_limit if roi_limit is None else float(roi_limit)
    B = instance.budget if budget is None else float(budget)
    T = instance.num_slots
    J = len(grid)
    if J ** T > max_plans:
        raise ValueError(f"instance too large for enumeration: {J}^{T} > {max_plans}")
    values, weights = _item_tables(instance, grid)
    best: tuple[float, float, tuple[int, ...]] | None = None
    for plan in itertools.product(range(J), repeat=T):
        delivery = 0.0
        cost = 0.0
        for t in range(T):
            delivery = delivery + float(values[t][plan[t]])
            cost = cost + float(weights[t][plan[t]])
        if cost > B or delivery - L * cost < 0:
            continue
        if best is None or delivery > best[0] or (delivery == best[0] and cost < best[1]):
            best = (delivery, cost, plan)
    if best is None:
        return _zero_solution(T)
    delivery, cost, plan = best
    return OracleSolution(
        betas=tuple(grid.values[j] for j in plan),
        delivery=delivery,
        cost=cost,
        plan_indices=tuple(plan),
    )


def fixed_ratio_rollout(
    instance: ProblemInstance,
    ratio: float,
    roi_limit: float | None = None,
    budget: float | None = None,
) -> tuple[float, float, bool]:
    """Run one day at a constant ratio through the episode engine.

    Returns (delivery, cost, feasible) under the engine's budget guard.
    """
    if roi_limit is not None or budget is not None:
        instance = dataclasses.replace(
            instance,
            roi_limit=instance.roi_limit if roi_limit is None else roi_limit,
            budget=instance.budget if budget is None else budget,
        )
    env = BidEnv(instance, oracle_value=1.0)
    env.reset()
    done = False
    while not done:
        _, _, done = env.step(ratio)
    ledger = env.ledger
    roi_ok = ledger.cost_total <= 0 or ledger.delivery_total / ledger.cost_total >= instance.roi_limit
    feasible = roi_ok and ledger.cost_total <= instance.budget
    return ledger.delivery_total, ledger.cost_total, feasible


def _day_score(delivery: float, feasible: bool, oracle_value: float) -> float:
    if not feasible:
        return 0.0
    if oracle_value <= 0:
        return 1.0 if delivery == 0 else 0.0
    return delivery / oracle_value


def solve_fixed_ratio(
    instances: Sequence[ProblemInstance],
    grid: RatioGrid,
    roi_limit: float | None = None,
    budget: float | None = None,
    oracle_values: Sequence[float] | None = None,
) -> float:
    """Best single ratio over a day set by mean normalized score.

    A feasible day scores its delivery relative to the day's slot-wise
    oracle, an infeasible day scores zero. Ties break toward the
    smaller, more spend-conservative ratio.
    """
    if len(instances) == 0:
        raise ValueError("at least one instance is required")
    if oracle_values is None:
        oracle_values = [
            solve_slotwise_oracle(inst, grid, roi_limit=roi_limit, budget=budget).delivery
            for inst in instances
        ]
    best_ratio = grid.values[0]
    best_score = -math.inf
    for ratio in grid.values:
        total = 0.0
        for inst, d_star in zip(instances, oracle_values):
            delivery, _, feasible = fixed_ratio_rollout(inst, ratio, roi_limit=roi_limit, budget=budget)
            total += _day_score(delivery, feasible, d_star)
        score = total / len(instances)
        if score > best_score:
            best_score = score
            best_ratio = ratio
    return float(best_ratio)
