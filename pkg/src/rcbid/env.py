"""Slot-level bidding episode engine.

One episode runs a market day as ``T`` slot steps. The action per slot
is a scalar bid ratio; every impression in the slot receives the linear
bid ``ratio * utility``, subject to a budget guard that skips any bid
exceeding the remaining budget (a sufficient condition for never
overspending, since the second-price cost never exceeds the bid).

Observations carry only aggregate ledger statistics and public context.
Nothing derived from a lost auction's market price ever appears in an
observation or slot summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .market import ProblemInstance

MAX_RATIO = 4.0

# Feature clip ranges; chosen to keep every feature O(1).
CLIP_RATIO = (0.0, 4.0)
CLIP_ROI_GAP = (-3.0, 3.0)
CLIP_BUDGET_RATE = (0.0, 1.5)
CLIP_SLOT_DELIVERY = (0.0, 5.0)
INITIAL_RATIO = 1.0


@dataclass
class EpisodeLedger:
    """Running cumulative accounting for one episode."""

    num_slots: int
    delivery_total: float = 0.0
    cost_total: float = 0.0
    slot_delivery: np.ndarray = field(default=None)  # type: ignore[assignment]
    slot_cost: np.ndarray = field(default=None)  # type: ignore[assignment]
    wins: int = 0
    terminated_early: bool = False
    current_slot: int = 0

    def __post_init__(self) -> None:
        if self.slot_delivery is None:
            self.slot_delivery = np.zeros(self.num_slots)
        if self.slot_cost is None:
            self.slot_cost = np.zeros(self.num_slots)

    @property
    def is_terminal(self) -> bool:
        return self.current_slot >= self.num_slots or self.terminated_early

    def roi(self) -> float:
        """Cumulative ROI; +inf when nothing has been spent."""
        if self.cost_total <= 0:
            return math.inf
        return self.delivery_total / self.cost_total


class Feasibility(NamedTuple):
    roi_ok: bool
    budget_ok: bool
    both: bool


def feasibility(ledger: EpisodeLedger, roi_limit: float, budget: float) -> Feasibility:
    """Constraint status of a ledger. Zero spend satisfies the ROI constraint."""
    roi_ok = ledger.cost_total <= 0 or ledger.delivery_total / ledger.cost_total >= roi_limit
    budget_ok = ledger.cost_total <= budget
    return Feasibility(roi_ok, budget_ok, roi_ok and budget_ok)


@dataclass(frozen=True)
class SlotObservation:
    """Agent-visible statistics at the start of a slot."""

    time_progress: float
    prev_ratio: float
    roi_gap: float
    budget_rate: float
    prev_slot_roi_gap: float
    prev_slot_delivery_norm: float
    surplus_norm: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.time_progress,
                self.prev_ratio,
                self.roi_gap,
                self.budget_rate,
                self.prev_slot_roi_gap,
                self.prev_slot_delivery_norm,
                self.surplus_norm,
            ]
        )


NUM_FEATURES = 7


def _clip(x: float, bounds: tuple[float, float]) -> float:
    return min(max(x, bounds[0]), bounds[1])


def build_observation(
    ledger: EpisodeLedger,
    t: int,
    prev_ratio: float,
    roi_limit: float,
    budget: float,
    oracle_value: float,
) -> SlotObservation:
    """Observation for slot ``t`` from the ledger after ``t`` completed slots.

    Conventions: zero cumulative spend yields a neutral ROI gap of 0, an
    unlimited budget yields a budget rate of 0, and a previous slot with
    zero cost yields a neutral slot ROI gap.
    """
    if not 0 <= t <= ledger.num_slots:
        raise ValueError(f"slot index {t} out of range")
    d, c = ledger.delivery_total, ledger.cost_total
    roi_gap = (d / c - roi_limit) if c > 0 else 0.0
    budget_rate = 0.0 if math.isinf(budget) else c / budget
    if t >= 1 and ledger.slot_cost[t - 1] > 0:
        slot_roi_gap = ledger.slot_delivery[t - 1] / ledger.slot_cost[t - 1] - roi_limit
    else:
        slot_roi_gap = 0.0
    slot_delivery_norm = ledger.num_slots * ledger.slot_delivery[t - 1] / oracle_value if t >= 1 else 0.0
    surplus_norm = (d - roi_limit * c) / oracle_value
    return SlotObservation(
        time_progress=t / ledger.num_slots,
        prev_ratio=_clip(prev_ratio, CLIP_RATIO),
        roi_gap=_clip(roi_gap, CLIP_ROI_GAP),
        budget_rate=_clip(budget_rate, CLIP_BUDGET_RATE),
        prev_slot_roi_gap=_clip(slot_roi_gap, CLIP_ROI_GAP),
        prev_slot_delivery_norm=_clip(float(slot_delivery_norm), CLIP_SLOT_DELIVERY),
        surplus_norm=_clip(surplus_norm, CLIP_ROI_GAP),
    )


@dataclass(frozen=True)
class SlotSummary:
    """What one slot step produced, for the ledger and the belief filter.

    ``lost_bids`` lists only positive losing bids: a zero bid loses by
    construction and carries no information about the market price.
    Skipped bids (budget guard) produce no evidence at all.
    """

    slot: int
    ratio: float
    delivery: float
    cost: float
    won_prices: tuple[float, ...]
    won_utilities: tuple[float, ...]
    lost_bids: tuple[float, ...]
    lost_utilities: tuple[float, ...]
    num_lost: int
    num_skipped: int


class BidEnv:
    """Episode engine for one problem instance.

    ``oracle_value`` is the day's hindsight-optimal delivery, used only
    to normalize observation features. The engine itself is
    deterministic: replaying the same ratio sequence reproduces the
    identical ledger.
    """

    def __init__(self, instance: ProblemInstance, oracle_value: float):
        if not oracle_value > 0:
            raise ValueError(f"oracle_value must be positive, got {oracle_value}")
        self.instance = instance
        self.oracle_value = float(oracle_value)
        self.ledger = EpisodeLedger(num_slots=instance.num_slots)
        self.prev_ratio = INITIAL_RATIO
        self._started = False

    @property
    def num_slots(self) -> int:
        return self.instance.num_slots

    @property
    def done(self) -> bool:
        return self.ledger.is_terminal

    def reset(self) -> SlotObservation:
        self.ledger = EpisodeLedger(num_slots=self.instance.num_slots)
        self.prev_ratio = INITIAL_RATIO
        self._started = True
        return self._observe()

    def _observe(self) -> SlotObservation:
        return build_observation(
            self.ledger,
            self.ledger.current_slot,
            self.prev_ratio,
            self.instance.roi_limit,
            self.instance.budget,
            self.oracle_value,
        )

    def step(self, ratio: float) -> tuple[SlotObservation, SlotSummary, bool]:
        """Bid ``ratio * utility`` on every impression in the current slot."""
        if not self._started:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        if not 0.0 <= ratio <= MAX_RATIO:
            raise ValueError(f"ratio must be in [0, {MAX_RATIO}], got {ratio}")

        ledger = self.ledger
        t = ledger.current_slot
        budget = self.instance.budget
        u, d, m = self.instance.slot_arrays(t)
        bids = ratio * u

        if math.isinf(budget) or ledger.cost_total + bids.sum() <= budget:
            won = bids > m
            submitted = np.ones(len(u), dtype=bool)
        else:
            # Sequential budget guard: a bid is submitted only if it
            # cannot overdraw the budget even at full cost.
            won = np.zeros(len(u), dtype=bool)
            submitted = np.zeros(len(u), dtype=bool)
            cost_so_far = ledger.cost_total
            for i in range(len(u)):
                if cost_so_far + bids[i] > budget:
                    continue
                submitted[i] = True
                if bids[i] > m[i]:
                    won[i] = True
                    cost_so_far += m[i]

        slot_delivery = float(d[won].sum())
        slot_cost = float(m[won].sum())
        lost = submitted & ~won
        informative = lost & (bids > 0)

        ledger.slot_delivery[t] = slot_delivery
        ledger.slot_cost[t] = slot_cost
        ledger.delivery_total += slot_delivery
        ledger.cost_total += slot_cost
        ledger.wins += int(won.sum())
        ledger.current_slot = t + 1
        if not math.isinf(budget) and budget - ledger.cost_total <= 0:
            ledger.terminated_early = True
        self.prev_ratio = ratio

        summary = SlotSummary(
            slot=t,
            ratio=ratio,
            delivery=slot_delivery,
            cost=slot_cost,
            won_prices=tuple(float(x) for x in m[won]),
            won_utilities=tuple(float(x) for x in u[won]),
            lost_bids=tuple(float(x) for x in bids[informative]),
            lost_utilities=tuple(float(x) for x in u[informative]),
            num_lost=int(lost.sum()),
            num_skipped=int((~submitted).sum()),
        )
        return self._observe(), summary, self.done
