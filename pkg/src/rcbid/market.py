"""Synthetic non-stationary second-price auction markets.

A market day is a stream of impressions partitioned into ``T`` time
slots. Each slot is governed by one of ``K`` latent regimes following a
Markov chain; regimes control price level, arrival intensity, and
utility scale. Market prices factor as ``m = u * rho`` with ``rho``
lognormal, so winning under a linear bid ``b = beta * u`` reduces to the
threshold event ``rho < beta``.

Ground-truth fields (``delivery``, ``market_price``, ``regime_trace``)
exist on the data objects but are observable to bidders only through
auction outcomes: the market price is revealed as the cost of a won
auction, never for a lost one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

UNLIMITED_BUDGET = math.inf

_SEED_MASK = (1 << 64) - 1


class DatasetError(ValueError):
    """A dataset file is malformed or violates a data invariant."""


@dataclass(frozen=True)
class Impression:
    """One auction opportunity.

    ``utility`` is the bidder's value estimate, ``delivery`` the realized
    value if won, ``market_price`` the highest competing bid (and the
    second-price cost on a win).
    """

    slot_index: int
    utility: float
    delivery: float
    market_price: float

    def __post_init__(self) -> None:
        if self.slot_index < 0:
            raise ValueError(f"slot_index must be non-negative, got {self.slot_index}")
        if not self.utility > 0:
            raise ValueError(f"utility must be positive, got {self.utility}")
        if not self.market_price > 0:
            raise ValueError(f"market_price must be positive, got {self.market_price}")
        if self.delivery < 0:
            raise ValueError(f"delivery must be non-negative, got {self.delivery}")


@dataclass(frozen=True)
class RegimeModel:
    """Distributional parameters of one latent market regime.

    Prices are ``m = u * rho`` with ``log rho ~ N(price_ratio_log_mean,
    price_ratio_log_std^2)``. Deliveries are ``d = u * eta`` where
    ``eta`` is lognormal with mean exactly 1, so utility is an unbiased
    value estimate.
    """

    regime_id: int
    price_ratio_log_mean: float
    price_ratio_log_std: float
    arrival_rate: float
    utility_log_mean: float = 0.0
    utility_log_std: float = 0.5
    delivery_noise_log_std: float = 0.0

    def __post_init__(self) -> None:
        if self.regime_id < 0:
            raise ValueError("regime_id must be non-negative")
        if not self.price_ratio_log_std > 0:
            raise ValueError("price_ratio_log_std must be positive")
        if not self.utility_log_std > 0:
            raise ValueError("utility_log_std must be positive")
        if not self.arrival_rate > 0:
            raise ValueError("arrival_rate must be positive")
        if self.delivery_noise_log_std < 0:
            raise ValueError("delivery_noise_log_std must be non-negative")


@dataclass(frozen=True)
class MarketConfig:
    """Generator configuration: regimes, their Markov chain, and horizon."""

    regimes: tuple[RegimeModel, ...]
    transition_matrix: tuple[tuple[float, ...], ...]
    slots_per_day: int = 48
    seed: int = 0
    min_regime_separation: float = 0.1

    def __post_init__(self) -> None:
        if len(self.regimes) == 0:
            raise ValueError("at least one regime is required")
        if self.slots_per_day < 2:
            raise ValueError("slots_per_day must be at least 2")
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(
            self, "transition_matrix", tuple(tuple(float(x) for x in row) for row in self.transition_matrix)
        )
        k = len(self.regimes)
        matrix = np.asarray(self.transition_matrix, dtype=float)
        if matrix.shape != (k, k):
            raise ValueError(f"transition_matrix must be {k}x{k}, got {matrix.shape}")
        if np.any(matrix < 0):
            raise ValueError("transition_matrix entries must be non-negative")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each transition_matrix row must sum to 1 within 1e-12")
        means = [r.price_ratio_log_mean for r in self.regimes]
        for i in range(k):
            for j in range(i + 1, k):
                if abs(means[i] - means[j]) < self.min_regime_separation:
                    raise ValueError(
                        f"regimes {i} and {j} differ in price_ratio_log_mean by "
                        f"{abs(means[i] - means[j]):.4g} < separation {self.min_regime_separation}"
                    )

    @property
    def num_regimes(self) -> int:
        return len(self.regimes)

    def transition_array(self) -> np.ndarray:
        return np.asarray(self.transition_matrix, dtype=float)


@dataclass(eq=False)
class ProblemInstance:
    """One market day plus its constraint limits.

    ``regime_trace`` is simulator ground truth intended for diagnostics
    and never exposed to bidding agents.
    """

    num_slots: int
    roi_limit: float
    budget: float
    impressions: list[Impression]
    regime_trace: list[int]
    num_regimes: int = 1

    def __post_init__(self) -> None:
        if self.num_slots < 2:
            raise ValueError("num_slots must be at least 2")
        if not self.roi_limit > 0:
            raise ValueError("roi_limit must be positive")
        if not self.budget > 0:
            raise ValueError("budget must be positive (math.inf for unlimited)")
        if len(self.regime_trace) != self.num_slots:
            raise ValueError("regime_trace length must equal num_slots")
        for imp in self.impressions:
            if imp.slot_index >= self.num_slots:
                raise ValueError(
                    f"impression slot_index {imp.slot_index} out of range for T={self.num_slots}"
                )
        self._slot_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            self.num_slots == other.num_slots
            and self.roi_limit == other.roi_limit
            and self.budget == other.budget
            and self.impressions == other.impressions
            and self.regime_trace == other.regime_trace
            and self.num_regimes == other.num_regimes
        )

    @property
    def budget_is_unlimited(self) -> bool:
        return math.isinf(self.budget)

    def slot_arrays(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Utilities, deliveries, and market prices of slot ``t`` (cached)."""
        if t not in self._slot_cache:
            imps = [imp for imp in self.impressions if imp.slot_index == t]
            u = np.array([imp.utility for imp in imps], dtype=float)
            d = np.array([imp.delivery for imp in imps], dtype=float)
            m = np.array([imp.market_price for imp in imps], dtype=float)
            self._slot_cache[t] = (u, d, m)
        return self._slot_cache[t]


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of submitting one bid to a second-price auction."""

    won: bool
    cost: float
    delivery: float
    revealed_price: float | None = None


def run_auction(bid: float, impression: Impression) -> AuctionOutcome:
    """Run one strict second-price auction.

    The bidder wins iff ``bid > market_price`` (ties lose) and then pays
    the market price; a lost auction reveals nothing about the price.
    """
    if bid < 0:
        raise ValueError(f"bid must be non-negative, got {bid}")
    if bid > impression.market_price:
        return AuctionOutcome(
            won=True,
            cost=impression.market_price,
            delivery=impression.delivery,
            revealed_price=impression.market_price,
        )
    return AuctionOutcome(won=False, cost=0.0, delivery=0.0, revealed_price=None)


def stationary_distribution(transition_matrix: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix (least squares)."""
    matrix = np.asarray(transition_matrix, dtype=float)
    k = matrix.shape[0]
    a = np.vstack([matrix.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def sample_regime_trace(config: MarketConfig, rng: np.random.Generator, num_slots: int | None = None) -> list[int]:
    """Sample a regime path from the config's Markov chain.

    The initial regime is drawn from the chain's stationary distribution.
    """
    T = config.slots_per_day if num_slots is None else num_slots
    matrix = config.transition_array()
    pi = stationary_distribution(matrix)
    trace = np.empty(T, dtype=int)
    trace[0] = rng.choice(config.num_regimes, p=pi)
    for t in range(1, T):
        trace[t] = rng.choice(config.num_regimes, p=matrix[trace[t - 1]])
    return [int(r) for r in trace]


def _day_rng(config_seed: int, day_seed: int) -> np.random.Generator:
    seq = np.random.SeedSequence([config_seed & _SEED_MASK, day_seed & _SEED_MASK])
    return np.random.default_rng(seq)


def generate_day(
    config: MarketConfig,
    constraints: tuple[float, float],
    day_seed: int,
) -> ProblemInstance:
    """Generate one market day.

    Per slot with regime ``r``: the impression count is Poisson with the
    regime's arrival rate, utilities are lognormal, market prices are
    ``u * rho`` with lognormal ``rho``, and deliveries are ``u * eta``
    with mean-one lognormal ``eta``. Deterministic in
    ``(config.seed, day_seed)``.
    """
    roi_limit, budget = constraints
    rng = _day_rng(config.seed, day_seed)
    trace = sample_regime_trace(config, rng)
    impressions: list[Impression] = []
    for t, r in enumerate(trace):
        regime = config.regimes[r]
        count = int(rng.poisson(regime.arrival_rate))
        if count == 0:
            continue
        u = rng.lognormal(regime.utility_log_mean, regime.utility_log_std, count)
        rho = rng.lognormal(regime.price_ratio_log_mean, regime.price_ratio_log_std, count)
        noise = regime.delivery_noise_log_std
        if noise > 0:
            eta = rng.lognormal(-0.5 * noise * noise, noise, count)
        else:
            eta = np.ones(count)
        for i in range(count):
            impressions.append(
                Impression(
                    slot_index=t,
                    utility=float(u[i]),
                    delivery=float(u[i] * eta[i]),
                    market_price=float(u[i] * rho[i]),
                )
            )
    return ProblemInstance(
        num_slots=config.slots_per_day,
        roi_limit=float(roi_limit),
        budget=float(budget),
        impressions=impressions,
        regime_trace=trace,
        num_regimes=config.num_regimes,
    )


def write_dataset(instance: ProblemInstance, path: str | Path) -> None:
    """Write an instance as line-delimited JSON (header line, then impressions)."""
    path = Path(path)
    header = {
        "T": instance.num_slots,
        "L": instance.roi_limit,
        "B": None if instance.budget_is_unlimited else instance.budget,
        "K": instance.num_regimes,
        "regime_trace": instance.regime_trace,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for imp in instance.impressions:
            record = {"slot": imp.slot_index, "u": imp.utility, "d": imp.delivery, "m": imp.market_price}
            fh.write(json.dumps(record) + "\n")


def read_dataset(path: str | Path) -> ProblemInstance:
    """Read an instance written by :func:`write_dataset`.

    Raises :class:`DatasetError` naming the offending line on malformed
    records or invariant violations.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError("line 1: missing header record")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line 1: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict) or not {"T", "L", "B", "regime_trace"} <= set(header):
        raise DatasetError("line 1: header must contain T, L, B, and regime_trace")
    budget = UNLIMITED_BUDGET if header["B"] is None else float(header["B"])
    impressions: list[Impression] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: not valid JSON ({exc})") from exc
        if not isinstance(record, dict) or not {"slot", "u", "d", "m"} <= set(record):
            raise DatasetError(f"line {lineno}: impression must contain slot, u, d, m")
        try:
            impressions.append(
                Impression(
                    slot_index=int(record["slot"]),
                    utility=float(record["u"]),
                    delivery=float(record["d"]),
                    market_price=float(record["m"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
    try:
        return ProblemInstance(
            num_slots=int(header["T"]),
            roi_limit=float(header["L"]),
            budget=budget,
            impressions=impressions,
            regime_trace=[int(r) for r in header["regime_trace"]],
            num_regimes=int(header.get("K", max(header["regime_trace"], default=0) + 1)),
        )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"line 1: {exc}") from exc


def win_probability(regime: RegimeModel, ratio: float) -> float:
    """P(win) under a fixed bid ratio in one regime: P(rho < ratio)."""
    if ratio <= 0:
        return 0.0
    from scipy.stats import norm

    z = (math.log(ratio) - regime.price_ratio_log_mean) / regime.price_ratio_log_std
    return float(norm.cdf(z))
