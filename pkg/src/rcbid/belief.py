"""Bayesian tracking of the latent market regime.

The filter maintains an exact discrete posterior over regimes from
censored auction evidence: a win reveals the price ratio ``rho = m/u``
(lognormal under each regime), while a loss reveals only that the ratio
was at least ``bid/u``. Zero bids reveal nothing and contribute no
evidence. Acting under a regime hypothesis drawn from the posterior and
re-updating after each slot implements posterior sampling.

The Gaussian KL and the ELBO-style loss mirror the variational training
objective for a latent-conditioned Q function; they are pure functions
used by the learning stack and tested in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .market import RegimeModel

logger = logging.getLogger(__name__)

_SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class Belief:
    """Probability vector over latent regimes."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.probs) == 0:
            raise ValueError("belief must have at least one regime")
        if any(p < 0 for p in self.probs):
            raise ValueError("belief probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"belief must sum to 1, got {sum(self.probs)!r}")

    @property
    def num_regimes(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def init_belief(num_regimes: int) -> Belief:
    """Uniform prior over regimes."""
    if num_regimes < 1:
        raise ValueError("num_regimes must be at least 1")
    return Belief(probs=(1.0 / num_regimes,) * num_regimes)


@dataclass(frozen=True)
class SlotEvidence:
    """Censored auction evidence from one slot.

    Market prices appear only for wins; losses contribute their (positive)
    bids. Lists are index-aligned with their utility lists.
    """

    ratio: float
    won_prices: tuple[float, ...]
    won_utilities: tuple[float, ...]
    lost_bids: tuple[float, ...]
    lost_utilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.won_prices) != len(self.won_utilities):
            raise ValueError("won_prices and won_utilities must align")
        if len(self.lost_bids) != len(self.lost_utilities):
            raise ValueError("lost_bids and lost_utilities must align")
        if any(b <= 0 for b in self.lost_bids):
            raise ValueError("lost bids must be positive (zero bids carry no evidence)")
        if any(p <= 0 for p in self.won_prices):
            raise ValueError("won prices must be positive")

    @property
    def is_empty(self) -> bool:
        return not self.won_prices and not self.lost_bids

    @classmethod
    def from_slot_summary(cls, summary) -> "SlotEvidence":
        """Build from an episode engine slot summary (duck-typed)."""
        return cls(
            ratio=summary.ratio,
            won_prices=tuple(summary.won_prices),
            won_utilities=tuple(summary.won_utilities),
            lost_bids=tuple(summary.lost_bids),
            lost_utilities=tuple(summary.lost_utilities),
        )


def empty_evidence(ratio: float = 0.0) -> SlotEvidence:
    return SlotEvidence(ratio=ratio, won_prices=(), won_utilities=(), lost_bids=(), lost_utilities=())


def slot_log_likelihood(regime: RegimeModel, evidence: SlotEvidence) -> float:
    """Exact censored log likelihood of one slot's evidence under a regime.

    Wins contribute the lognormal density of the revealed ratio; losses
    contribute the survival probability of the ratio exceeding the
    normalized bid.
    """
    total = 0.0
    mu, sigma = regime.price_ratio_log_mean, regime.price_ratio_log_std
    if evidence.won_prices:
        prices = np.asarray(evidence.won_prices, dtype=float)
        utils = np.asarray(evidence.won_utilities, dtype=float)
        if np.any(utils <= 0):
            raise ValueError("won utilities must be positive")
        log_rho = np.log(prices / utils)
        total += float(np.sum(norm.logpdf(log_rho, loc=mu, scale=sigma) - log_rho))
    if evidence.lost_bids:
        bids = np.asarray(evidence.lost_bids, dtype=float)
        utils = np.asarray(evidence.lost_utilities, dtype=float)
        if np.any(utils <= 0):
            raise ValueError("lost utilities must be positive")
        total += float(np.sum(norm.logsf(np.log(bids / utils), loc=mu, scale=sigma)))
    return total


def update_belief(
    belief: Belief,
    evidence: SlotEvidence | None,
    regimes: Sequence[RegimeModel],
    transition_matrix: np.ndarray | Sequence[Sequence[float]],
) -> Belief:
    """One predict-correct step of the regime filter.

    The predict step pushes the belief through the regime Markov chain;
    the correct step reweights by each regime's evidence likelihood,
    stabilized in log space. If every regime assigns zero likelihood the
    correction is skipped with a warning and the predicted belief is
    kept.
    """
    matrix = np.asarray(transition_matrix, dtype=float)
    predicted = matrix.T @ belief.as_array()
    predicted = np.clip(predicted, 0.0, None)
    predicted = predicted / predicted.sum()
    if evidence is None or evidence.is_empty:
        return Belief(probs=tuple(predicted))
    log_lik = np.array([slot_log_likelihood(r, evidence) for r in regimes])
    if not np.any(np.isfinite(log_lik)):
        logger.warning("all regimes assign zero likelihood to slot evidence; keeping predicted belief")
        return Belief(probs=tuple(predicted))
    log_post = np.where(predicted > 0, np.log(np.where(predicted > 0, predicted, 1.0)), -np.inf)
    log_post = log_post + log_lik
    log_post -= log_post.max()
    post = np.exp(log_post)
    post /= post.sum()
    return Belief(probs=tuple(post))


def thompson_sample(belief: Belief, rng: np.random.Generator) -> int:
    """Draw a regime hypothesis from the belief."""
    probs = belief.as_array()
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def gaussian_kl(mu: float | np.ndarray, sigma: float | np.ndarray) -> float:
    """KL divergence of N(mu, sigma^2) from the standard normal, summed over dims."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return float(np.sum(0.5 * (sigma**2 + mu**2 - 1.0) - np.log(sigma)))


def elbo_loss(residuals: Sequence[float], mu: float | np.ndarray, sigma: float | np.ndarray) -> float:
    """Negated evidence lower bound: mean Bellman residual plus the KL term."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise ValueError("residuals must be non-empty")
    return float(residuals.mean()) + gaussian_kl(mu, sigma)
