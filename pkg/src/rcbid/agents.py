"""Bidding policies and their building blocks.

The learned agent is a pair of small feedforward Q networks (plus target
copies) over a discretized ratio grid, with the regime hypothesis
appended to the observation as a one-hot input. Gradients are computed
by hand so they can be verified against finite differences, and all
parameters serialize bit-exactly through a deterministic text container.

Baselines: a multiplicative PID controller on the ROI error, a per-day
cross-entropy search over the ratio, and the best fixed ratio (solved in
the oracle module).
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .oracle import RatioGrid, default_grid

ARTIFACT_VERSION = "rcbid-policy-v1"


def linear_bid(ratio: float, utility: float) -> float:
    """Bid linear in the impression's utility: the optimal form."""
    if ratio < 0 or utility < 0:
        raise ValueError("ratio and utility must be non-negative")
    return ratio * utility


# ---------------------------------------------------------------------------
# Feedforward Q network with manual backprop


class MLP:
    """Fully connected ReLU network; forward, cached forward, and backprop."""

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def clone(self) -> "MLP":
        other = MLP(self.layer_sizes)
        other.copy_from(self)
        return other

    def copy_from(self, other: "MLP") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine[...] = theirs

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.maximum(h, 0.0)
        return h

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.maximum(h, 0.0)
            activations.append(h)
        return h, activations

    def backward(self, activations: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter, in :meth:`parameters` order."""
        grads_w: list[np.ndarray] = [np.empty(0)] * len(self.weights)
        grads_b: list[np.ndarray] = [np.empty(0)] * len(self.biases)
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = activations[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (activations[i] > 0)
        out: list[np.ndarray] = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend([gw, gb])
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size


def td_loss_and_grads(
    net: MLP, x: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Mean squared TD error of the selected actions, with gradients."""
    q, cache = net.forward_cached(x)
    n = q.shape[0]
    picked = q[np.arange(n), actions]
    err = picked - targets
    loss = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[np.arange(n), actions] = 2.0 * err / n
    grads = net.backward(cache, dq)
    return loss, grads, q


class Adam:
    """Adam optimizer over a list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class QFunction:
    """Two online Q estimators with two target copies over a discrete grid."""

    def __init__(
        self,
        feature_dim: int,
        num_regimes: int,
        num_actions: int,
        hidden_sizes: Sequence[int] = (64, 64),
        rng: np.random.Generator | None = None,
    ):
        self.feature_dim = feature_dim
        self.num_regimes = num_regimes
        self.num_actions = num_actions
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        sizes = [feature_dim + num_regimes, *self.hidden_sizes, num_actions]
        self.online = [MLP(sizes, rng), MLP(sizes, rng)]
        self.targets = [net.clone() for net in self.online]

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.num_regimes

    def q_values(self, x: np.ndarray) -> np.ndarray:
        """Acting estimate: mean of the two online networks."""
        return 0.5 * (self.online[0].forward(x) + self.online[1].forward(x))

    def target_value(self, x_next: np.ndarray) -> np.ndarray:
        """Pessimistic bootstrap: min over targets of the best action value."""
        best = [net.forward(x_next).max(axis=1) for net in self.targets]
        return np.minimum(best[0], best[1])

    def sync_targets(self) -> None:
        for target, online in zip(self.targets, self.online):
            target.copy_from(online)


def combine_features(obs_array: np.ndarray, regime: int, num_regimes: int) -> np.ndarray:
    """Observation features with the regime hypothesis appended one-hot."""
    onehot = np.zeros(num_regimes)
    onehot[regime] = 1.0
    return np.concatenate([obs_array, onehot])


def td_target(
    reward: float,
    done: bool,
    next_features: np.ndarray,
    qfunction: QFunction,
    gamma: float = 1.0,
) -> float:
    """Bootstrapped target for one transition (min over target networks)."""
    if done:
        return float(reward)
    return float(reward + gamma * qfunction.target_value(np.atleast_2d(next_features))[0])


def act(
    qfunction: QFunction,
    features: np.ndarray,
    mode: str = "eval",
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> int:
    """Pick an action index: softmax-sampled in train mode, argmax in eval.

    Argmax ties resolve to the smallest index.
    """
    q = qfunction.q_values(np.atleast_2d(features))[0]
    if mode == "eval":
        return int(np.argmax(q))
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train mode requires an rng")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    logits = (q - q.max()) / temperature
    probs = np.exp(logits)
    probs /= probs.sum()
    return int(rng.choice(len(q), p=probs))


class ReplayBuffer:
    """Fixed-capacity uniform replay over flat feature transitions."""

    def __init__(self, capacity: int, input_dim: int):
        self.capacity = int(capacity)
        self.x = np.zeros((self.capacity, input_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.x_next = np.zeros((self.capacity, input_dim))
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, x: np.ndarray, action: int, reward: float, x_next: np.ndarray, done: bool) -> None:
        i = self.pos
        self.x[i] = x
        self.actions[i] = action
        self.rewards[i] = reward
        self.x_next[i] = x_next
        self.dones[i] = done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return self.x[idx], self.actions[idx], self.rewards[idx], self.x_next[idx], self.dones[idx]


# ---------------------------------------------------------------------------
# Control baselines


@dataclass
class PIDGains:
    proportional: float = 0.4
    integral: float = 0.05
    derivative: float = 0.1
    integral_limit: float = 3.0


class PIDController:
    """Multiplicative PID on the ROI error, driving the ratio toward target.

    A positive error (ROI above target) scales the ratio up to spend
    more; the integral term is clamped for anti-windup. The multiplicative
    update keeps a positive ratio positive.
    """

    def __init__(self, target: float, gains: PIDGains | None = None):
        self.target = target
        self.gains = gains or PIDGains()
        self.integral = 0.0
        self.prev_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = None

    def step(self, measured_roi: float, prev_ratio: float) -> float:
        g = self.gains
        error = measured_roi - self.target
        self.integral = min(max(self.integral + error, -g.integral_limit), g.integral_limit)
        derivative = 0.0 if self.prev_error is None else error - self.prev_error
        self.prev_error = error
        signal = g.proportional * error + g.integral * self.integral + g.derivative * derivative
        return min(max(prev_ratio * math.exp(signal), 0.0), 4.0)


class CEMSearch:
    """Per-day cross-entropy search over the bid ratio.

    Samples a ratio per slot from a Gaussian, scores it externally, and
    refits mean/std on the elite set once per population window. An
    all-equal score window carries no ranking information and is
    discarded without a refit.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        population: int = 8,
        elite_fraction: float = 0.25,
        init_mean: float = 1.0,
        init_std: float = 0.75,
        std_floor: float = 0.05,
        bounds: tuple[float, float] = (0.0, 4.0),
    ):
        if not 0 < elite_fraction <= 1:
            raise ValueError("elite_fraction must be in (0, 1]")
        self.rng = rng
        self.population = population
        self.elite_fraction = elite_fraction
        self.mean = init_mean
        self.std = init_std
        self.std_floor = std_floor
        self.bounds = bounds
        self._window: list[tuple[float, float]] = []

    def propose(self) -> float:
        value = self.rng.normal(self.mean, self.std)
        return min(max(value, self.bounds[0]), self.bounds[1])

    def score(self, ratio: float, score: float) -> None:
        self._window.append((ratio, score))
        if len(self._window) >= self.population:
            self._refit()

    def _refit(self) -> None:
        scores = [s for _, s in self._window]
        if max(scores) > min(scores):
            k = max(1, math.ceil(self.population * self.elite_fraction))
            ranked = sorted(self._window, key=lambda pair: -pair[1])
            elite = np.array([ratio for ratio, _ in ranked[:k]])
            self.mean = float(elite.mean())
            self.std = max(float(elite.std()), self.std_floor)
        self._window = []


# ---------------------------------------------------------------------------
# Policy artifact serialization


def fingerprint(payload) -> str:
    """Stable SHA-256 of a JSON-serializable payload."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class PolicyArtifact:
    """Everything needed to rebuild and evaluate a trained policy."""

    version: str
    grid_values: tuple[float, ...]
    feature_dim: int
    num_regimes: int
    hidden_sizes: tuple[int, ...]
    tensors: dict[str, np.ndarray]
    market_fingerprint: str
    seed: int
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyArtifact):
            return NotImplemented
        if (
            self.version != other.version
            or self.grid_values != other.grid_values
            or self.feature_dim != other.feature_dim
            or self.num_regimes != other.num_regimes
            or self.hidden_sizes != other.hidden_sizes
            or self.market_fingerprint != other.market_fingerprint
            or self.seed != other.seed
            or self.metadata != other.metadata
        ):
            return False
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)

    @property
    def grid(self) -> RatioGrid:
        return RatioGrid(self.grid_values)

    @classmethod
    def from_qfunction(
        cls,
        qfunction: QFunction,
        grid: RatioGrid,
        market_fingerprint: str,
        seed: int,
        metadata: dict | None = None,
    ) -> "PolicyArtifact":
        tensors: dict[str, np.ndarray] = {}
        for group, nets in (("online", qfunction.online), ("target", qfunction.targets)):
            for i, net in enumerate(nets):
                for j, (w, b) in enumerate(zip(net.weights, net.biases)):
                    tensors[f"{group}{i}.w{j}"] = w.copy()
                    tensors[f"{group}{i}.b{j}"] = b.copy()
        return cls(
            version=ARTIFACT_VERSION,
            grid_values=tuple(grid.values),
            feature_dim=qfunction.feature_dim,
            num_regimes=qfunction.num_regimes,
            hidden_sizes=qfunction.hidden_sizes,
            tensors=tensors,
            market_fingerprint=market_fingerprint,
            seed=seed,
            metadata=dict(metadata or {}),
        )

    def build_qfunction(self) -> QFunction:
        qf = QFunction(
            feature_dim=self.feature_dim,
            num_regimes=self.num_regimes,
            num_actions=len(self.grid_values),
            hidden_sizes=self.hidden_sizes,
        )
        for group, nets in (("online", qf.online), ("target", qf.targets)):
            for i, net in enumerate(nets):
                for j in range(len(net.weights)):
                    net.weights[j][...] = self.tensors[f"{group}{i}.w{j}"]
                    net.biases[j][...] = self.tensors[f"{group}{i}.b{j}"]
        return qf


def save_artifact(artifact: PolicyArtifact, path: str | Path) -> None:
    """Write a deterministic text container; identical inputs give identical bytes."""
    doc = {
        "version": artifact.version,
        "grid_values": list(artifact.grid_values),
        "feature_dim": artifact.feature_dim,
        "num_regimes": artifact.num_regimes,
        "hidden_sizes": list(artifact.hidden_sizes),
        "market_fingerprint": artifact.market_fingerprint,
        "seed": artifact.seed,
        "metadata": artifact.metadata,
        "tensors": {
            name: {
                "shape": list(tensor.shape),
                "dtype": "float64",
                "data": base64.b64encode(np.ascontiguousarray(tensor, dtype="<f8").tobytes()).decode("ascii"),
            }
            for name, tensor in artifact.tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_artifact(path: str | Path) -> PolicyArtifact:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version: {doc.get('version')!r}")
    tensors = {
        name: np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8").reshape(spec["shape"]).copy()
        for name, spec in doc["tensors"].items()
    }
    return PolicyArtifact(
        version=doc["version"],
        grid_values=tuple(doc["grid_values"]),
        feature_dim=int(doc["feature_dim"]),
        num_regimes=int(doc["num_regimes"]),
        hidden_sizes=tuple(doc["hidden_sizes"]),
        tensors=tensors,
        market_fingerprint=doc["market_fingerprint"],
        seed=int(doc["seed"]),
        metadata=doc["metadata"],
    )
