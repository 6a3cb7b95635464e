"""
DDPG Agent Module

Goal-conditioned actor-critic built from dense numpy MLPs with explicit
forward and backward passes, Polyak-averaged target networks, and the
plain gradient update rules. Inputs are the observation concatenated
with the goal (and, for the critic, the scaled action).
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from backend.transitions import TransitionBatch
from utils.constants import (
    ACTION_L2, CHECKPOINT_VERSION, GAMMA, HIDDEN_SIZES, LR_ACTOR, LR_CRITIC,
    NOISE_SCALE, NORM_CLIP, NORM_EPS, OPTIMIZERS, POLYAK_TAU, RANDOM_EPS,
)
from utils.errors import ShapeError, TrainingDivergenceError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "tanh")


class Mlp:
    """
    Dense network: rectifier hidden layers, tanh or identity output.

    Weights are stored as (fan_in, fan_out) so a batch of row vectors is
    propagated with `x @ W + b`.
    """

    def __init__(self, sizes: Sequence[int], output_activation: str = "identity",
                 rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2:
            raise ShapeError(f"An MLP needs at least input and output sizes, got {sizes}")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"Unknown output activation: {output_activation}")

        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = [int(s) for s in sizes]
        self.output_activation = output_activation
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))  # Xavier-uniform
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.output_activation = self.output_activation
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        """
        Propagate a batch and keep what the backward pass needs.

        Returns:
            Tuple[np.ndarray, list]: output (batch, out_dim) and the cache
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"Network expects input dim {self.input_dim}, got {x.shape[1]}")

        cache = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            cache.append((a, z))
            if i < last:
                a = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                a = np.tanh(z)
            else:
                a = z
        return a, cache + [a]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, d_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Backpropagate dL/d(output).

        Returns:
            Tuple[List[np.ndarray], np.ndarray]: gradients in `parameters()`
            order and dL/d(input)
        """
        *layers, out = cache
        d_z = np.asarray(d_out, dtype=np.float64)
        if self.output_activation == "tanh":
            d_z = d_z * (1.0 - out ** 2)

        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        d_a = d_z
        for i in reversed(range(len(self.weights))):
            a_in, _ = layers[i]
            grad_w[i] = a_in.T @ d_z
            grad_b[i] = d_z.sum(axis=0)
            d_a = d_z @ self.weights[i].T
            if i > 0:
                d_z = d_a * (layers[i - 1][1] > 0)

        grads = []
        for gw, gb in zip(grad_w, grad_b):
            grads.extend([gw, gb])
        return grads, d_a


class SgdOptimizer:
    """Plain momentum-free gradient descent."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class AdamOptimizer:
    """Adaptive-moment alternative; state is kept per parameter array."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class Normalizer:
    """
    Running mean and standard deviation of one input block.

    Inputs are shifted and scaled by the statistics gathered so far and
    clipped to +-clip_range. Before the first update the mean is 0 and the
    std is 1. The std never drops below `eps`, so constant features map to 0.
    """

    def __init__(self, size: int, eps: float = NORM_EPS, clip_range: float = NORM_CLIP):
        self.size = int(size)
        self.eps = eps
        self.clip_range = clip_range
        self.total_sum = np.zeros(self.size)
        self.total_sumsq = np.zeros(self.size)
        self.count = 0
        self.mean = np.zeros(self.size)
        self.std = np.ones(self.size)

    def _rows(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.size:
            raise ShapeError(f"Normalizer expects width {self.size}, got {values.shape}")
        return values

    def update(self, values: np.ndarray) -> None:
        rows = self._rows(values).reshape(-1, self.size)
        if not np.all(np.isfinite(rows)):
            raise TrainingDivergenceError("Non-finite values passed to a normalizer")
        self.total_sum += rows.sum(axis=0)
        self.total_sumsq += np.square(rows).sum(axis=0)
        self.count += len(rows)
        self._refresh()

    def _refresh(self) -> None:
        if self.count == 0:
            self.mean, self.std = np.zeros(self.size), np.ones(self.size)
            return
        self.mean = self.total_sum / self.count
        variance = self.total_sumsq / self.count - np.square(self.mean)
        self.std = np.sqrt(np.maximum(self.eps ** 2, variance))

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return np.clip((self._rows(values) - self.mean) / self.std, -self.clip_range, self.clip_range)

    def copy(self) -> "Normalizer":
        clone = Normalizer(self.size, self.eps, self.clip_range)
        clone.load_state(self.state())
        return clone

    def state(self) -> dict:
        return {"sum": self.total_sum.copy(), "sumsq": self.total_sumsq.copy(), "count": np.array(self.count)}

    def load_state(self, state: dict) -> None:
        self.total_sum = np.array(state["sum"], dtype=np.float64).reshape(self.size)
        self.total_sumsq = np.array(state["sumsq"], dtype=np.float64).reshape(self.size)
        self.count = int(state["count"])
        self._refresh()


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SgdOptimizer(lr)
    if name == "adam":
        return AdamOptimizer(lr)
    raise ValueError(f"Unknown optimizer '{name}', expected one of {OPTIMIZERS}")


@dataclass(frozen=True)
class AgentConfig:
    """DDPG hyperparameters."""

    gamma: float = GAMMA
    tau: float = POLYAK_TAU
    lr_actor: float = LR_ACTOR
    lr_critic: float = LR_CRITIC
    noise_scale: float = NOISE_SCALE
    random_eps: float = RANDOM_EPS
    hidden_sizes: Tuple[int, ...] = HIDDEN_SIZES
    max_action: float = 1.0
    optimizer: str = "sgd"
    action_l2: float = ACTION_L2
    normalize_inputs: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.max_action <= 0:
            raise ValueError(f"max_action must be positive, got {self.max_action}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{self.optimizer}'")
        if self.action_l2 < 0:
            raise ValueError(f"action_l2 must be >= 0, got {self.action_l2}")


@dataclass
class TargetNets:
    """Averaged copies of the live actor and critic."""

    actor: Mlp
    critic: Mlp


def _check_finite(values: Sequence[np.ndarray], what: str) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise TrainingDivergenceError(f"Non-finite {what} encountered")


def _actor_input(observations: np.ndarray, goals: np.ndarray) -> np.ndarray:
    return np.concatenate([np.atleast_2d(observations), np.atleast_2d(goals)], axis=1)


def _critic_input(observations, goals, actions, max_action: float) -> np.ndarray:
    return np.concatenate(
        [np.atleast_2d(observations), np.atleast_2d(goals), np.atleast_2d(actions) / max_action], axis=1
    )


def policy_actions(actor: Mlp, observations: np.ndarray, goals: np.ndarray,
                   max_action: float = 1.0) -> np.ndarray:
    """Deterministic actions pi(s || g) scaled to the action bounds."""
    return max_action * actor.predict(_actor_input(observations, goals))


def act(actor: Mlp, observation: np.ndarray, goal: np.ndarray, noise_scale: float,
        rng: np.random.Generator, max_action: float = 1.0, random_eps: float = 0.0) -> np.ndarray:
    """
    Behaviour policy for a single observation.

    Gaussian noise of `noise_scale * max_action` is added to the deterministic
    action; with probability `random_eps` a uniformly random action is used
    instead. noise_scale = 0 and random_eps = 0 give the evaluation policy.

    Raises:
        ShapeError: If observation and goal do not fill the actor input
    """
    observation = np.asarray(observation, dtype=np.float64).reshape(-1)
    goal = np.asarray(goal, dtype=np.float64).reshape(-1)
    if observation.size + goal.size != actor.input_dim:
        raise ShapeError(
            f"Observation ({observation.size}) + goal ({goal.size}) != actor input {actor.input_dim}"
        )

    action = policy_actions(actor, observation, goal, max_action)[0]
    if noise_scale > 0:
        action = action + noise_scale * max_action * rng.standard_normal(action.shape)
    action = np.clip(action, -max_action, max_action)
    if random_eps > 0 and rng.random() < random_eps:
        action = rng.uniform(-max_action, max_action, size=action.shape)
    return action


def td_target(critic_target: Mlp, actor_target: Mlp, rewards: np.ndarray, next_observations: np.ndarray,
              goals: np.ndarray, gamma: float, max_action: float = 1.0) -> np.ndarray:
    """
    y = r + gamma * Q'(s', pi'(s'), g), clipped to [-1 / (1 - gamma), 0].

    The clip holds because per-step rewards are -1 or 0.
    """
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    next_actions = policy_actions(actor_target, next_observations, goals, max_action)
    next_q = critic_target.predict(_critic_input(next_observations, goals, next_actions, max_action))
    targets = rewards + gamma * next_q.reshape(-1)
    return np.clip(targets, -1.0 / (1.0 - gamma), 0.0)


def critic_gradients(critic: Mlp, batch: TransitionBatch, targets: np.ndarray,
                     max_action: float = 1.0) -> Tuple[float, np.ndarray, List[np.ndarray]]:
    """
    Mean squared TD loss and its gradient.

    Returns:
        Tuple[float, np.ndarray, List[np.ndarray]]: loss, per-sample TD errors
        (Q - y) and parameter gradients
    """
    x = _critic_input(batch.observations, batch.goals, batch.actions, max_action)
    q, cache = critic.forward(x)
    td_errors = q.reshape(-1) - np.asarray(targets, dtype=np.float64).reshape(-1)
    loss = float(np.mean(td_errors ** 2))
    d_q = (2.0 / len(td_errors)) * td_errors.reshape(-1, 1)
    grads, _ = critic.backward(cache, d_q)
    return loss, td_errors, grads


def critic_update(critic: Mlp, batch: TransitionBatch, targets: np.ndarray, lr: float,
                  max_action: float = 1.0, optimizer=None) -> Tuple[float, np.ndarray]:
    """
    One gradient step on the critic.

    Returns:
        Tuple[float, np.ndarray]: pre-step loss and per-sample TD errors

    Raises:
        TrainingDivergenceError: If the loss or any gradient is non-finite
    """
    loss, td_errors, grads = critic_gradients(critic, batch, targets, max_action)
    _check_finite([np.array(loss)] + grads, "critic loss or gradient")
    (optimizer or SgdOptimizer(lr)).step(critic.parameters(), grads)
    return loss, td_errors


def actor_gradients(actor: Mlp, critic, observations: np.ndarray, goals: np.ndarray,
                    max_action: float = 1.0, action_l2: float = 0.0) -> Tuple[float, List[np.ndarray]]:
    """
    Loss -mean Q(s, pi(s), g) and its gradient with respect to the actor.

    The critic only needs `forward` and `backward`; its parameter gradients
    are discarded.
    """
    x = _actor_input(observations, goals)
    raw, actor_cache = actor.forward(x)
    actions = max_action * raw
    q, critic_cache = critic.forward(_critic_input(observations, goals, actions, max_action))

    batch_size = q.shape[0]
    loss = -float(np.mean(q))
    _, d_critic_input = critic.backward(critic_cache, np.full_like(q, -1.0 / batch_size))

    action_dim = actions.shape[1]
    # critic sees a / max_action and the actor emits raw = a / max_action
    d_raw = d_critic_input[:, -action_dim:]
    if action_l2 > 0:
        loss += action_l2 * float(np.mean(np.sum(raw ** 2, axis=1)))
        d_raw = d_raw + action_l2 * 2.0 * raw / batch_size

    grads, _ = actor.backward(actor_cache, d_raw)
    return loss, grads


def actor_update(actor: Mlp, critic, batch: TransitionBatch, lr: float, max_action: float = 1.0,
                 action_l2: float = 0.0, optimizer=None) -> float:
    """
    One gradient step on the actor through a frozen critic.

    Returns:
        float: pre-step actor loss

    Raises:
        TrainingDivergenceError: If the loss or any gradient is non-finite
    """
    loss, grads = actor_gradients(actor, critic, batch.observations, batch.goals, max_action, action_l2)
    _check_finite([np.array(loss)] + grads, "actor loss or gradient")
    (optimizer or SgdOptimizer(lr)).step(actor.parameters(), grads)
    return loss


def polyak_update(target: Mlp, live: Mlp, tau: float) -> Mlp:
    """
    theta_target <- (1 - tau) * theta_target + tau * theta_live, elementwise.

    Raises:
        ShapeError: If the two networks differ in layer sizes
    """
    if target.sizes != live.sizes:
        raise ShapeError(f"Target sizes {target.sizes} != live sizes {live.sizes}")
    for t_param, l_param in zip(target.parameters(), live.parameters()):
        t_param[...] = (1.0 - tau) * t_param + tau * l_param
    return target


class DdpgAgent:
    """
    Actor, critic, their targets and optimizers for one seeded run.

    Observations and goals pass through running normalizers before they
    reach any network; actions do not.
    """

    def __init__(self, obs_dim: int, goal_dim: int, action_dim: int,
                 config: Optional[AgentConfig] = None, seed: int = 0):
        self.config = config or AgentConfig()
        self.obs_dim = obs_dim
        self.goal_dim = goal_dim
        self.action_dim = action_dim
        self.rng = np.random.default_rng(seed)

        hidden = list(self.config.hidden_sizes)
        self.actor = Mlp([obs_dim + goal_dim, *hidden, action_dim], "tanh", self.rng)
        self.critic = Mlp([obs_dim + goal_dim + action_dim, *hidden, 1], "identity", self.rng)
        self.targets = TargetNets(self.actor.copy(), self.critic.copy())
        self.obs_norm = Normalizer(obs_dim)
        self.goal_norm = Normalizer(goal_dim)
        self.actor_optimizer = make_optimizer(self.config.optimizer, self.config.lr_actor)
        self.critic_optimizer = make_optimizer(self.config.optimizer, self.config.lr_critic)

    def observe(self, observations: np.ndarray, goals: np.ndarray) -> None:
        """Fold new observations and goals into the input statistics."""
        if self.config.normalize_inputs:
            self.obs_norm.update(observations)
            self.goal_norm.update(goals)

    def _normalized(self, batch: TransitionBatch) -> TransitionBatch:
        return replace(
            batch,
            observations=self.obs_norm.normalize(batch.observations),
            next_observations=self.obs_norm.normalize(batch.next_observations),
            goals=self.goal_norm.normalize(batch.goals),
        )

    def act(self, observation: np.ndarray, goal: np.ndarray, explore: bool = True) -> np.ndarray:
        noise = self.config.noise_scale if explore else 0.0
        random_eps = self.config.random_eps if explore else 0.0
        return act(self.actor, self.obs_norm.normalize(observation), self.goal_norm.normalize(goal),
                   noise, self.rng, self.config.max_action, random_eps)

    def _targets(self, normalized: TransitionBatch) -> np.ndarray:
        return td_target(self.targets.critic, self.targets.actor, normalized.rewards,
                         normalized.next_observations, normalized.goals,
                         self.config.gamma, self.config.max_action)

    def targets_for(self, batch: TransitionBatch) -> np.ndarray:
        return self._targets(self._normalized(batch))

    def train_step(self, batch: TransitionBatch) -> Tuple[float, float, np.ndarray]:
        """
        Critic then actor update on one minibatch.

        Returns:
            Tuple[float, float, np.ndarray]: critic loss, actor loss, TD errors
        """
        normalized = self._normalized(batch)
        targets = self._targets(normalized)
        critic_loss, td_errors = critic_update(self.critic, normalized, targets, self.config.lr_critic,
                                               self.config.max_action, self.critic_optimizer)
        actor_loss = actor_update(self.actor, self.critic, normalized, self.config.lr_actor,
                                  self.config.max_action, self.config.action_l2, self.actor_optimizer)
        return critic_loss, actor_loss, td_errors

    def update_targets(self) -> None:
        polyak_update(self.targets.actor, self.actor, self.config.tau)
        polyak_update(self.targets.critic, self.critic, self.config.tau)

    def td_errors(self, observations, actions, rewards, next_observations, goals) -> np.ndarray:
        """Q - y for arbitrary transitions under the current networks (no update)."""
        observations = self.obs_norm.normalize(observations)
        next_observations = self.obs_norm.normalize(next_observations)
        goals = self.goal_norm.normalize(goals)
        targets = td_target(self.targets.critic, self.targets.actor, rewards, next_observations,
                            goals, self.config.gamma, self.config.max_action)
        q = self.critic.predict(_critic_input(observations, goals, actions, self.config.max_action))
        return q.reshape(-1) - targets

    def snapshot(self) -> "DdpgAgent":
        """Frozen copy of all networks, safe to evaluate while training continues."""
        clone = DdpgAgent.__new__(DdpgAgent)
        clone.config = self.config
        clone.obs_dim, clone.goal_dim, clone.action_dim = self.obs_dim, self.goal_dim, self.action_dim
        clone.rng = np.random.default_rng(0)
        clone.actor = self.actor.copy()
        clone.critic = self.critic.copy()
        clone.targets = TargetNets(self.targets.actor.copy(), self.targets.critic.copy())
        clone.obs_norm = self.obs_norm.copy()
        clone.goal_norm = self.goal_norm.copy()
        clone.actor_optimizer = make_optimizer(self.config.optimizer, self.config.lr_actor)
        clone.critic_optimizer = make_optimizer(self.config.optimizer, self.config.lr_critic)
        return clone


def _networks_of(agent: DdpgAgent) -> dict:
    return {
        "actor": agent.actor,
        "critic": agent.critic,
        "actor_target": agent.targets.actor,
        "critic_target": agent.targets.critic,
    }


def _normalizers_of(agent: DdpgAgent) -> dict:
    return {"obs_norm": agent.obs_norm, "goal_norm": agent.goal_norm}


def save_checkpoint(agent: DdpgAgent, path: Union[str, Path]) -> Path:
    """
    Write all live and target parameters and the input statistics to a
    versioned `.npz` archive.

    Returns:
        Path: the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "dims": np.array([agent.obs_dim, agent.goal_dim, agent.action_dim]),
        "hidden_sizes": np.array(agent.config.hidden_sizes),
        "max_action": np.array(agent.config.max_action),
    }
    for name, net in _networks_of(agent).items():
        arrays[f"{name}_sizes"] = np.array(net.sizes)
        for i, param in enumerate(net.parameters()):
            arrays[f"{name}_p{i}"] = param
    for name, norm in _normalizers_of(agent).items():
        for key, value in norm.state().items():
            arrays[f"{name}_{key}"] = value
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.info(f"✓ Saved checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path], config: Optional[AgentConfig] = None) -> DdpgAgent:
    """
    Restore an agent saved by `save_checkpoint`; parameters are bit-exact.

    Raises:
        ValueError: If the version tag does not match
        ShapeError: If stored layer sizes disagree with the stored dims
    """
    with np.load(path) as data:
        version = str(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"Unsupported checkpoint version '{version}', expected '{CHECKPOINT_VERSION}'")
        obs_dim, goal_dim, action_dim = (int(v) for v in data["dims"])
        hidden = tuple(int(v) for v in data["hidden_sizes"])
        config = replace(config or AgentConfig(), hidden_sizes=hidden,
                         max_action=float(data["max_action"]))

        agent = DdpgAgent(obs_dim, goal_dim, action_dim, config)
        for name, net in _networks_of(agent).items():
            sizes = [int(v) for v in data[f"{name}_sizes"]]
            if sizes != net.sizes:
                raise ShapeError(f"Checkpoint {name} sizes {sizes} != expected {net.sizes}")
            for i, param in enumerate(net.parameters()):
                param[...] = data[f"{name}_p{i}"]
        for name, norm in _normalizers_of(agent).items():
            norm.load_state({key: data[f"{name}_{key}"] for key in ("sum", "sumsq", "count")})
    return agent
