"""
Training Harness Module

Runs HER training end to end for one replay strategy across seeds:

    uniform-her  episodes sampled uniformly, future-goal relabeling
    ebp-her      episodes sampled proportionally to trajectory energy
    per-her      transitions relabeled at insertion, sampled by TD error

Each epoch collects episodes, performs optimizer steps after every
episode, evaluates the deterministic policy and records metrics.
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from backend.agent import DdpgAgent, save_checkpoint
from backend.config import RunConfig, write_run_config
from backend.envs import DeskEnv, make_env
from backend.metrics import STATUS_DIVERGED, EpochRecord, pearson_r, report
from backend.per import PrioritizedTransitionBuffer
from backend.replay import STRATEGY_ENERGY, STRATEGY_UNIFORM, Episode, ReplayBuffer, relabel_future
from utils.constants import STRATEGY_EBP, STRATEGY_PER
from utils.errors import TrainingDivergenceError, UndefinedCorrelationError
from utils.helpers import ensure_dir, format_percentage, format_time

logger = logging.getLogger(__name__)

Policy = Callable[[DeskEnv, np.ndarray, np.ndarray], np.ndarray]

EVAL_SEED_OFFSET = 1_000_003


def rollout(env: DeskEnv, policy: Policy, seed: Optional[int] = None,
            goal: Optional[np.ndarray] = None) -> Episode:
    """
    Run one full-horizon episode and package it for the replay buffer.

    `seed` reseeds the env before the reset; `goal` fixes the desired goal.
    """
    obs, _ = env.reset(seed=seed, options=None if goal is None else {"goal": goal})
    observation, desired = obs["observation"], obs["desired_goal"]
    observations = [observation]
    actions, rewards = [], []
    states = [env.object_state()]
    goal_vectors = [obs["achieved_goal"]]

    done = False
    while not done:
        action = policy(env, observation, desired)
        obs, reward, terminated, truncated, _ = env.step(action)
        observation = obs["observation"]
        observations.append(observation)
        actions.append(np.clip(action, env.action_space.low, env.action_space.high))
        rewards.append(reward)
        states.append(env.object_state())
        goal_vectors.append(obs["achieved_goal"])
        done = terminated or truncated

    return Episode(
        observations=np.array(observations),
        actions=np.array(actions),
        rewards=np.array(rewards, dtype=np.float64),
        goal=desired,
        achieved_goals=states,
        goal_vectors=np.array(goal_vectors),
    )


def agent_policy(agent: DdpgAgent, explore: bool) -> Policy:
    return lambda env, observation, goal: agent.act(observation, goal, explore=explore)


def random_policy(rng: np.random.Generator) -> Policy:
    return lambda env, observation, goal: rng.uniform(env.action_space.low, env.action_space.high)


def evaluate(agent: Union[DdpgAgent, Policy], env: DeskEnv, episodes: int, seed: int) -> float:
    """
    Mean success rate of a deterministic policy.

    Success means reward 0 at the final timestep. A DdpgAgent is run
    without noise; any other callable is used as the policy directly
    (scripted policies with a `reset()` are reset before each episode).

    Raises:
        ValueError: If episodes < 1
    """
    if episodes < 1:
        raise ValueError(f"Evaluation needs at least one episode, got {episodes}")

    policy = agent_policy(agent, explore=False) if isinstance(agent, DdpgAgent) else agent
    successes = 0
    for i in range(episodes):
        if hasattr(policy, "reset"):
            policy.reset()
        successes += rollout(env, policy, seed=seed if i == 0 else None).success
    return successes / episodes


def store_transitions(store: PrioritizedTransitionBuffer, episode: Episode, her_ratio: float,
                      rng: np.random.Generator, reward_fn) -> None:
    """Write an episode into the prioritized store, relabeling each transition with probability her_ratio."""
    T = episode.horizon
    for t in range(T):
        goal, reward, relabeled = episode.goal, float(episode.rewards[t]), False
        if rng.random() < her_ratio and t < T - 1:
            goal, reward = relabel_future(episode, t, rng, reward_fn)
            relabeled = True
        store.insert(episode.observations[t], episode.actions[t], reward,
                     episode.observations[t + 1], goal, t == T - 1, relabeled)


def episode_td_magnitudes(agent: DdpgAgent, episodes: List[Episode]) -> np.ndarray:
    """Mean |TD error| of each episode's original-goal transitions under the current networks."""
    T = np.array([ep.horizon for ep in episodes])
    observations = np.concatenate([ep.observations[:-1] for ep in episodes])
    next_observations = np.concatenate([ep.observations[1:] for ep in episodes])
    actions = np.concatenate([ep.actions for ep in episodes])
    rewards = np.concatenate([ep.rewards for ep in episodes])
    goals = np.concatenate([np.repeat(ep.goal[None, :], ep.horizon, axis=0) for ep in episodes])

    delta = np.abs(agent.td_errors(observations, actions, rewards, next_observations, goals))
    bounds = np.concatenate([[0], np.cumsum(T)])
    return np.array([delta[bounds[i]:bounds[i + 1]].mean() for i in range(len(episodes))])


def correlation_epoch(epochs: int) -> int:
    """Epoch at half of the training budget."""
    return min(epochs // 2, epochs - 1)


class SeedRun:
    """Mutable state of one seeded training run."""

    def __init__(self, config: RunConfig, seed: int):
        self.config = config
        self.seed = seed
        self.env = make_env(config.env, seed, config.dt)
        self.eval_env = make_env(config.env, seed + EVAL_SEED_OFFSET, config.dt)
        task = self.env.task

        self.rng = np.random.default_rng(seed)
        self.agent = DdpgAgent(task.obs_dim, task.goal_dim, task.action_dim, config.agent_config(), seed)
        buffer_strategy = STRATEGY_ENERGY if config.strategy == STRATEGY_EBP else STRATEGY_UNIFORM
        self.buffer = ReplayBuffer(config.buffer_episodes, self.env.compute_reward,
                                   config.energy_params(task.e_tran_max), buffer_strategy)
        self.store = None
        if config.strategy == STRATEGY_PER:
            self.store = PrioritizedTransitionBuffer(
                config.buffer_episodes * task.horizon, task.obs_dim, task.action_dim,
                task.goal_dim, config.per_config(),
            )

        self.episodes_done = 0
        self.cumulative_samples = 0
        self.explore = agent_policy(self.agent, explore=True)
        self.warmup = random_policy(self.agent.rng)

    def collect_episode(self) -> None:
        policy = self.warmup if self.episodes_done < self.config.warmup_episodes else self.explore
        episode = rollout(self.env, policy)
        self.buffer.insert(episode)
        self.agent.observe(episode.observations, np.vstack([episode.goal_vectors, episode.goal]))
        if self.store is not None:
            store_transitions(self.store, episode, self.config.her_ratio, self.rng, self.env.compute_reward)
        self.episodes_done += 1
        self.cumulative_samples += episode.horizon

    def optimize(self) -> List[float]:
        losses = []
        for _ in range(self.config.optimization_steps):
            if self.store is not None:
                indices, batch = self.store.sample(self.config.batch_size, self.rng)
                critic_loss, _, td_errors = self.agent.train_step(batch)
                self.store.update_priorities(indices, td_errors)
            else:
                batch = self.buffer.make_batch(self.config.batch_size, self.config.her_ratio, self.rng)
                critic_loss, _, _ = self.agent.train_step(batch)
            losses.append(critic_loss)
        if self.config.optimization_steps:
            self.agent.update_targets()
        return losses

    def measure_correlation(self) -> float:
        episodes = self.buffer.stored_episodes()
        try:
            return pearson_r([ep.trajectory_energy for ep in episodes],
                             episode_td_magnitudes(self.agent, episodes))
        except UndefinedCorrelationError as e:
            logger.warning(f"Seed {self.seed}: {e}; recording correlation as missing")
            return math.nan

    def run_epoch(self, epoch: int) -> EpochRecord:
        start = time.perf_counter()
        losses: List[float] = []
        for _ in range(self.config.episodes_per_epoch):
            self.collect_episode()
            losses.extend(self.optimize())

        success = evaluate(self.agent, self.eval_env, self.config.eval_episodes,
                           seed=self.seed * EVAL_SEED_OFFSET + epoch)
        r = self.measure_correlation() if epoch == correlation_epoch(self.config.epochs) else math.nan
        mean_energy, max_energy = self.buffer.energy_stats()

        return EpochRecord(
            epoch=epoch,
            success_rate=success,
            cumulative_samples=self.cumulative_samples,
            mean_energy=mean_energy,
            max_energy=max_energy,
            pearson_r=r,
            critic_loss=float(np.mean(losses)) if losses else math.nan,
            wall_clock=time.perf_counter() - start,
        )


def train_seed(config: RunConfig, seed: int, output_dir: Optional[Path] = None) -> List[EpochRecord]:
    """
    Train one seed for `config.epochs` epochs.

    Divergence ends the seed with a final record whose status is "diverged".
    The best-evaluated policy is checkpointed to output_dir/best_seed<k>.npz.
    """
    run = SeedRun(config, seed)
    records: List[EpochRecord] = []
    best = -1.0

    for epoch in range(config.epochs):
        try:
            record = run.run_epoch(epoch)
        except TrainingDivergenceError as e:
            logger.error(f"✗ Seed {seed} diverged in epoch {epoch}: {e}")
            records.append(EpochRecord(epoch=epoch, success_rate=math.nan,
                                       cumulative_samples=run.cumulative_samples,
                                       status=STATUS_DIVERGED))
            break

        records.append(record)
        logger.info(
            f"✓ [{config.strategy}] seed {seed} epoch {epoch}: success {format_percentage(record.success_rate)}, "
            f"samples {record.cumulative_samples}, mean energy {record.mean_energy:.4f} "
            f"({format_time(record.wall_clock)})"
        )
        if record.success_rate > best:
            best = record.success_rate
            if output_dir is not None:
                save_checkpoint(run.agent, output_dir / f"best_seed{seed}.npz")

    if output_dir is not None:
        run.buffer.export_episode_log(output_dir / f"episodes_seed{seed}.jsonl")
        run.eval_env.export_trace(output_dir / f"trace_seed{seed}.jsonl")
    return records


def train(config: RunConfig, output_dir: Optional[Union[str, Path]] = None) -> Dict[int, List[EpochRecord]]:
    """
    Train every seed of the config in order and, with an output directory,
    write the CSV report next to the checkpoints.

    Returns:
        Dict[int, List[EpochRecord]]: records per seed
    """
    out = ensure_dir(output_dir) if output_dir is not None else None
    if out is not None:
        write_run_config(config, out / "run.cfg")
    logger.info(f"Training {config.strategy} on {config.env} for seeds {list(config.seeds)}")

    results: Dict[int, List[EpochRecord]] = {}
    for seed in config.seeds:
        results[seed] = train_seed(config, seed, out)

    if out is not None:
        report(results, out, config.success_threshold, env=config.env, strategy=config.strategy)
    return results
