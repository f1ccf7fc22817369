"""2-D point-mass with a goal disc: ``s' = clip(s + a)``, ``|a|_inf <= max_step``.

Reachability and optimal behaviour are analytic here, which makes it a handy
desk-scale stand-in for continuous control benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset, make_dataset


@dataclass(frozen=True)
class PointMassEnv:
    low: float = -1.0
    high: float = 1.0
    max_step: float = 0.2
    goal: tuple[float, float] = (0.7, 0.7)
    goal_radius: float = 0.15
    horizon: int = 50
    start_low: float = -0.9
    start_high: float = -0.5
    state_dim: int = field(default=2, init=False)
    action_dim: int = field(default=2, init=False)

    @property
    def action_low(self) -> np.ndarray:
        return np.full(self.action_dim, -self.max_step)

    @property
    def action_high(self) -> np.ndarray:
        return np.full(self.action_dim, self.max_step)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.start_low, self.start_high, size=self.state_dim)

    def dynamics(self, s, a) -> np.ndarray:
        a = np.clip(np.asarray(a, dtype=np.float64), -self.max_step, self.max_step)
        return np.clip(np.asarray(s, dtype=np.float64) + a, self.low, self.high)

    def goal_distance(self, s) -> np.ndarray:
        return np.linalg.norm(np.asarray(s, dtype=np.float64) - np.asarray(self.goal), axis=-1)

    def reward(self, s, s_next) -> np.ndarray:
        return -self.goal_distance(s_next)

    def is_goal(self, s) -> np.ndarray:
        return self.goal_distance(s) <= self.goal_radius

    def step(self, s, a) -> tuple[np.ndarray, float, bool]:
        sn = self.dynamics(s, a)
        return sn, float(self.reward(s, sn)), bool(self.is_goal(sn))

    def truly_reachable(self, s, s_next, tol: float = 1e-9) -> bool:
        """Ground truth one-step reachability (inside the box this is an L-inf ball)."""
        return bool(np.max(np.abs(np.asarray(s_next) - np.asarray(s))) <= self.max_step + tol)


Behavior = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def scripted_behavior(env: PointMassEnv, speed: float = 0.5, noise_std: float = 0.1) -> Behavior:
    """Heads for the goal at ``speed * max_step`` with Gaussian action noise."""
    goal = np.asarray(env.goal, dtype=np.float64)

    def act(s, rng):
        d = goal - s
        n = np.linalg.norm(d)
        a = speed * env.max_step * d / n if n > 0 else np.zeros_like(d)
        a = a + rng.normal(0.0, noise_std, size=a.shape)
        return np.clip(a, env.action_low, env.action_high)

    return act


def random_behavior(env: PointMassEnv) -> Behavior:
    def act(s, rng):
        return rng.uniform(env.action_low, env.action_high)

    return act


def run_episode(env: PointMassEnv, act: Callable[[np.ndarray], np.ndarray], s0) -> list[tuple]:
    recs = []
    s = np.asarray(s0, dtype=np.float64)
    for _ in range(env.horizon):
        a = np.clip(np.asarray(act(s), dtype=np.float64).reshape(-1), env.action_low, env.action_high)
        sn, r, done = env.step(s, a)
        recs.append((s, a, r, sn, done))
        s = sn
        if done:
            break
    return recs


def generate_dataset(
    env: PointMassEnv,
    behavior: Behavior,
    n_episodes: int | None = None,
    n_transitions: int | None = None,
    seed: int = 0,
    uniform_starts: bool = False,
    name: str = "scripted",
) -> Dataset:
    """Roll out a behaviour policy until ``n_episodes`` or ``n_transitions`` is reached."""
    if n_episodes is None and n_transitions is None:
        raise ValueError("give n_episodes or n_transitions")
    rng = np.random.default_rng(seed)
    trajs, total = [], 0
    while True:
        if n_episodes is not None and len(trajs) >= n_episodes:
            break
        if n_transitions is not None and total >= n_transitions:
            break
        s0 = rng.uniform(env.low, env.high, size=env.state_dim) if uniform_starts else env.reset(rng)
        recs = run_episode(env, lambda s: behavior(s, rng), s0)
        if n_transitions is not None:
            recs = recs[: n_transitions - total]
        trajs.append(recs)
        total += len(recs)
    meta = {"source": "pointmass", "behavior": name, "seed": seed}
    return make_dataset(trajs, env.state_dim, env.action_dim, metadata=meta)


def evaluate_policy(env: PointMassEnv, policy: Callable[[np.ndarray], np.ndarray], episodes: int = 10, seed: int = 0) -> np.ndarray:
    """Undiscounted returns of a deterministic policy from sampled start states."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(episodes):
        recs = run_episode(env, policy, env.reset(rng))
        out.append(sum(r for _, _, r, _, _ in recs))
    return np.array(out)


def uniform_transitions(env: PointMassEnv, n: int, seed: int = 0) -> Dataset:
    """Independent one-step transitions from states far enough inside the box that
    ``s + a`` is never clipped, so the data follow ``s' = s + a`` exactly."""
    rng = np.random.default_rng(seed)
    lo, hi = env.low + env.max_step, env.high - env.max_step
    trajs = []
    for _ in range(n):
        s = rng.uniform(lo, hi, size=env.state_dim)
        a = rng.uniform(env.action_low, env.action_high)
        sn, r, done = env.step(s, a)
        trajs.append([(s, a, r, sn, done)])
    return make_dataset(trajs, env.state_dim, env.action_dim, metadata={"source": "pointmass", "behavior": "uniform", "seed": seed})
