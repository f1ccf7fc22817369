"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from scrl.dataset import make_dataset, rollout
from scrl.mdp import DeterministicMdp, random_mdp
from scrl.tabular import TabularView


def coverage_dataset(mdp: DeterministicMdp):
    """Every (s, a) of every non-terminal state as its own one-step trajectory."""
    trajs = []
    for s in range(mdp.n_states):
        if mdp.is_terminal(s):
            continue
        for a in range(mdp.n_actions):
            sn = int(mdp.transition[s, a])
            trajs.append([(mdp.states[s], mdp.actions[a], mdp.reward(s, sn), mdp.states[sn], mdp.is_terminal(sn))])
    return make_dataset(trajs, mdp.states.shape[1], mdp.actions.shape[1])


def partial_dataset(mdp: DeterministicMdp, rng: np.random.Generator, n_traj: int = 3, max_len: int = 6):
    """A few rollouts of a fixed random behaviour policy from random starts."""
    behavior = {s: int(rng.integers(mdp.n_actions)) for s in range(mdp.n_states)}
    trajs = []
    for t in range(n_traj):
        s0 = int(rng.integers(mdp.n_states))
        recs = rollout(mdp, behavior, s0, max_len, trajectory_id=t)
        if recs:
            trajs.append([(r.s, r.a, r.r, r.s_next, r.terminal) for r in recs])
    return make_dataset(trajs, mdp.states.shape[1], mdp.actions.shape[1])


def small_random_mdp(seed: int, reward_low: float = -1.0, reward_high: float = 1.0, discount: float = 0.9):
    rng = np.random.default_rng(seed)
    n_states = int(rng.integers(3, 13))
    n_actions = int(rng.integers(1, 5))
    return random_mdp(rng, n_states, n_actions, discount=discount, reward_low=reward_low, reward_high=reward_high)


def mdp_ids(mdp: DeterministicMdp, view: TabularView) -> list[int]:
    return [mdp.index_of(v) for v in view.states]


def rel_error(a, b) -> float:
    a, b = np.concatenate([np.ravel(x) for x in a]), np.concatenate([np.ravel(x) for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def fd_grads(loss_fn, params: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn()`` with respect to each array in ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss_fn()
            p[i] = old - h
            down = loss_fn()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relu_margin(cache) -> float:
    """Smallest |pre-activation| over hidden layers; finite differences are only valid away from the kinks."""
    hidden = cache[1:-1]
    return min((float(np.min(np.abs(z))) for z in hidden), default=np.inf)
