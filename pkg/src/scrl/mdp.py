"""Deterministic MDPs, state-constrained MDPs and exact rollout evaluation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class PolicyEvaluationError(RuntimeError):
    """Raised when a rollout reaches a non-terminal state the policy does not cover."""

    def __init__(self, state: int, message: str | None = None):
        self.state = state
        super().__init__(message or f"policy undefined at state {state}")


class ReachabilityError(ValueError):
    pass


class CoverageError(ValueError):
    pass


def state_key(vec) -> bytes:
    """Canonical hash key of a state vector: the raw float64 bytes."""
    return np.ascontiguousarray(vec, dtype=np.float64).tobytes()


@dataclass(frozen=True)
class DeterministicMdp:
    states: np.ndarray  # (n_states, state_dim)
    actions: np.ndarray  # (n_actions, action_dim)
    transition: np.ndarray  # (n_states, n_actions) -> next state id
    rewards: Mapping[tuple[int, int], float]
    discount: float
    terminal_states: frozenset[int] = frozenset()
    action_names: tuple[str, ...] | None = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        actions = np.asarray(self.actions, dtype=np.float64)
        if actions.ndim == 1:
            actions = actions[:, None]
        trans = np.asarray(self.transition, dtype=np.int64)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "terminal_states", frozenset(int(t) for t in self.terminal_states))
        if trans.shape != (len(states), len(actions)):
            raise ValueError(f"transition shape {trans.shape} != ({len(states)}, {len(actions)})")
        if len(states) and (trans.min() < 0 or trans.max() >= len(states)):
            raise ValueError("transition refers to unknown state ids")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        for s in range(len(states)):
            for a in range(len(actions)):
                if (s, int(trans[s, a])) not in self.rewards:
                    raise ValueError(f"reward undefined for transition ({s}, {int(trans[s, a])})")
        index = {state_key(v): i for i, v in enumerate(states)}
        object.__setattr__(self, "_index", index)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def reward_bound(self) -> float:
        return max((abs(r) for r in self.rewards.values()), default=0.0)

    def index_of(self, vec) -> int:
        try:
            return self._index[state_key(vec)]
        except KeyError:
            raise KeyError(f"state {np.asarray(vec).tolist()} is not part of the MDP") from None

    def reward(self, s: int, s_next: int) -> float:
        return float(self.rewards[(s, s_next)])

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal_states

    def successors(self, s: int) -> list[tuple[int, float]]:
        """Distinct next states of ``s`` with their rewards (empty for terminals)."""
        if self.is_terminal(s):
            return []
        seen = dict.fromkeys(int(x) for x in self.transition[s])
        return [(sn, self.reward(s, sn)) for sn in seen]

    def reachable(self, s: int) -> set[int]:
        return {int(x) for x in self.transition[s]}


def step(mdp: DeterministicMdp, s: int, a: int) -> tuple[int, float]:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state id {s} out of range [0, {mdp.n_states})")
    if not 0 <= a < mdp.n_actions:
        raise IndexError(f"action id {a} out of range [0, {mdp.n_actions})")
    sn = int(mdp.transition[s, a])
    return sn, mdp.reward(s, sn)


def inverse_dynamics_lookup(mdp: DeterministicMdp, s: int, s_next: int) -> int:
    """Lowest action id taking ``s`` to ``s_next``."""
    hits = np.flatnonzero(mdp.transition[s] == s_next)
    if hits.size == 0:
        raise ReachabilityError(f"state {s_next} is not reachable from state {s} in one step")
    return int(hits[0])


def best_path(mdp: DeterministicMdp, s: int, target: int, max_hops: int) -> tuple[list[int], float] | None:
    """Action sequence of at most ``max_hops`` steps from ``s`` to ``target``.

    Shorter sequences win; among equal lengths the highest discounted reward wins,
    then the lexicographically smallest action sequence. Paths may not pass through
    a terminal state before their last step.
    """
    for length in range(1, max_hops + 1):
        best = None
        for seq in itertools.product(range(mdp.n_actions), repeat=length):
            cur, total, ok = s, 0.0, True
            for i, a in enumerate(seq):
                if i > 0 and mdp.is_terminal(cur):
                    ok = False
                    break
                nxt, r = step(mdp, cur, a)
                total += mdp.discount**i * r
                cur = nxt
            if ok and cur == target and (best is None or total > best[1]):
                best = (list(seq), total)
        if best is not None:
            return best
    return None


def policy_value(
    mdp: DeterministicMdp,
    policy: Mapping[int, int],
    s0: int,
    kind: str = "action",
    max_hops: int = 1,
    on_blank: str = "raise",
) -> float:
    """Discounted return of a deterministic policy rolled out from ``s0``.

    ``kind="action"`` maps state ids to action ids; ``kind="state"`` maps state ids
    to target next-state ids, executed through the shortest action path of at most
    ``max_hops`` steps. The rollout stops at terminals, or once ``gamma**t * c``
    drops below 1e-12. With ``on_blank="stop"`` an uncovered state ends the
    rollout with zero further reward instead of raising.
    """
    c = mdp.reward_bound
    gamma = mdp.discount
    total, t, s = 0.0, 0, s0
    while not mdp.is_terminal(s):
        if c == 0.0 or gamma**t * c < 1e-12:
            break
        if s not in policy:
            if on_blank == "stop":
                break
            raise PolicyEvaluationError(s)
        if kind == "action":
            actions = [policy[s]]
        else:
            path = best_path(mdp, s, policy[s], max_hops)
            if path is None:
                raise ReachabilityError(f"policy target {policy[s]} unreachable from {s}")
            actions = path[0]
        for a in actions:
            s, r = step(mdp, s, a)
            total += gamma**t * r
            t += 1
            if mdp.is_terminal(s):
                break
        if gamma == 0.0:
            break
    return total


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    discount: float = 0.9,
    reward_low: float = -1.0,
    reward_high: float = 1.0,
    n_terminal: int = 1,
) -> DeterministicMdp:
    """Random deterministic MDP with state-pair rewards, used for property tests."""
    trans = rng.integers(0, n_states, size=(n_states, n_actions))
    terminals = frozenset(int(t) for t in rng.choice(n_states, size=n_terminal, replace=False)) if n_terminal else frozenset()
    table = rng.uniform(reward_low, reward_high, size=(n_states, n_states))
    rewards = {(s, int(trans[s, a])): float(table[s, trans[s, a]]) for s in range(n_states) for a in range(n_actions)}
    return DeterministicMdp(
        states=np.arange(n_states, dtype=np.float64)[:, None],
        actions=np.arange(n_actions, dtype=np.float64)[:, None],
        transition=trans,
        rewards=rewards,
        discount=discount,
        terminal_states=terminals,
    )


@dataclass(frozen=True)
class StateConstrainedMdp:
    """Edge-level MDP over dataset states plus an absorbing sink.

    ``edges[s]`` lists the reachable dataset states of ``s``; dataset states with no
    edges fall through to the sink, which pays ``sink_reward``.
    """

    states: np.ndarray  # dataset states; index len(states) is the sink
    edges: Mapping[int, tuple[int, ...]]
    rewards: Mapping[tuple[int, int], float]
    discount: float
    terminal_states: frozenset[int]
    sink_reward: float = 0.0

    @property
    def terminal_sink(self) -> int:
        return len(self.states)

    @property
    def n_states(self) -> int:
        return len(self.states) + 1

    def is_terminal(self, s: int) -> bool:
        return s == self.terminal_sink or s in self.terminal_states

    def successors(self, s: int) -> list[tuple[int, float]]:
        if self.is_terminal(s):
            return []
        nxt = self.edges.get(s, ())
        if not nxt:
            return [(self.terminal_sink, self.sink_reward)]
        return [(sn, self.rewards[(s, sn)]) for sn in nxt]

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self.edges.values())


def build_state_constrained_mdp(dataset, reach, sink_reward: float = 0.0, reward_fn=None, discount: float = 0.99) -> StateConstrainedMdp:
    """Construct the state-constrained MDP of a dataset under a reachability index.

    Rewards of recorded pairs come from the dataset; other reachable pairs use
    ``reward_fn(s_vec, s_next_vec)``.
    """
    from .dataset import unique_states

    states = unique_states(dataset)
    missing = [i for i in range(len(states)) if i not in reach]
    if missing:
        raise CoverageError(f"reachability index misses dataset states {missing}")
    index = {state_key(v): i for i, v in enumerate(states)}
    recorded: dict[tuple[int, int], float] = {}
    terminals = set()
    for rec in dataset.records:
        s, sn = index[state_key(rec.s)], index[state_key(rec.s_next)]
        recorded.setdefault((s, sn), rec.r)
        if rec.terminal:
            terminals.add(sn)
    edges, rewards = {}, {}
    for s in range(len(states)):
        if s in terminals:
            edges[s] = ()
            continue
        nxt = tuple(int(c) for c in reach.candidates(s))
        for sn in nxt:
            if (s, sn) in recorded:
                rewards[(s, sn)] = recorded[(s, sn)]
            elif reward_fn is not None:
                rewards[(s, sn)] = float(reward_fn(states[s], states[sn]))
            else:
                raise ValueError(f"no reward for reachable pair ({s}, {sn}) and no reward function")
        edges[s] = nxt
    return StateConstrainedMdp(
        states=states,
        edges=edges,
        rewards=rewards,
        discount=discount,
        terminal_states=frozenset(terminals),
        sink_reward=sink_reward,
    )

