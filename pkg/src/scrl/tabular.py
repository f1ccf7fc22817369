"""Tabular QSA / QSS learning, the batch- and state-constrained learners, greedy
policy extraction and an exact value-iteration oracle.

Learners work in the dataset's own state numbering: ids index
``unique_states(dataset)``. Actions are numbered by first appearance in the
dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .dataset import Dataset, state_index, unique_states
from .mdp import DeterministicMdp, inverse_dynamics_lookup, state_key
from .reachability import ReachabilityIndex, make_index

__all__ = [
    "QssTable",
    "QsaTable",
    "LearnerConfig",
    "TabularView",
    "qsa_learning_step",
    "qss_learning_step",
    "bcql_train",
    "scql_train",
    "extract_policy_scql",
    "extract_policy_bcql",
    "value_iteration_oracle",
    "inverse_dynamics_lookup",
    "qsa_from_qss",
    "mdp_reach_index",
    "mdp_reward_fn",
    "multistep_edge_rewards",
    "to_mdp_policy",
    "reaches_goal",
    "success_states",
    "behavior_cloning_policy",
    "save_table",
    "load_table",
]


class UpdateError(RuntimeError):
    pass


class RewardConfigError(ValueError):
    pass


@dataclass
class QssTable:
    values: dict[tuple[int, int], float] = field(default_factory=dict)
    init_value: float = 0.0
    sweeps: int = 0

    def __getitem__(self, key: tuple[int, int]) -> float:
        return self.values.get(key, self.init_value)

    def __setitem__(self, key: tuple[int, int], value: float) -> None:
        self.values[key] = float(value)

    def to_json(self) -> str:
        return json.dumps({"init_value": self.init_value, "values": [[s, sn, v] for (s, sn), v in sorted(self.values.items())]})


@dataclass
class QsaTable(QssTable):
    pass


@dataclass
class LearnerConfig:
    alpha: float = 0.25
    gamma: float = 0.99
    sweeps: int = 100
    seed: int = 0
    tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")


def _bootstrap(table, s_next, feasible, terminal, bootstrap_empty):
    if terminal:
        return 0.0
    feasible = list(feasible)
    if not feasible:
        if bootstrap_empty is None:
            raise UpdateError(f"no feasible continuation from non-terminal state {s_next}")
        return bootstrap_empty
    return max(table[(s_next, x)] for x in feasible)


def qsa_learning_step(table: QsaTable, transition, feasible_next: Iterable[int], cfg: LearnerConfig, bootstrap_empty: float | None = None) -> QsaTable:
    """One QSA update; ``transition = (s, a, r, s_next, terminal)``."""
    s, a, r, sn, terminal = transition
    target = r + cfg.gamma * _bootstrap(table, sn, feasible_next, terminal, bootstrap_empty)
    table[(s, a)] = (1 - cfg.alpha) * table[(s, a)] + cfg.alpha * target
    return table


def qss_learning_step(
    table: QssTable,
    transition,
    feasible_next: Iterable[int],
    cfg: LearnerConfig,
    bootstrap_empty: float | None = None,
    discount_power: int = 1,
) -> QssTable:
    """One QSS update; ``transition = (s, r, s_next, terminal)``.

    ``discount_power`` is the number of environment steps the pair spans.
    """
    s, r, sn, terminal = transition
    target = r + cfg.gamma**discount_power * _bootstrap(table, sn, feasible_next, terminal, bootstrap_empty)
    table[(s, sn)] = (1 - cfg.alpha) * table[(s, sn)] + cfg.alpha * target
    return table


class TabularView:
    """Integer view of a discrete dataset: state/action ids and deduplicated transitions."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.states = unique_states(dataset)
        self.index = state_index(self.states)
        actions, a_index = [], {}
        trans: dict[tuple[int, int], tuple[float, int, bool]] = {}
        pair_reward: dict[tuple[int, int], float] = {}
        terminals = set()
        for rec in dataset.records:
            ka = state_key(rec.a)
            if ka not in a_index:
                a_index[ka] = len(actions)
                actions.append(np.asarray(rec.a, dtype=np.float64))
            s, sn = self.index[state_key(rec.s)], self.index[state_key(rec.s_next)]
            trans.setdefault((s, a_index[ka]), (rec.r, sn, rec.terminal))
            pair_reward.setdefault((s, sn), rec.r)
            if rec.terminal:
                terminals.add(sn)
        self.actions = np.array(actions) if actions else np.zeros((0, dataset.action_dim))
        self.action_index = a_index
        self.transitions = trans
        self.pair_reward = pair_reward
        self.terminals = terminals
        self.recorded_actions: dict[int, list[int]] = {}
        self.recorded_next: dict[int, list[int]] = {}
        for (s, a), (_, sn, _) in sorted(trans.items()):
            self.recorded_actions.setdefault(s, []).append(a)
            nxt = self.recorded_next.setdefault(s, [])
            if sn not in nxt:
                nxt.append(sn)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_id(self, vec) -> int:
        return self.index[state_key(vec)]


def bcql_train(dataset: Dataset, cfg: LearnerConfig, on_sweep: Callable | None = None) -> QsaTable:
    """Batch-constrained QSA-learning over the dataset's transitions."""
    view = TabularView(dataset)
    table = QsaTable()
    items = sorted(view.transitions.items())
    for sweep in range(cfg.sweeps):
        delta = 0.0
        for (s, a), (r, sn, done) in items:
            old = table[(s, a)]
            qsa_learning_step(table, (s, a, r, sn, done), view.recorded_actions.get(sn, ()), cfg, bootstrap_empty=table.init_value)
            delta = max(delta, abs(table[(s, a)] - old))
        table.sweeps = sweep + 1
        if on_sweep is not None:
            on_sweep(table, sweep)
        if delta < cfg.tol:
            break
    return table


def _reward_value(fn, s_vec, sn_vec) -> float:
    return float(np.asarray(fn(s_vec, sn_vec), dtype=np.float64).reshape(-1)[0])


def scql_pairs(view: TabularView, reach: ReachabilityIndex, reward_fn=None, edge_rewards=None):
    """Expand a reachability index into ``(s, s', reward, n_steps)`` update pairs."""
    pairs = []
    for s in range(view.n_states):
        if s in view.terminals:
            continue
        for c, k in zip(reach.candidates(s), reach.steps_of(s)):
            c, k = int(c), int(k)
            if edge_rewards is not None and (s, c) in edge_rewards:
                r, k = edge_rewards[(s, c)]
            elif k == 1 and (s, c) in view.pair_reward:
                r = view.pair_reward[(s, c)]
            elif k == 1 and reward_fn is not None:
                r = _reward_value(reward_fn, view.states[s], view.states[c])
            elif k > 1:
                continue  # multi-step pair without a realisable path
            else:
                raise RewardConfigError(f"no reward for reachable pair ({s}, {c}) and no reward function or model")
            pairs.append((s, c, float(r), int(k)))
    return pairs


def scql_train(
    dataset: Dataset,
    reach: ReachabilityIndex,
    cfg: LearnerConfig,
    reward_fn=None,
    edge_rewards: Mapping[tuple[int, int], tuple[float, int]] | None = None,
    on_sweep: Callable | None = None,
) -> QssTable:
    """State-constrained QSS-learning over every reachable dataset pair.

    Unseen pairs take their reward from ``reward_fn(s_vec, s_next_vec)``; pairs
    spanning several steps take ``(discounted reward, steps)`` from
    ``edge_rewards``.
    """
    view = TabularView(dataset)
    pairs = scql_pairs(view, reach, reward_fn, edge_rewards)
    feasible = {s: [int(c) for c in reach.candidates(s)] for s in range(view.n_states)}
    valid = {(s, c) for s, c, _, _ in pairs}
    for s in feasible:
        feasible[s] = [c for c in feasible[s] if (s, c) in valid]
    table = QssTable()
    for sweep in range(cfg.sweeps):
        delta = 0.0
        for s, c, r, k in pairs:
            old = table[(s, c)]
            qss_learning_step(table, (s, r, c, c in view.terminals), feasible.get(c, ()), cfg, bootstrap_empty=table.init_value, discount_power=k)
            delta = max(delta, abs(table[(s, c)] - old))
        table.sweeps = sweep + 1
        if on_sweep is not None:
            on_sweep(table, sweep)
        if delta < cfg.tol:
            break
    return table


def _argmax(options: list[int], values: list[float]) -> int:
    best = max(values)
    return min(o for o, v in zip(options, values) if v == best)


def extract_policy_scql(table: QssTable, n_states: int, reach: ReachabilityIndex, terminals: Iterable[int] = ()) -> dict[int, int]:
    """Greedy next-state policy; states with nothing reachable are left unmapped."""
    terminals = set(terminals)
    policy = {}
    for s in range(n_states):
        if s in terminals:
            continue
        opts = [int(c) for c in reach.candidates(s) if (s, int(c)) in table.values]
        if not opts:
            opts = [int(c) for c in reach.candidates(s)]
        if opts:
            policy[s] = _argmax(opts, [table[(s, c)] for c in opts])
    return policy


def extract_policy_bcql(table: QsaTable, dataset: Dataset | TabularView) -> dict[int, int]:
    """Greedy action over the actions recorded at each state."""
    view = dataset if isinstance(dataset, TabularView) else TabularView(dataset)
    policy = {}
    for s, acts in view.recorded_actions.items():
        policy[s] = _argmax(acts, [table[(s, a)] for a in acts])
    return policy


def value_iteration_oracle(mdp, tol: float = 1e-12, max_iter: int = 100_000, dead_end_value: float | None = None) -> QssTable:
    """Exact optimal QSS-values by synchronous Bellman iteration.

    Works on anything exposing ``n_states``, ``is_terminal`` and ``successors``.
    """
    n = mdp.n_states
    gamma = mdp.discount
    succ = [mdp.successors(s) for s in range(n)]
    dead = dead_end_value if dead_end_value is not None else getattr(mdp, "sink_reward", 0.0)
    v = np.zeros(n)
    for _ in range(max_iter):
        new = np.zeros(n)
        for s in range(n):
            if mdp.is_terminal(s):
                continue
            new[s] = max((r + gamma * v[sn] for sn, r in succ[s]), default=dead)
        diff = np.max(np.abs(new - v)) if n else 0.0
        v = new
        if diff < tol:
            break
    table = QssTable()
    for s in range(n):
        for sn, r in succ[s]:
            table[(s, sn)] = r + gamma * v[sn]
    return table


def qsa_from_qss(mdp: DeterministicMdp, qss: QssTable) -> QsaTable:
    out = QsaTable()
    for s in range(mdp.n_states):
        if mdp.is_terminal(s):
            continue
        for a in range(mdp.n_actions):
            out[(s, a)] = qss[(s, int(mdp.transition[s, a]))]
    return out


def mdp_reach_index(mdp: DeterministicMdp, states) -> ReachabilityIndex:
    """Exact one-step reachability of an MDP restricted to the given states."""
    ids = [mdp.index_of(v) for v in states]
    where = {m: i for i, m in enumerate(ids)}
    sets = {i: {where[t] for t in mdp.reachable(m) if t in where} for i, m in enumerate(ids)}
    return make_index(sets, len(ids), None, source="exact-mdp")


def mdp_reward_fn(mdp: DeterministicMdp):
    def reward(s, s_next) -> float:
        return mdp.reward(mdp.index_of(s), mdp.index_of(s_next))

    return reward


def multistep_edge_rewards(mdp: DeterministicMdp, states, reach: ReachabilityIndex, gamma: float | None = None) -> dict:
    """Best discounted path reward and its length for every multi-step candidate pair."""
    from .mdp import best_path

    gamma = mdp.discount if gamma is None else gamma
    out = {}
    ids = [mdp.index_of(v) for v in states]
    for s in reach.cands:
        for c, k in zip(reach.candidates(s), reach.steps_of(s)):
            if k <= 1:
                continue
            found = best_path(mdp, ids[s], ids[int(c)], int(k))
            if found is None:
                continue
            seq, _ = found
            cur, total = ids[s], 0.0
            for i, a in enumerate(seq):
                nxt = int(mdp.transition[cur, a])
                total += gamma**i * mdp.reward(cur, nxt)
                cur = nxt
            out[(s, int(c))] = (total, len(seq))
    return out


def to_mdp_policy(mdp: DeterministicMdp, view: TabularView, policy: Mapping[int, int], kind: str) -> dict[int, int]:
    """Translate a dataset-id policy into MDP ids (targets for ``state``, actions for ``action``)."""
    out = {}
    for s, x in policy.items():
        ms = mdp.index_of(view.states[s])
        if kind == "state":
            out[ms] = mdp.index_of(view.states[x])
        else:
            out[ms] = int(np.flatnonzero(np.all(mdp.actions == view.actions[x], axis=1))[0])
    return out


def reaches_goal(mdp: DeterministicMdp, policy: Mapping[int, int], s0: int, kind: str = "action", max_hops: int = 1) -> bool:
    """Whether following the policy from ``s0`` ends in a terminal state."""
    from .mdp import best_path, step

    seen = set()
    s = s0
    while not mdp.is_terminal(s):
        if s in seen or s not in policy:
            return False
        seen.add(s)
        if kind == "action":
            s, _ = step(mdp, s, policy[s])
            continue
        path = best_path(mdp, s, policy[s], max_hops)
        if path is None:
            return False
        for a in path[0]:
            s, _ = step(mdp, s, a)
            if mdp.is_terminal(s):
                break
    return True


def success_states(mdp: DeterministicMdp, view: TabularView, policy: Mapping[int, int], kind: str, max_hops: int = 1) -> set[int]:
    """Dataset state ids from which the policy reaches a terminal state."""
    mp = to_mdp_policy(mdp, view, policy, kind)
    return {s for s in range(view.n_states) if reaches_goal(mdp, mp, mdp.index_of(view.states[s]), kind, max_hops)}


def behavior_cloning_policy(view: TabularView) -> dict[int, int]:
    """Most frequent recorded action per state (first recorded on ties)."""
    counts: dict[int, dict[int, int]] = {}
    for rec in view.dataset.records:
        s = view.state_id(rec.s)
        a = view.action_index[state_key(rec.a)]
        counts.setdefault(s, {}).setdefault(a, 0)
        counts[s][a] += 1
    return {s: max(c, key=lambda a: (c[a], -a)) for s, c in counts.items()}


def save_table(table: QssTable, path) -> None:
    Path(path).write_text(table.to_json() + "\n", encoding="utf-8")


def load_table(path, cls=QssTable) -> QssTable:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    t = cls(init_value=d["init_value"])
    for s, sn, v in d["values"]:
        t[(int(s), int(sn))] = v
    return t
