"""StaCQ actor-critic over reachable dataset states, and its one-step variant.

The critic scores state pairs ``Q(s, s')``. The actor outputs actions whose
predicted next state (through a frozen forward model) should score highly while
staying close to the best reachable dataset successor.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset, state_index, unique_states
from .mdp import state_key
from .nn import Adam, Mlp, mlp_backward
from .reachability import ReachabilityIndex

log = logging.getLogger(__name__)

TARGET_MODES = ("shared-min", "independent")
METRIC_FIELDS = ("iteration", "critic_loss", "actor_loss", "mean_q", "eval_return_mean", "eval_return_std")


class StacqConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class StacqConfig:
    alpha_reg: float = 1.0
    tau: float = 0.005
    gamma: float = 0.99
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    cosine_actor: bool = True
    iterations: int = 100_000
    critic_iterations: int | None = None  # one-step only; defaults to ``iterations``
    seed: int = 0
    n_critics: int = 4
    target_mode: str = "shared-min"
    noise_std: float = 0.1
    noise_is_variance: bool = False
    hidden: tuple[int, ...] = (256, 256)
    eval_interval: int = 5000
    eval_episodes: int = 10

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise StacqConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.target_mode not in TARGET_MODES:
            raise StacqConfigError(f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}")
        if self.n_critics < 1 or self.batch_size < 1 or self.iterations < 0:
            raise StacqConfigError("n_critics and batch_size must be positive and iterations non-negative")
        if self.eval_interval < 1:
            raise StacqConfigError("eval_interval must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def policy_noise(self) -> float:
        """Standard deviation of the actor-loss noise (the configured value may be a variance)."""
        return math.sqrt(self.noise_std) if self.noise_is_variance else self.noise_std


# ---------------------------------------------------------------- networks


class CriticBank:
    """Ensemble of ``Q(s, s')`` networks with matching target copies."""

    def __init__(self, critics: list[Mlp], targets: list[Mlp] | None = None, target_mode: str = "shared-min"):
        if not critics:
            raise ValueError("need at least one critic")
        if target_mode not in TARGET_MODES:
            raise StacqConfigError(f"unknown target mode {target_mode!r}")
        self.critics = critics
        self.targets = targets if targets is not None else [c.copy() for c in critics]
        if [t.sizes for t in self.targets] != [c.sizes for c in critics]:
            raise ValueError("critics and targets must share structure")
        self.target_mode = target_mode

    @classmethod
    def create(cls, n: int, state_dim: int, hidden=(256, 256), seed: int = 0, target_mode: str = "shared-min") -> "CriticBank":
        sizes = [2 * state_dim, *hidden, 1]
        return cls([Mlp(sizes, seed=seed * 1000 + 500 + k) for k in range(n)], target_mode=target_mode)

    def __len__(self) -> int:
        return len(self.critics)

    def q_all(self, s, s2, target: bool = False) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(s2)], axis=1)
        nets = self.targets if target else self.critics
        return np.stack([n(x)[:, 0] for n in nets])

    def min_q(self, s, s2, target: bool = False) -> np.ndarray:
        return self.q_all(s, s2, target).min(axis=0)

    def pair_min_q(self, states, s_idx, c_idx, target: bool = False) -> np.ndarray:
        """``min_q(states[s_idx], states[c_idx])`` without materialising the pair inputs.

        The first layer is linear in each half of the input, so it is projected
        once per distinct state and gathered per pair.
        """
        states = np.asarray(states, dtype=np.float64)
        d = states.shape[1]
        nets = self.targets if target else self.critics
        out = None
        for net in nets:
            w0 = net.weights[0]
            h = (states @ w0[:d])[s_idx] + (states @ w0[d:])[c_idx] + net.biases[0]
            for w, b in zip(net.weights[1:], net.biases[1:]):
                h = np.maximum(h, 0.0) @ w + b
            q = h[:, 0]
            out = q if out is None else np.minimum(out, q)
        return out

    def min_forward(self, s, s2):
        """Min-over-critics value with the cache needed for ``min_input_grad``."""
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(s2)], axis=1)
        outs, caches = zip(*(c.forward(x) for c in self.critics))
        q = np.stack([o[:, 0] for o in outs])
        pick = q.argmin(axis=0)
        return q[pick, np.arange(q.shape[1])], (caches, pick, np.atleast_2d(s).shape[1])

    def min_input_grad(self, cache, grad_q) -> np.ndarray:
        """Gradient of ``sum(grad_q * min_q)`` with respect to the second state."""
        caches, pick, ds = cache
        grad_q = np.asarray(grad_q, dtype=np.float64)
        out = None
        for k, (c, ch) in enumerate(zip(self.critics, caches)):
            g = np.where(pick == k, grad_q, 0.0)[:, None]
            if not np.any(g):
                continue
            gi = c.backward(ch, g)[1][:, ds:]
            out = gi if out is None else out + gi
        return out if out is not None else np.zeros((len(pick), caches[0][0].shape[1] - ds))

    def to_dict(self) -> dict:
        return {
            "critics": [c.to_dict() for c in self.critics],
            "targets": [t.to_dict() for t in self.targets],
            "target_mode": self.target_mode,
        }

    @classmethod
    def from_dict(cls, d) -> "CriticBank":
        return cls([Mlp.from_dict(c) for c in d["critics"]], [Mlp.from_dict(t) for t in d["targets"]], d["target_mode"])


class Actor:
    """Deterministic policy ``a = centre + half_width * tanh(net(s))``."""

    def __init__(self, net: Mlp, low, high, target: Mlp | None = None, noise_std: float = 0.1):
        self.net = net
        self.target = target if target is not None else net.copy()
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.noise_std = noise_std

    @classmethod
    def create(cls, state_dim: int, low, high, hidden=(256, 256), seed: int = 0, noise_std: float = 0.1) -> "Actor":
        low = np.asarray(low, dtype=np.float64)
        return cls(Mlp([state_dim, *hidden, len(low)], seed=seed * 1000 + 900), low, high, noise_std=noise_std)

    @property
    def centre(self) -> np.ndarray:
        return (self.high + self.low) / 2

    @property
    def half_width(self) -> np.ndarray:
        return (self.high - self.low) / 2

    def forward(self, s, target: bool = False):
        net = self.target if target else self.net
        z, cache = net.forward(np.atleast_2d(s))
        t = np.tanh(z)
        return self.centre + self.half_width * t, (cache, t)

    def __call__(self, s) -> np.ndarray:
        return self.forward(s)[0]

    def act(self, s) -> np.ndarray:
        """Greedy action for a single state."""
        return self(np.asarray(s, dtype=np.float64)[None])[0]

    def backward(self, cache, grad_a) -> list[np.ndarray]:
        net_cache, t = cache
        return self.net.backward(net_cache, grad_a * self.half_width * (1 - t * t))[0]

    def perturb(self, a, noise) -> tuple[np.ndarray, np.ndarray]:
        """Add noise and clip to the bounds; returns the action and the pass-through mask."""
        raw = a + noise
        return np.clip(raw, self.low, self.high), (raw >= self.low) & (raw <= self.high)

    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "target": self.target.to_dict(),
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d) -> "Actor":
        return cls(Mlp.from_dict(d["net"]), d["low"], d["high"], Mlp.from_dict(d["target"]), d["noise_std"])


# ---------------------------------------------------------------- losses


def lambda_scale(q, alpha_reg: float, floor: float = 1e-6) -> float:
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("lambda_scale needs a non-empty batch")
    denom = abs(float(q.mean()))
    if denom < floor:
        log.warning("mean |Q| %.3e below floor; using %.0e", denom, floor)
        denom = floor
    return alpha_reg / denom


def soft_update(targets: list[np.ndarray], online: list[np.ndarray], tau: float) -> list[np.ndarray]:
    """In place ``target <- tau * online + (1 - tau) * target``."""
    if len(targets) != len(online):
        raise ValueError("parameter lists differ in length")
    for t, o in zip(targets, online):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
    for t, o in zip(targets, online):
        t *= 1 - tau
        t += tau * o
    return targets


def critic_loss_and_grads(critic: Mlp, s, s2, y) -> tuple[float, list[np.ndarray]]:
    """MSE between ``Q(s, s2)`` and fixed targets ``y``."""
    return mlp_backward(critic, np.concatenate([np.atleast_2d(s), np.atleast_2d(s2)], axis=1), np.asarray(y)[:, None])


def critic_targets(r, s_next, terminal, bank: CriticBank, actor: Actor, forward, gamma: float) -> np.ndarray:
    """``r + gamma * Q'(s', f(s', pi'(s')))``; one row per critic (rows equal in shared-min mode)."""
    a_next, _ = actor.forward(s_next, target=True)
    s3 = forward(s_next, a_next)
    q = bank.q_all(s_next, s3, target=True)
    if bank.target_mode == "shared-min":
        q = np.broadcast_to(q.min(axis=0), q.shape)
    live = 1.0 - np.asarray(terminal, dtype=np.float64)
    return np.asarray(r, dtype=np.float64) + gamma * live * q


def actor_loss_and_grads(actor: Actor, s, s_hat, forward, bank: CriticBank, lam: float, noise) -> tuple[float, list[np.ndarray], np.ndarray]:
    """``mean(-lam * Q(s, f(s, pi(s) + noise))) + mse(f(s, pi(s)), s_hat)``.

    Returns the loss, actor parameter gradients and the Q values of the batch.
    ``lam`` is treated as a constant.
    """
    s = np.atleast_2d(s)
    n = len(s)
    a, a_cache = actor.forward(s)
    a_noisy, mask = actor.perturb(a, noise)
    sp_noisy, f_cache_n = forward.forward(s, a_noisy)
    q, q_cache = bank.min_forward(s, sp_noisy)
    sp, f_cache = forward.forward(s, a)
    diff = sp - s_hat
    loss = -lam * float(q.mean()) + float(np.mean(diff**2))
    g_sp_noisy = bank.min_input_grad(q_cache, np.full(n, -lam / n))
    g_a = forward.action_grad(f_cache_n, g_sp_noisy) * mask
    g_a = g_a + forward.action_grad(f_cache, 2.0 * diff / diff.size)
    return loss, actor.backward(a_cache, g_a), q


def best_reachable_ids(s_ids, reach: ReachabilityIndex, bank: CriticBank, states, fallback_ids=None) -> np.ndarray:
    """Per query state, the reachable dataset state with the largest min-critic value.

    Ties go to the smaller stored residual, then the lower id. States with no
    candidates fall back to ``fallback_ids``.
    """
    s_ids = np.asarray(s_ids, dtype=np.int64)
    states = np.asarray(states, dtype=np.float64)
    groups, cands, res = [], [], []
    for g, s in enumerate(s_ids):
        c = reach.candidates(int(s))
        groups.append(np.full(len(c), g))
        cands.append(c)
        res.append(reach.residuals_of(int(s)))
    out = np.full(len(s_ids), -1, dtype=np.int64)
    if len(s_ids) and sum(len(c) for c in cands):
        groups, cands, res = np.concatenate(groups), np.concatenate(cands).astype(np.int64), np.concatenate(res)
        q = bank.pair_min_q(states, s_ids[groups], cands)
        order = np.lexsort((cands, res, -q, groups))
        first = np.ones(len(order), dtype=bool)
        first[1:] = groups[order][1:] != groups[order][:-1]
        out[groups[order][first]] = cands[order][first]
    empty = out < 0
    if np.any(empty):
        if fallback_ids is None:
            raise ValueError(f"no reachable candidates for states {s_ids[empty].tolist()}")
        log.debug("%d states without reachable candidates; using recorded successors", int(empty.sum()))
        out[empty] = np.asarray(fallback_ids)[empty]
    return out


def best_reachable_next(s_id: int, reach: ReachabilityIndex, bank: CriticBank, states, fallback_id: int | None = None) -> np.ndarray:
    fb = None if fallback_id is None else [fallback_id]
    return np.asarray(states)[best_reachable_ids([s_id], reach, bank, states, fb)[0]]


# ---------------------------------------------------------------- data plumbing


@dataclass
class TransitionTable:
    """Dataset records as ids into ``states`` (the dataset's unique states)."""

    states: np.ndarray
    s: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    terminal: np.ndarray
    succ: np.ndarray  # record id of the next record in the same trajectory, -1 at the end
    terminal_state: np.ndarray = field(init=False)
    first_record: dict[int, list[int]] = field(init=False)

    def __post_init__(self):
        self.terminal_state = np.zeros(len(self.states), dtype=bool)
        self.terminal_state[self.s_next[self.terminal]] = True
        self.first_record = {}
        for i, s in enumerate(self.s):
            self.first_record.setdefault(int(s), []).append(i)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "TransitionTable":
        states = unique_states(dataset)
        index = state_index(states)
        recs = dataset.records
        s = np.array([index[state_key(r.s)] for r in recs], dtype=np.int64)
        sn = np.array([index[state_key(r.s_next)] for r in recs], dtype=np.int64)
        succ = np.full(len(recs), -1, dtype=np.int64)
        for i in range(len(recs) - 1):
            if recs[i + 1].trajectory_id == recs[i].trajectory_id:
                succ[i] = i + 1
        return cls(
            states=states,
            s=s,
            s_next=sn,
            r=np.array([r.r for r in recs]),
            terminal=np.array([r.terminal for r in recs], dtype=bool),
            succ=succ,
        )

    def recorded_successor(self) -> np.ndarray:
        """For every state id, the successor recorded with its first occurrence as ``s`` (or itself)."""
        out = np.arange(len(self.states))
        for s, ids in self.first_record.items():
            out[s] = self.s_next[ids[0]]
        return out


def _flat_candidates(reach: ReachabilityIndex, n_states: int):
    counts = np.array([len(reach.candidates(s)) for s in range(n_states)], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    flat = np.concatenate([reach.candidates(s) for s in range(n_states)]).astype(np.int64) if counts.sum() else np.zeros(0, np.int64)
    return flat, offsets, counts


def sample_reachable_pairs(table: TransitionTable, flat, offsets, counts, rng: np.random.Generator, batch_size: int):
    """``s`` drawn from dataset records, ``s'`` uniform over ``reach(s)`` (recorded successor if empty)."""
    b = rng.integers(0, len(table.s), size=batch_size)
    s = table.s[b]
    u = rng.random(batch_size)
    k = counts[s]
    pick = offsets[s] + np.minimum((u * k).astype(np.int64), np.maximum(k - 1, 0))
    s2 = np.where(k > 0, flat[np.minimum(pick, max(len(flat) - 1, 0))] if len(flat) else table.s_next[b], table.s_next[b])
    return b, s, s2


def _reward(reward_fn, s, s2) -> np.ndarray:
    if reward_fn is None:
        raise StacqConfigError("reachable pairs need rewards but no reward function or model was given")
    return np.asarray(reward_fn(s, s2), dtype=np.float64).reshape(len(s))


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    actor: Actor
    critics: CriticBank
    metrics: list[dict]
    config: StacqConfig

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in rows:
        w.writerow([_fmt(row.get(k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def _check_finite(name: str, value: float, it: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{name} became {value} at iteration {it}")


def _cosine(lr: float, t: int, total: int) -> float:
    return lr * 0.5 * (1 + math.cos(math.pi * t / max(total, 1)))


class _Recorder:
    def __init__(self, cfg: StacqConfig, evaluate):
        self.cfg, self.evaluate = cfg, evaluate
        self.rows: list[dict] = []
        self.reset()

    def reset(self):
        self.c, self.a, self.q, self.n = 0.0, 0.0, 0.0, 0

    def add(self, critic_loss, actor_loss, mean_q):
        self.c += critic_loss
        self.a += actor_loss
        self.q += mean_q
        self.n += 1

    def maybe_emit(self, it: int, actor: Actor, total: int):
        if it % self.cfg.eval_interval and it != total:
            return
        row = {"iteration": it, "critic_loss": None, "actor_loss": None, "mean_q": None, "eval_return_mean": None, "eval_return_std": None}
        if self.n:
            row.update(critic_loss=self.c / self.n, actor_loss=self.a / self.n, mean_q=self.q / self.n)
        if self.evaluate is not None:
            ret = np.asarray(self.evaluate(actor), dtype=np.float64)
            if ret.size:
                row.update(eval_return_mean=float(ret.mean()), eval_return_std=float(ret.std()))
        self.rows.append(row)
        log.info("iter %d critic %.4g actor %.4g meanQ %.4g eval %s", it, row["critic_loss"] or 0, row["actor_loss"] or 0, row["mean_q"] or 0, row["eval_return_mean"])
        self.reset()


def critic_update(bank: CriticBank, opts: list[Adam], s, s2, r, terminal, actor: Actor, forward, cfg: StacqConfig) -> float:
    y = critic_targets(r, s2, terminal, bank, actor, forward, cfg.gamma)
    total = 0.0
    for k, (c, opt) in enumerate(zip(bank.critics, opts)):
        loss, grads = critic_loss_and_grads(c, s, s2, y[k])
        opt.step(grads)
        total += loss
    return total / len(bank)


def actor_update(actor: Actor, opt: Adam, s, s_hat, forward, bank: CriticBank, cfg: StacqConfig, rng: np.random.Generator, lr: float | None = None) -> tuple[float, float]:
    """One policy step; returns ``(loss, mean Q)``. ``lambda`` comes from the noisy-action Q batch."""
    noise = rng.normal(0.0, cfg.policy_noise, size=(len(s), len(actor.low)))
    a, _ = actor.forward(s)
    a_noisy, _ = actor.perturb(a, noise)
    q = bank.min_q(s, forward(s, a_noisy))
    lam = lambda_scale(q, cfg.alpha_reg)
    loss, grads, q = actor_loss_and_grads(actor, s, s_hat, forward, bank, lam, noise)
    opt.step(grads, lr=lr)
    return loss, float(q.mean())


def _soft_update_all(bank: CriticBank, actor: Actor, tau: float) -> None:
    for t, c in zip(bank.targets, bank.critics):
        soft_update(t.params, c.params, tau)
    soft_update(actor.target.params, actor.net.params, tau)


def train_stacq(
    dataset: Dataset,
    reach: ReachabilityIndex,
    forward,
    cfg: StacqConfig,
    reward_fn=None,
    low=None,
    high=None,
    evaluate: Callable[[Actor], np.ndarray] | None = None,
) -> TrainResult:
    """Alternate critic, actor and target updates over reachable dataset pairs.

    ``reach`` must be indexed by ``unique_states(dataset)`` ids; ``reward_fn(s, s2)``
    is the environment reward or a trained reward model.
    """
    table = TransitionTable.from_dataset(dataset)
    states = table.states
    rng = np.random.default_rng(cfg.seed)
    low = np.asarray(low if low is not None else dataset.arrays["a"].min(axis=0), dtype=np.float64)
    high = np.asarray(high if high is not None else dataset.arrays["a"].max(axis=0), dtype=np.float64)
    bank = CriticBank.create(cfg.n_critics, dataset.state_dim, cfg.hidden, cfg.seed, cfg.target_mode)
    actor = Actor.create(dataset.state_dim, low, high, cfg.hidden, cfg.seed, cfg.noise_std)
    if cfg.iterations == 0:
        return TrainResult(actor, bank, [], cfg)
    if reward_fn is None:
        raise StacqConfigError("StaCQ needs a reward function or reward model for reachable pairs")
    c_opts = [Adam(c.params, cfg.critic_lr) for c in bank.critics]
    a_opt = Adam(actor.net.params, cfg.actor_lr)
    flat, offsets, counts = _flat_candidates(reach, len(states))
    fallback = table.recorded_successor()
    n_empty = int(np.sum(counts[np.unique(table.s)] == 0))
    if n_empty:
        log.warning("%d dataset states have no reachable candidates; their recorded successors are used", n_empty)
    rec = _Recorder(cfg, evaluate)
    for t in range(cfg.iterations):
        b, s_ids, s2_ids = sample_reachable_pairs(table, flat, offsets, counts, rng, cfg.batch_size)
        s, s2 = states[s_ids], states[s2_ids]
        r = _reward(reward_fn, s, s2)
        c_loss = critic_update(bank, c_opts, s, s2, r, table.terminal_state[s2_ids], actor, forward, cfg)
        _check_finite("critic loss", c_loss, t + 1)
        hat = best_reachable_ids(s_ids, reach, bank, states, fallback[s_ids])
        lr = _cosine(cfg.actor_lr, t, cfg.iterations) if cfg.cosine_actor else None
        a_loss, mean_q = actor_update(actor, a_opt, s, states[hat], forward, bank, cfg, rng, lr)
        _check_finite("actor loss", a_loss, t + 1)
        _soft_update_all(bank, actor, cfg.tau)
        rec.add(c_loss, a_loss, mean_q)
        rec.maybe_emit(t + 1, actor, cfg.iterations)
    return TrainResult(actor, bank, rec.rows, cfg)


# ---------------------------------------------------------------- one-step variant


@dataclass
class LookaheadRows:
    """For each source, every dataset pair ``(x, y)`` with ``x`` reachable from the source.

    ``src`` is sorted; ``pair`` holds record ids and ``reward`` the reward of
    moving from the source state to ``x``.
    """

    n_src: int
    src: np.ndarray
    pair: np.ndarray
    reward: np.ndarray

    def best(self, pair_values, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """Max over rows of ``reward + gamma * pair_values[pair]`` per source; -1 where none."""
        val = self.reward + gamma * np.asarray(pair_values)[self.pair]
        best = np.full(self.n_src, -np.inf)
        arg = np.full(self.n_src, -1, dtype=np.int64)
        if len(val):
            order = np.lexsort((self.pair, -val, self.src))
            first = np.ones(len(order), dtype=bool)
            first[1:] = self.src[order][1:] != self.src[order][:-1]
            sel = order[first]
            best[self.src[sel]] = val[sel]
            arg[self.src[sel]] = self.pair[sel]
        return best, arg


def lookahead_rows(src_states, table: TransitionTable, reach: ReachabilityIndex, reward_fn) -> LookaheadRows:
    src_states = np.asarray(src_states, dtype=np.int64)
    src, pair = [], []
    for i, x in enumerate(src_states):
        for c in reach.candidates(int(x)):
            ids = table.first_record.get(int(c), ())
            src.extend([i] * len(ids))
            pair.extend(ids)
    src = np.array(src, dtype=np.int64)
    pair = np.array(pair, dtype=np.int64)
    reward = _reward(reward_fn, table.states[src_states[src]], table.states[table.s[pair]]) if len(src) else np.zeros(0)
    return LookaheadRows(len(src_states), src, pair, reward)


def onestep_targets(table: TransitionTable, rows: LookaheadRows, pair_q, gamma: float, warn: bool = True) -> np.ndarray:
    """Critic targets for every dataset record.

    ``pair_q[j]`` is the target critic at record ``j``. The bootstrap is the
    best ``r(s', x) + gamma * Q'(x, y)`` over dataset pairs ``(x, y)`` with ``x``
    reachable from ``s'``. Without any such pair the record's own successor pair
    is used, and a trajectory end bootstraps zero.
    """
    pair_q = np.asarray(pair_q, dtype=np.float64)
    best, arg = rows.best(pair_q, gamma)
    boot = np.where(arg >= 0, best, 0.0)
    none = (arg < 0) & ~table.terminal
    if np.any(none):
        own = table.succ[none]
        boot[none] = np.where(own >= 0, pair_q[np.maximum(own, 0)], 0.0)
        if warn:
            log.warning("%d records without eligible look-ahead pairs; using recorded successors", int(none.sum()))
    return table.r + gamma * np.where(table.terminal, 0.0, boot)


def onestep_critic_update(bank: CriticBank, opts: list[Adam], b, table: TransitionTable, y) -> float:
    s, s2 = table.states[table.s[b]], table.states[table.s_next[b]]
    total = 0.0
    for c, opt in zip(bank.critics, opts):
        loss, grads = critic_loss_and_grads(c, s, s2, y[b])
        opt.step(grads)
        total += loss
    return total / len(bank)


def onestep_next_states(table: TransitionTable, reach: ReachabilityIndex, bank: CriticBank, reward_fn, gamma: float) -> np.ndarray:
    """Per state id, the first element of the best look-ahead pair (recorded successor if none)."""
    n = len(table.states)
    rows = lookahead_rows(np.arange(n), table, reach, reward_fn)
    pair_q = bank.min_q(table.states[table.s], table.states[table.s_next])
    _, arg = rows.best(pair_q, gamma)
    fallback = table.recorded_successor()
    return np.where(arg >= 0, table.s[np.maximum(arg, 0)], fallback)


def onestep_policy_extract(
    table: TransitionTable,
    reach: ReachabilityIndex,
    bank: CriticBank,
    forward,
    reward_fn,
    cfg: StacqConfig,
    low,
    high,
    evaluate=None,
    rec: _Recorder | None = None,
    offset: int = 0,
) -> Actor:
    rng = np.random.default_rng(cfg.seed + 1)
    hat = onestep_next_states(table, reach, bank, reward_fn, cfg.gamma)
    actor = Actor.create(table.states.shape[1], low, high, cfg.hidden, cfg.seed, cfg.noise_std)
    opt = Adam(actor.net.params, cfg.actor_lr)
    for t in range(cfg.iterations):
        b = rng.integers(0, len(table.s), size=cfg.batch_size)
        s_ids = table.s[b]
        lr = _cosine(cfg.actor_lr, t, cfg.iterations) if cfg.cosine_actor else None
        loss, mean_q = actor_update(actor, opt, table.states[s_ids], table.states[hat[s_ids]], forward, bank, cfg, rng, lr)
        _check_finite("actor loss", loss, t + 1)
        soft_update(actor.target.params, actor.net.params, cfg.tau)
        if rec is not None:
            rec.add(0.0, loss, mean_q)
            rec.maybe_emit(offset + t + 1, actor, offset + cfg.iterations)
    return actor


def train_onestep(
    dataset: Dataset,
    reach: ReachabilityIndex,
    forward,
    cfg: StacqConfig,
    reward_fn=None,
    low=None,
    high=None,
    evaluate: Callable[[Actor], np.ndarray] | None = None,
) -> TrainResult:
    """Fit a single critic on dataset pairs with reachable look-ahead targets, then
    extract a policy toward the best look-ahead state."""
    table = TransitionTable.from_dataset(dataset)
    rng = np.random.default_rng(cfg.seed)
    low = np.asarray(low if low is not None else dataset.arrays["a"].min(axis=0), dtype=np.float64)
    high = np.asarray(high if high is not None else dataset.arrays["a"].max(axis=0), dtype=np.float64)
    bank = CriticBank.create(cfg.n_critics, dataset.state_dim, cfg.hidden, cfg.seed, cfg.target_mode)
    n_critic = cfg.iterations if cfg.critic_iterations is None else cfg.critic_iterations
    if cfg.iterations == 0 and n_critic == 0:
        return TrainResult(Actor.create(dataset.state_dim, low, high, cfg.hidden, cfg.seed, cfg.noise_std), bank, [], cfg)
    if reward_fn is None:
        raise StacqConfigError("one-step StaCQ needs a reward function or reward model")
    rows = lookahead_rows(table.s_next, table, reach, reward_fn)
    opts = [Adam(c.params, cfg.critic_lr) for c in bank.critics]
    s_all, s2_all = table.states[table.s], table.states[table.s_next]
    critic_rec = _Recorder(cfg, None)
    warned = False
    for t in range(n_critic):
        pair_q = bank.min_q(s_all, s2_all, target=True)
        y = onestep_targets(table, rows, pair_q, cfg.gamma, warn=not warned)
        warned = True
        b = rng.integers(0, len(table.s), size=cfg.batch_size)
        loss = onestep_critic_update(bank, opts, b, table, y)
        _check_finite("critic loss", loss, t + 1)
        for tg, c in zip(bank.targets, bank.critics):
            soft_update(tg.params, c.params, cfg.tau)
        critic_rec.add(loss, 0.0, 0.0)
    rec = _Recorder(cfg, evaluate)
    actor = onestep_policy_extract(table, reach, bank, forward, reward_fn, cfg, low, high, evaluate, rec, offset=n_critic)
    critic_loss = critic_rec.c / critic_rec.n if critic_rec.n else None
    for row in rec.rows:
        row["critic_loss"] = critic_loss
    return TrainResult(actor, bank, rec.rows, cfg)


def config_dict(cfg: StacqConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
