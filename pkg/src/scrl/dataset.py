"""Offline transition datasets: generation, normalisation and JSON-Lines I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .mdp import DeterministicMdp, state_key, step


class DatasetFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionRecord:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool
    trajectory_id: int
    step_index: int

    def __eq__(self, other):
        if not isinstance(other, TransitionRecord):
            return NotImplemented
        return (
            np.array_equal(self.s, other.s)
            and np.array_equal(self.a, other.a)
            and self.r == other.r
            and np.array_equal(self.s_next, other.s_next)
            and self.terminal == other.terminal
            and self.trajectory_id == other.trajectory_id
            and self.step_index == other.step_index
        )

    __hash__ = None


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-3

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / (self.std + self.eps)

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * (self.std + self.eps) + self.mean


@dataclass(frozen=True)
class Dataset:
    records: tuple[TransitionRecord, ...]
    state_dim: int
    action_dim: int
    normalization: NormalizationStats | None = None
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        last: dict[int, int] = {}
        ended: set[int] = set()
        for k, rec in enumerate(self.records):
            if len(rec.s) != self.state_dim or len(rec.s_next) != self.state_dim:
                raise ValueError(f"record {k}: state dimension differs from {self.state_dim}")
            if len(rec.a) != self.action_dim:
                raise ValueError(f"record {k}: action dimension differs from {self.action_dim}")
            t = rec.trajectory_id
            if t in ended:
                raise ValueError(f"record {k}: trajectory {t} continues after a terminal record")
            if t in last and rec.step_index <= last[t]:
                raise ValueError(f"record {k}: step_index not increasing in trajectory {t}")
            last[t] = rec.step_index
            if rec.terminal:
                ended.add(t)
        if last and sorted(last) != list(range(len(last))):
            raise ValueError("trajectory ids must be contiguous from 0")

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        recs = self.records
        return {
            "s": np.array([r.s for r in recs], dtype=np.float64).reshape(len(recs), self.state_dim),
            "a": np.array([r.a for r in recs], dtype=np.float64).reshape(len(recs), self.action_dim),
            "r": np.array([r.r for r in recs], dtype=np.float64),
            "s_next": np.array([r.s_next for r in recs], dtype=np.float64).reshape(len(recs), self.state_dim),
            "terminal": np.array([r.terminal for r in recs], dtype=bool),
            "trajectory_id": np.array([r.trajectory_id for r in recs], dtype=np.int64),
        }

    @property
    def n_trajectories(self) -> int:
        return len({r.trajectory_id for r in self.records})

    def trajectory_returns(self, gamma: float = 1.0) -> np.ndarray:
        out: dict[int, float] = {}
        for rec in self.records:
            out[rec.trajectory_id] = out.get(rec.trajectory_id, 0.0) + gamma**rec.step_index * rec.r
        return np.array([out[k] for k in sorted(out)])


def make_dataset(trajectories, state_dim: int, action_dim: int, metadata=None) -> Dataset:
    """Build a dataset from a list of ``[(s, a, r, s_next, terminal), ...]`` trajectories."""
    records = []
    for t, traj in enumerate(trajectories):
        for i, (s, a, r, sn, done) in enumerate(traj):
            records.append(
                TransitionRecord(
                    s=np.asarray(s, dtype=np.float64).reshape(state_dim),
                    a=np.asarray(a, dtype=np.float64).reshape(action_dim),
                    r=float(r),
                    s_next=np.asarray(sn, dtype=np.float64).reshape(state_dim),
                    terminal=bool(done),
                    trajectory_id=t,
                    step_index=i,
                )
            )
    return Dataset(records, state_dim, action_dim, metadata=dict(metadata or {}))


def rollout(
    mdp: DeterministicMdp,
    behavior: Mapping[int, int] | Callable[[int], int],
    s0: int,
    max_len: int,
    trajectory_id: int = 0,
) -> list[TransitionRecord]:
    """Roll a behaviour policy through a deterministic MDP."""
    out: list[TransitionRecord] = []
    s = s0
    for i in range(max_len):
        if mdp.is_terminal(s):
            break
        try:
            a = behavior(s) if callable(behavior) else behavior[s]
        except KeyError:
            raise GenerationError(f"behaviour policy undefined at state {s}") from None
        sn, r = step(mdp, s, a)
        done = mdp.is_terminal(sn)
        out.append(TransitionRecord(mdp.states[s].copy(), mdp.actions[a].copy(), r, mdp.states[sn].copy(), done, trajectory_id, i))
        s = sn
        if done:
            break
    return out


def unique_states(dataset: Dataset) -> np.ndarray:
    """All distinct ``s`` and ``s_next`` vectors in order of first appearance."""
    seen: dict[bytes, int] = {}
    rows = []
    for rec in dataset.records:
        for v in (rec.s, rec.s_next):
            k = state_key(v)
            if k not in seen:
                seen[k] = len(rows)
                rows.append(np.asarray(v, dtype=np.float64))
    if not rows:
        return np.zeros((0, dataset.state_dim))
    return np.array(rows)


def state_index(states: np.ndarray) -> dict[bytes, int]:
    return {state_key(v): i for i, v in enumerate(states)}


def normalize_states(dataset: Dataset, eps: float = 1e-3) -> Dataset:
    """Standardise state features with statistics pooled over ``s`` and ``s_next``."""
    if len(dataset) == 0:
        raise ValueError("cannot normalise an empty dataset")
    arr = dataset.arrays
    pooled = np.concatenate([arr["s"], arr["s_next"]])
    stats = NormalizationStats(pooled.mean(axis=0), pooled.std(axis=0), eps)
    records = [replace(r, s=stats.apply(r.s), s_next=stats.apply(r.s_next)) for r in dataset.records]
    return Dataset(records, dataset.state_dim, dataset.action_dim, stats, dict(dataset.metadata))


def save_dataset(dataset: Dataset, path) -> None:
    header = {"state_dim": dataset.state_dim, "action_dim": dataset.action_dim}
    if dataset.normalization is not None:
        n = dataset.normalization
        header["normalization"] = {"mean": n.mean.tolist(), "std": n.std.tolist(), "eps": n.eps}
    if dataset.metadata:
        header["metadata"] = dict(dataset.metadata)
    lines = [json.dumps(header)]
    for r in dataset.records:
        lines.append(
            json.dumps(
                {
                    "t": r.trajectory_id,
                    "i": r.step_index,
                    "s": [float(x) for x in r.s],
                    "a": [float(x) for x in r.a],
                    "r": float(r.r),
                    "sn": [float(x) for x in r.s_next],
                    "done": bool(r.terminal),
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _vector(obj, key, dim, line):
    v = obj.get(key)
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise DatasetFormatError(line, f"field {key!r} must be a list of numbers")
    if len(v) != dim:
        raise DatasetFormatError(line, f"field {key!r} has length {len(v)}, expected {dim}")
    return np.array(v, dtype=np.float64)


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].strip():
        raise DatasetFormatError(1, "missing header line")
    try:
        header = json.loads(text[0])
        state_dim, action_dim = int(header["state_dim"]), int(header["action_dim"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(1, f"bad header: {exc}") from None
    norm = None
    if "normalization" in header:
        n = header["normalization"]
        norm = NormalizationStats(np.array(n["mean"], dtype=np.float64), np.array(n["std"], dtype=np.float64), float(n["eps"]))
    records = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise DatasetFormatError(lineno, "record must be a JSON object")
        try:
            rec = TransitionRecord(
                s=_vector(obj, "s", state_dim, lineno),
                a=_vector(obj, "a", action_dim, lineno),
                r=float(obj["r"]),
                s_next=_vector(obj, "sn", state_dim, lineno),
                terminal=bool(obj["done"]),
                trajectory_id=int(obj["t"]),
                step_index=int(obj["i"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DatasetFormatError):
                raise
            raise DatasetFormatError(lineno, f"bad record: {exc}") from None
        records.append(rec)
    try:
        return Dataset(records, state_dim, action_dim, norm, header.get("metadata", {}))
    except ValueError as exc:
        raise DatasetFormatError(len(text), str(exc)) from None
