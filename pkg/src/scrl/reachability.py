"""State reachability: the exact grid rule and the model-based estimator.

The learned estimator follows a three-stage pipeline per state ``s``: a range box
from forward-model predictions under random actions, a spatial-index query for
dataset states inside that box, then the forward/inverse residual test.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .spatial import RangeBox, SpatialIndex, linear_scan

log = logging.getLogger(__name__)

NORMS = {"l1": 1, "l2": 2, "linf": np.inf}
RANGE_EPS = 1e-3


class ReachConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReachCriterion:
    norm: str = "linf"
    epsilon: float = 0.1
    scaled: bool = True

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ReachConfigError(f"unknown norm {self.norm!r}; choose from {sorted(NORMS)}")
        if not self.epsilon > 0:
            raise ReachConfigError(f"epsilon must be positive, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {"norm": self.norm, "epsilon": self.epsilon, "scaled": self.scaled}


@dataclass
class ReachabilityIndex:
    """Per dataset state: accepted candidate ids, their residuals and step counts."""

    cands: dict[int, np.ndarray]
    residuals: dict[int, np.ndarray]
    criterion: ReachCriterion | None = None
    n_states: int = 0
    steps: dict[int, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __contains__(self, s: int) -> bool:
        return s in self.cands

    def candidates(self, s: int) -> np.ndarray:
        return self.cands.get(s, np.zeros(0, dtype=np.int64))

    def residuals_of(self, s: int) -> np.ndarray:
        return self.residuals.get(s, np.zeros(0))

    def steps_of(self, s: int) -> np.ndarray:
        if s in self.steps:
            return self.steps[s]
        return np.ones(len(self.candidates(s)), dtype=np.int64)

    def as_sets(self) -> dict[int, set[int]]:
        return {s: {int(c) for c in v} for s, v in self.cands.items()}

    @property
    def coverage(self) -> float:
        return len(self.cands) / self.n_states if self.n_states else 1.0

    def pairs(self) -> list[tuple[int, int]]:
        return [(s, int(c)) for s in sorted(self.cands) for c in self.cands[s]]


def make_index(sets: dict[int, Iterable[int]], n_states: int, criterion=None, **meta) -> ReachabilityIndex:
    cands, res = {}, {}
    for s, cs in sets.items():
        ids = np.array(sorted(int(c) for c in cs), dtype=np.int64)
        cands[int(s)] = ids
        res[int(s)] = np.zeros(len(ids))
    return ReachabilityIndex(cands, res, criterion, n_states, meta=dict(meta))


def union_index(a: ReachabilityIndex, b: ReachabilityIndex) -> ReachabilityIndex:
    """Merge two indices; for shared pairs the entry with fewer steps wins."""
    cands, res, steps = {}, {}, {}
    for s in sorted(set(a.cands) | set(b.cands)):
        best: dict[int, tuple[int, float]] = {}
        for idx in (a, b):
            for c, r, k in zip(idx.candidates(s), idx.residuals_of(s), idx.steps_of(s)):
                key = (int(k), float(r))
                if int(c) not in best or key < best[int(c)]:
                    best[int(c)] = key
        ids = sorted(best)
        cands[s] = np.array(ids, dtype=np.int64)
        steps[s] = np.array([best[c][0] for c in ids], dtype=np.int64)
        res[s] = np.array([best[c][1] for c in ids])
    return ReachabilityIndex(cands, res, a.criterion, max(a.n_states, b.n_states), steps, dict(a.meta))


def grid_reachable(cell) -> set[tuple[int, int]]:
    x, y = int(cell[0]), int(cell[1])
    return {(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)}


def exact_grid_index(states) -> ReachabilityIndex:
    """Grid reachability intersected with the dataset states."""
    states = np.asarray(states)
    lookup = {(int(x), int(y)): i for i, (x, y) in enumerate(states)}
    sets = {i: {lookup[c] for c in grid_reachable(v) if c in lookup} for i, v in enumerate(states)}
    return make_index(sets, len(states), None, source="exact-grid")


def sample_actions(rng: np.random.Generator, n: int, low, high) -> np.ndarray:
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    return rng.uniform(low, high, size=(n, len(low)))


def candidate_range(s, forward, n_random: int = 64, low=None, high=None, rng=None, actions=None) -> RangeBox:
    """Elementwise min / max of ``forward(s, a)`` over random actions."""
    if actions is None:
        if n_random < 1:
            raise ValueError("n_random must be at least 1")
        rng = rng or np.random.default_rng(0)
        actions = sample_actions(rng, n_random, low, high)
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    preds = forward(np.repeat(s, len(actions), axis=0), actions)
    return RangeBox(preds.min(axis=0), preds.max(axis=0))


def candidate_ranges(states, forward, actions) -> tuple[np.ndarray, np.ndarray]:
    """Batched range boxes; the same random actions are used for every state."""
    states = np.asarray(states, dtype=np.float64)
    n, d = states.shape
    m = len(actions)
    preds = forward(np.repeat(states, m, axis=0), np.tile(actions, (n, 1))).reshape(n, m, d)
    return preds.min(axis=1), preds.max(axis=1)


def _divisor(box: RangeBox) -> np.ndarray:
    width = box.width.copy()
    zero = width <= 0
    if np.any(zero):
        log.warning("zero-width range in dims %s; using divisor %.0e", np.flatnonzero(zero).tolist(), RANGE_EPS)
        width[zero] = RANGE_EPS
    return width


def residual_vectors(s, cand_states, forward, inverse, crit: ReachCriterion, box: RangeBox | None = None) -> np.ndarray:
    """Per-candidate error vectors ``f(s, I(s, c)) - c``, range-scaled if requested."""
    cand_states = np.atleast_2d(np.asarray(cand_states, dtype=np.float64))
    if len(cand_states) == 0:
        return np.zeros((0, cand_states.shape[1] if cand_states.ndim == 2 else 0))
    if crit.scaled and box is None:
        raise ReachConfigError("scaled reachability criterion needs a range box")
    s_rep = np.repeat(np.atleast_2d(np.asarray(s, dtype=np.float64)), len(cand_states), axis=0)
    err = forward(s_rep, inverse(s_rep, cand_states)) - cand_states
    if crit.scaled:
        err = err / _divisor(box)
    return err


def residual_norms(err: np.ndarray, norm: str) -> np.ndarray:
    if len(err) == 0:
        return np.zeros(0)
    return np.linalg.norm(err, ord=NORMS[norm], axis=1)


def estimate_reachable(s, candidates, forward, inverse, crit: ReachCriterion, range_box: RangeBox | None = None):
    """Indices (into ``candidates``) accepted by the residual test, with residuals."""
    res = residual_norms(residual_vectors(s, candidates, forward, inverse, crit, range_box), crit.norm)
    keep = np.flatnonzero(res <= crit.epsilon)
    return keep, res[keep]


def build_reachability_index(
    states,
    forward,
    inverse,
    crit: ReachCriterion,
    low,
    high,
    n_random: int = 64,
    seed: int = 0,
    bypass_index: bool = False,
    query_ids=None,
    spatial: SpatialIndex | None = None,
    keep_errors: bool = False,
) -> ReachabilityIndex:
    """Run the range-box / spatial-query / residual pipeline over dataset states.

    ``bypass_index`` swaps the R-tree for a linear scan (same result, O(N^2)).
    ``keep_errors`` stores the raw error vectors of every box candidate in
    ``meta["errors"]`` so thresholds and norms can be swept without re-running models.
    """
    states = np.asarray(states, dtype=np.float64)
    n = len(states)
    query_ids = np.arange(n) if query_ids is None else np.asarray(query_ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    actions = sample_actions(rng, n_random, low, high)
    log.info("reachability: %d query states, %d random actions, criterion %s", len(query_ids), n_random, crit)
    if spatial is None and not bypass_index:
        spatial = SpatialIndex(states)
    lo, hi = candidate_ranges(states[query_ids], forward, actions) if len(query_ids) else (None, None)
    cands, res, errors = {}, {}, {}
    for k, s in enumerate(query_ids):
        box = RangeBox(lo[k], hi[k])
        pool = linear_scan(states, box) if bypass_index else spatial.query(box)
        err = residual_vectors(states[s], states[pool], forward, inverse, crit, box)
        r = residual_norms(err, crit.norm)
        keep = r <= crit.epsilon
        cands[int(s)] = pool[keep]
        res[int(s)] = r[keep]
        if keep_errors:
            errors[int(s)] = (pool, err)
    meta = {"n_random": n_random, "seed": seed, "bypass_index": bypass_index}
    if keep_errors:
        meta["errors"] = errors
    meta["boxes"] = (lo, hi, query_ids)
    return ReachabilityIndex(cands, res, crit, n, meta=meta)


def rethreshold(index: ReachabilityIndex, crit: ReachCriterion) -> ReachabilityIndex:
    """Re-apply a different norm / epsilon to stored error vectors (scaling must match)."""
    errors = index.meta.get("errors")
    if errors is None:
        raise ReachConfigError("index was built without keep_errors=True")
    if index.criterion is not None and index.criterion.scaled != crit.scaled:
        raise ReachConfigError("stored errors were computed with a different scaling")
    cands, res = {}, {}
    for s, (pool, err) in errors.items():
        r = residual_norms(err, crit.norm)
        keep = r <= crit.epsilon
        cands[s], res[s] = pool[keep], r[keep]
    return ReachabilityIndex(cands, res, crit, index.n_states, meta={"errors": errors})


def k_step_reachable(
    s,
    k: int,
    dataset_states,
    forward: Callable,
    crit: ReachCriterion,
    inverse: Callable | None = None,
    actions=None,
    low=None,
    high=None,
    n_sequences: int = 256,
    n_random: int = 64,
    rng: np.random.Generator | None = None,
) -> tuple[dict[int, float], bool]:
    """Dataset states reachable from ``s`` in exactly ``k`` model steps.

    Returns ``({state id: residual}, exhaustive)``. With a discrete ``actions``
    array every ``k``-step sequence is enumerated and endpoints are matched to
    dataset states by the criterion norm (unscaled). Otherwise ``n_sequences``
    random ``k - 1`` step prefixes are rolled through ``forward`` and the final hop
    uses the residual test from each intermediate state.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    states = np.asarray(dataset_states, dtype=np.float64)
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if k == 1 and inverse is not None:
        box = None
        if crit.scaled or low is not None:
            box = candidate_range(s, forward, n_random, low, high, rng or np.random.default_rng(0))
        pool = linear_scan(states, box) if box is not None else np.arange(len(states))
        keep, res = estimate_reachable(s, states[pool], forward, inverse, crit, box)
        return {int(pool[i]): float(r) for i, r in zip(keep, res)}, True
    if actions is not None:
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        seqs = list(itertools.product(range(len(actions)), repeat=k))
        cur = np.repeat(s, len(seqs), axis=0)
        for step_i in range(k):
            cur = forward(cur, actions[[q[step_i] for q in seqs]])
        out: dict[int, float] = {}
        for end in np.unique(cur, axis=0):
            r = np.linalg.norm(states - end, ord=NORMS[crit.norm], axis=1)
            for i in np.flatnonzero(r <= crit.epsilon):
                out[int(i)] = min(out.get(int(i), np.inf), float(r[i]))
        return out, True
    if inverse is None or low is None:
        raise ReachConfigError("sampled k-step search needs an inverse model and action bounds")
    rng = rng or np.random.default_rng(0)
    cur = np.repeat(s, n_sequences, axis=0)
    for _ in range(k - 1):
        cur = forward(cur, sample_actions(rng, n_sequences, low, high))
    probe = sample_actions(rng, n_random, low, high)
    lo, hi = candidate_ranges(cur, forward, probe)
    out = {}
    for j in range(len(cur)):
        box = RangeBox(lo[j], hi[j])
        pool = linear_scan(states, box)
        keep, res = estimate_reachable(cur[j], states[pool], forward, inverse, crit, box)
        for i, r in zip(pool[keep], res):
            out[int(i)] = min(out.get(int(i), np.inf), float(r))
    return out, False


def k_step_index(states, k: int, forward, crit: ReachCriterion, **kwargs) -> ReachabilityIndex:
    """``k_step_reachable`` for every dataset state, packed as an index with ``steps = k``."""
    states = np.asarray(states, dtype=np.float64)
    cands, res, steps = {}, {}, {}
    exhaustive = True
    for i in range(len(states)):
        found, ex = k_step_reachable(states[i], k, states, forward, crit, **kwargs)
        exhaustive &= ex
        ids = sorted(found)
        cands[i] = np.array(ids, dtype=np.int64)
        res[i] = np.array([found[c] for c in ids])
        steps[i] = np.full(len(ids), k, dtype=np.int64)
    return ReachabilityIndex(cands, res, crit, len(states), steps, meta={"k": k, "exhaustive": exhaustive})


def reachability_report(index: ReachabilityIndex, ground_truth: dict[int, set[int]] | Callable | None = None, bins: int = 10) -> dict:
    """Candidate counts, residual histogram and, with ground truth, precision / recall.

    ``ground_truth`` is either ``{state: set of truly reachable ids}`` or a
    callable ``(s, c) -> bool`` evaluated over the same query states.
    """
    counts = {s: int(len(v)) for s, v in index.cands.items()}
    all_res = np.concatenate([index.residuals_of(s) for s in index.cands]) if index.cands else np.zeros(0)
    hist, edges = np.histogram(all_res, bins=bins) if len(all_res) else (np.zeros(bins, int), np.linspace(0, 1, bins + 1))
    out = {
        "n_states": index.n_states,
        "coverage": index.coverage,
        "mean_candidates": float(np.mean(list(counts.values()))) if counts else 0.0,
        "min_candidates": min(counts.values(), default=0),
        "max_candidates": max(counts.values(), default=0),
        "residual_hist": {"counts": hist.tolist(), "edges": [float(e) for e in edges]},
        "exhaustive": bool(index.meta.get("exhaustive", True)),
    }
    if ground_truth is not None:
        tp = fp = fn = 0
        for s in index.cands:
            est = {int(c) for c in index.cands[s]}
            if callable(ground_truth):
                truth = {c for c in range(index.n_states) if ground_truth(s, c)}
            else:
                truth = set(ground_truth.get(s, ()))
            tp += len(est & truth)
            fp += len(est - truth)
            fn += len(truth - est)
        out["precision"] = tp / (tp + fp) if tp + fp else 1.0
        out["recall"] = tp / (tp + fn) if tp + fn else 1.0
        out["true_positives"], out["false_positives"], out["false_negatives"] = tp, fp, fn
    return out


def save_index(index: ReachabilityIndex, path) -> None:
    header = {"criterion": index.criterion.to_dict() if index.criterion else None, "n_states": index.n_states}
    header.update({k: v for k, v in index.meta.items() if isinstance(v, (int, float, str, bool))})
    lines = [json.dumps(header)]
    for s in sorted(index.cands):
        row = {"s": s, "cands": [[int(c), float(r)] for c, r in zip(index.cands[s], index.residuals[s])]}
        if s in index.steps and np.any(index.steps[s] != 1):
            row["steps"] = index.steps[s].tolist()
        lines.append(json.dumps(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_index(path) -> ReachabilityIndex:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    crit = ReachCriterion(**header["criterion"]) if header.get("criterion") else None
    cands, res, steps = {}, {}, {}
    for line in lines[1:]:
        if not line.strip():
            continue
        row = json.loads(line)
        s = int(row["s"])
        pairs = row["cands"]
        cands[s] = np.array([int(c) for c, _ in pairs], dtype=np.int64)
        res[s] = np.array([float(r) for _, r in pairs])
        if "steps" in row:
            steps[s] = np.array(row["steps"], dtype=np.int64)
    meta = {k: v for k, v in header.items() if k not in ("criterion", "n_states")}
    return ReachabilityIndex(cands, res, crit, int(header["n_states"]), steps, meta)
