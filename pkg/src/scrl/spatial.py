"""Bulk-loaded R-tree over point sets, answering axis-aligned box queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RangeBox:
    r_min: np.ndarray
    r_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.r_min, dtype=np.float64)
        hi = np.asarray(self.r_max, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError("r_min and r_max must have the same shape")
        if np.any(lo > hi):
            raise ValueError("r_min must not exceed r_max")
        object.__setattr__(self, "r_min", lo)
        object.__setattr__(self, "r_max", hi)

    @property
    def width(self) -> np.ndarray:
        return self.r_max - self.r_min

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.r_min) & (p <= self.r_max), axis=1)


class SpatialIndex:
    """Sort-tile-recursive packed R-tree.

    Leaves hold up to ``leaf_size`` point ids; every internal level groups up to
    ``fanout`` children under their joint bounding rectangle.
    """

    def __init__(self, points, leaf_size: int = 16, fanout: int = 16):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.leaf_size = leaf_size
        self.fanout = fanout
        n, d = pts.shape
        if n == 0:
            self._levels = []
            return
        order = self._str_order(np.arange(n), 0)
        leaves = [order[i : i + leaf_size] for i in range(0, n, leaf_size)]
        lo = np.array([pts[ids].min(axis=0) for ids in leaves])
        hi = np.array([pts[ids].max(axis=0) for ids in leaves])
        # each level: (lo, hi, children) where children index the level below
        self._leaves = leaves
        levels = [(lo, hi, None)]
        while len(levels[-1][0]) > 1:
            clo, chi, _ = levels[-1]
            centers = (clo + chi) / 2
            node_order = self._str_order(np.arange(len(clo)), 0, centers, fanout)
            groups = [node_order[i : i + fanout] for i in range(0, len(node_order), fanout)]
            levels.append(
                (
                    np.array([clo[g].min(axis=0) for g in groups]),
                    np.array([chi[g].max(axis=0) for g in groups]),
                    groups,
                )
            )
        self._levels = levels

    def _str_order(self, ids, dim, coords=None, cap=None):
        coords = self.points if coords is None else coords
        cap = cap or self.leaf_size
        d = coords.shape[1]
        ids = ids[np.argsort(coords[ids, dim], kind="stable")]
        if dim == d - 1 or len(ids) <= cap:
            return ids
        n_pages = math.ceil(len(ids) / cap)
        n_slabs = math.ceil(n_pages ** (1.0 / (d - dim)))
        slab = cap * math.ceil(n_pages / n_slabs)
        parts = [self._str_order(ids[i : i + slab], dim + 1, coords, cap) for i in range(0, len(ids), slab)]
        return np.concatenate(parts)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, box: RangeBox) -> np.ndarray:
        """Sorted ids of points ``x`` with ``r_min <= x <= r_max`` elementwise."""
        if not self._levels:
            return np.zeros(0, dtype=np.int64)
        lo, hi = box.r_min, box.r_max
        top = len(self._levels) - 1
        stack = [(top, 0)]
        hits = []
        while stack:
            level, node = stack.pop()
            nlo, nhi, children = self._levels[level]
            if np.any(nlo[node] > hi) or np.any(nhi[node] < lo):
                continue
            if level == 0:
                ids = self._leaves[node]
                p = self.points[ids]
                hits.append(ids[np.all((p >= lo) & (p <= hi), axis=1)])
            else:
                stack.extend((level - 1, int(c)) for c in children[node])
        if not hits:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(hits))


def build_spatial_index(states, leaf_size: int = 16) -> SpatialIndex:
    return SpatialIndex(states, leaf_size=leaf_size)


def query_range(index: SpatialIndex, box: RangeBox) -> np.ndarray:
    return index.query(box)


def linear_scan(states, box: RangeBox) -> np.ndarray:
    return np.flatnonzero(box.contains(np.asarray(states, dtype=np.float64)))
