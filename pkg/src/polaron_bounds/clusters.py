"""Cubes around electrons and their grouping into clusters.

Two electrons share a cluster when they are linked by a chain of cubes whose
consecutive distances are below the threshold ``d``.  The resulting groups
satisfy

* (P1) each cluster fits inside a cube of side ``N_i (R + d)``;
* (P2) cubes in different clusters are at least ``d`` apart.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np


class ClusterError(ValueError):
    pass


class IndexOutOfRange(ClusterError, IndexError):
    pass


class EmptyGroup(ClusterError):
    pass


@dataclass(frozen=True, eq=False)
class BoxConfiguration:
    """Cubes of common side ``side`` centred at the rows of ``centers``."""
    centers: np.ndarray
    side: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise ClusterError("centers must be an (N, 3) array with N >= 1")
        if not self.side > 0:
            raise ClusterError(f"side must be positive, got {self.side}")
        object.__setattr__(self, "centers", c)

    @property
    def N(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def from_csv(cls, text: str, side: float) -> "BoxConfiguration":
        rows = []
        for row in csv.reader(io.StringIO(text)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row[:3]])
            except ValueError:
                if rows:
                    raise
                continue     # header line
        return cls(np.array(rows), side)


def box_distance(i: int, j: int, config: BoxConfiguration) -> float:
    """Euclidean distance between cubes ``i`` and ``j`` (0 if they touch or overlap)."""
    n = config.N
    for k in (i, j):
        if not 0 <= k < n:
            raise IndexOutOfRange(f"box index {k} outside 0..{n - 1}")
    gap = np.maximum(np.abs(config.centers[i] - config.centers[j]) - config.side, 0.0)
    return float(math.sqrt(float(np.dot(gap, gap))))


def distance_matrix(config: BoxConfiguration) -> np.ndarray:
    diff = np.abs(config.centers[:, None, :] - config.centers[None, :, :]) - config.side
    gap = np.maximum(diff, 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def groups(self) -> list[tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            out.setdefault(self.find(x), []).append(x)
        return sorted((tuple(g) for g in out.values()), key=lambda g: g[0])


@dataclass(frozen=True)
class ClusterPartition:
    threshold: float
    groups: tuple

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    def label_of(self) -> dict:
        return {i: k for k, g in enumerate(self.groups) for i in g}

    def to_json(self) -> str:
        return json.dumps({"threshold": self.threshold, "groups": [list(g) for g in self.groups]})

    @classmethod
    def from_json(cls, text: str) -> "ClusterPartition":
        data = json.loads(text)
        return cls(float(data["threshold"]), tuple(tuple(g) for g in data["groups"]))


def partition(config: BoxConfiguration, d: float) -> ClusterPartition:
    """Clusters = connected components of the graph with edges ``d(i, j) < d``.

    Ties ``d(i, j) == d`` do not create an edge.
    """
    if not d > 0:
        raise ClusterError(f"threshold must be positive, got {d}")
    dist = distance_matrix(config)
    uf = UnionFind(config.N)
    ii, jj = np.nonzero(np.triu(dist < d, k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        uf.union(i, j)
    return ClusterPartition(float(d), tuple(uf.groups()))


def enclosing_cube_side(group, config: BoxConfiguration) -> float:
    """Side of the smallest axis-aligned cube containing every cube of ``group``."""
    group = list(group)
    if not group:
        raise EmptyGroup("group is empty")
    c = config.centers[group]
    return float(np.max(c.max(axis=0) - c.min(axis=0)) + config.side)


def check_properties(part: ClusterPartition, config: BoxConfiguration) -> dict:
    """Evaluate (P1) and (P2) for a partition; returns ``{"P1": bool, "P2": bool}``."""
    d = part.threshold
    p1 = all(enclosing_cube_side(g, config) <= len(g) * (config.side + d) for g in part.groups)
    dist = distance_matrix(config)
    label = part.label_of()
    p2 = all(dist[i, j] >= d
             for i in range(config.N) for j in range(config.N)
             if label[i] != label[j])
    covered = sorted(i for g in part.groups for i in g) == list(range(config.N))
    return {"P1": p1, "P2": p2, "cover": covered}
