"""Closed Brownian paths confined to cubes, and pointwise checks of the path
inequalities that let the inter-cluster interaction be dropped.

Paths follow the diffusion generated by the Laplacian (variance ``2t`` per
coordinate).  A closed path from the cube centre that stays in the cube is
obtained by rejection: because the cube is a product of intervals and the
coordinates are independent, each coordinate bridge is accepted or rejected
on its own, which samples the conditioned law exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .clusters import BoxConfiguration, ClusterPartition, box_distance

SQRT3 = math.sqrt(3.0)
LAG_CUTOFF = 40.0
REJECTION_BUDGET = 100_000


class PathError(RuntimeError):
    pass


class RejectionBudgetExceeded(PathError):
    def __init__(self, attempts: int, accepted: int):
        self.attempts = attempts
        self.acceptance_rate = accepted / attempts if attempts else 0.0
        super().__init__(f"no confined bridge after {attempts} attempts "
                         f"(acceptance rate {self.acceptance_rate:.3g}); box too small for T")


class QuadratureUnstable(PathError):
    pass


@dataclass(frozen=True, eq=False)
class ConfinedPath:
    """Closed path sampled at ``n_steps + 1`` uniform times on ``[0, T]``."""
    box: int
    T: float
    n_steps: int
    positions: np.ndarray
    center: tuple
    side: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (self.n_steps + 1, 3):
            raise PathError(f"positions must have shape ({self.n_steps + 1}, 3)")
        if not np.array_equal(pos[0], pos[-1]):
            raise PathError("path is not closed")
        c = np.asarray(self.center, dtype=float)
        if not np.all(np.abs(pos - c) < 0.5 * self.side):
            raise PathError("path leaves its cube")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "center", tuple(float(x) for x in c))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def loop(self) -> np.ndarray:
        """One period of positions (the closing point dropped)."""
        return self.positions[:-1]

    @classmethod
    def static(cls, box: int, point, config: BoxConfiguration, T: float = 1.0, n_steps: int = 2):
        pos = np.repeat(np.asarray(point, dtype=float)[None, :], n_steps + 1, axis=0)
        return cls(box, T, n_steps, pos, tuple(config.centers[box]), config.side)


def _confined_coordinate(rng, n_steps, T, half, batch, budget):
    dt = T / n_steps
    times = np.arange(1, n_steps + 1) * dt
    attempts = 0
    while attempts < budget:
        b = min(batch, budget - attempts)
        W = np.cumsum(rng.standard_normal((b, n_steps)) * math.sqrt(2.0 * dt), axis=1)
        bridge = W - (times / T) * W[:, -1:]
        bridge[:, -1] = 0.0
        ok = np.flatnonzero(np.all(np.abs(bridge) < half, axis=1))
        if ok.size:
            return np.concatenate([[0.0], bridge[ok[0]]]), attempts + int(ok[0]) + 1
        attempts += b
    raise RejectionBudgetExceeded(attempts, 0)


def sample_confined_bridge(config: BoxConfiguration, box: int, T: float, n_steps: int,
                           seed: int, budget: int = REJECTION_BUDGET,
                           batch: int = 1024) -> ConfinedPath:
    """Closed Brownian path from the centre of cube ``box`` back to it, kept inside the cube."""
    if not T > 0:
        raise ValueError("T must be positive")
    if n_steps < 2:
        raise ValueError("need n_steps >= 2")
    rng = np.random.default_rng(seed)
    half = 0.5 * config.side
    coords = [_confined_coordinate(rng, n_steps, T, half, batch, budget)[0] for _ in range(3)]
    center = config.centers[box]
    pos = np.stack(coords, axis=1) + center
    pos[-1] = pos[0]
    return ConfinedPath(box, T, n_steps, pos, tuple(center), config.side)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class PathCheckReport:
    pairs_checked: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    tolerance: float = 0.0
    seeds: list = field(default_factory=list)
    skipped: int = 0

    def merge(self, other: "PathCheckReport") -> "PathCheckReport":
        return PathCheckReport(self.pairs_checked + other.pairs_checked,
                               self.violations + other.violations,
                               min(self.worst_margin, other.worst_margin),
                               max(self.tolerance, other.tolerance),
                               self.seeds + other.seeds,
                               self.skipped + other.skipped)

    def to_dict(self) -> dict:
        return {"pairs_checked": self.pairs_checked, "violations": self.violations,
                "worst_margin": self.worst_margin, "tolerance": self.tolerance,
                "seeds": self.seeds, "skipped": self.skipped}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class DistanceBoundReport:
    d_box: float
    lower: float
    upper: float
    min_distance: float
    max_distance: float
    passed: bool

    @property
    def margin(self) -> float:
        return min(self.min_distance - self.lower, self.upper - self.max_distance)


def _lag_indices(n: int, lag_grid) -> np.ndarray:
    if lag_grid is None:
        return np.arange(n)
    return np.mod(np.asarray(lag_grid, dtype=int), n)


def verify_path_distance_bounds(path_i: ConfinedPath, path_j: ConfinedPath,
                                config: BoxConfiguration, lag_grid=None,
                                tol: float = 0.0) -> DistanceBoundReport:
    """Check ``d(i,j) <= |w_i(t) - w_j(t+s)| <= d(i,j) + 2 sqrt(3) R`` on the time grid.

    ``lag_grid`` lists lags ``s`` in units of the time step (default: all of
    them; paths are extended periodically).
    """
    a, b = path_i.loop, path_j.loop
    n = len(a)
    lags = _lag_indices(len(b), lag_grid)
    idx = (np.arange(n)[:, None] + lags[None, :]) % len(b)
    dist = np.linalg.norm(a[:, None, :] - b[idx], axis=-1)
    dbox = box_distance(path_i.box, path_j.box, config)
    lower, upper = dbox, dbox + 2.0 * SQRT3 * config.side
    lo, hi = float(dist.min()), float(dist.max())
    return DistanceBoundReport(dbox, lower, upper, lo, hi, lo >= lower - tol and hi <= upper + tol)


def lag_weights(n: int, T: float, cutoff: float = LAG_CUTOFF) -> np.ndarray:
    """Weights of ``e^{-|s|}/2`` folded onto the ``n`` periodic lags ``s = m T / n``.

    Trapezoid rule on ``|s| <= cutoff``, rescaled so the total mass equals
    ``1 - e^{-cutoff}``, the exact mass of the truncated weight.
    """
    dt = T / n
    M = int(math.floor(cutoff / dt))
    m = np.arange(-M, M + 1)
    w = 0.5 * np.exp(-np.abs(m) * dt) * dt
    w[0] *= 0.5
    w[-1] *= 0.5
    w *= (1.0 - math.exp(-M * dt)) / w.sum()
    folded = np.zeros(n)
    np.add.at(folded, np.mod(m, n), w)
    return folded


def _pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``|a(t_k) - b(t_k + r dt)|`` indexed ``[k, r]`` (periodic in time)."""
    n = len(a)
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return np.linalg.norm(a[:, None, :] - b[idx], axis=-1)


def _pair_integrals(dist: np.ndarray, dt: float, wfold: np.ndarray):
    """Lag-weighted and equal-time integrals of ``1/|a(t) - b(t+s)|`` over one period."""
    per_lag = (1.0 / dist).sum(axis=0) * dt
    return float(np.dot(wfold, per_lag)), float(per_lag[0])


@dataclass(frozen=True)
class SplitReport:
    lhs: float
    rhs: float
    intra: float
    inter_bound: float
    tolerance: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance


def integrand_cluster_split_check(paths, partition: ClusterPartition, config: BoxConfiguration,
                                  alpha: float, nu: float, T: float | None = None,
                                  min_separation: float = 1e-9) -> SplitReport:
    """Evaluate both sides of the inequality that splits the path exponent by cluster.

    The left side is the full exponent; the right side keeps intra-cluster
    terms and replaces every inter-cluster pair by
    ``T (alpha/d(i,j) - U/(2 d(i,j) + 4 sqrt(3) R))``.  Self terms ``i = j``
    are identical on both sides and are left out.
    """
    paths = list(paths)
    T = paths[0].T if T is None else T
    n = paths[0].n_steps
    if any(p.n_steps != n or p.T != T for p in paths):
        raise ValueError("all paths must share T and the time grid")
    U = nu * alpha
    dt = T / n
    wfold = lag_weights(n, T)
    label = partition.label_of()
    R = config.side
    lhs = 0.0
    intra = 0.0
    inter_bound = 0.0
    N = len(paths)
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            dist = _pair_distances(paths[i].loop, paths[j].loop)
            same = label[paths[i].box] == label[paths[j].box]
            if same and dist.min() < min_separation:
                raise QuadratureUnstable(f"paths {i} and {j} come within {dist.min():.3g}")
            lag_int, eq_int = _pair_integrals(dist, dt, wfold)
            # the equal-time term is counted once per unordered pair
            contribution = alpha * lag_int - (U * eq_int if i < j else 0.0)
            lhs += contribution
            if same:
                intra += contribution
            else:
                g = box_distance(paths[i].box, paths[j].box, config)
                inter_bound += T * (alpha / g - U / (2.0 * g + 4.0 * SQRT3 * R))
    return SplitReport(lhs, intra + inter_bound, intra, inter_bound, 1e-6 * T)


# --------------------------------------------------------------------------
# Monte-Carlo sweeps
# --------------------------------------------------------------------------

def _disjoint_pair(rng, side):
    while True:
        offset = rng.uniform(-4.0 * side, 4.0 * side, size=3)
        if np.max(np.abs(offset)) > side:
            return BoxConfiguration(np.array([np.zeros(3), offset]), side)


def sweep_distance_bounds(n_pairs: int = 1000, side: float = 1.0, T: float = 0.25,
                          n_steps: int = 64, seed: int = 0) -> PathCheckReport:
    """Sample confined paths in random disjoint cube pairs and count bound violations."""
    rng = np.random.default_rng(seed)
    report = PathCheckReport(tolerance=0.0)
    for p in range(n_pairs):
        cfg = _disjoint_pair(rng, side)
        s1, s2 = seed * 1_000_003 + 2 * p, seed * 1_000_003 + 2 * p + 1
        a = sample_confined_bridge(cfg, 0, T, n_steps, s1)
        b = sample_confined_bridge(cfg, 1, T, n_steps, s2)
        res = verify_path_distance_bounds(a, b, cfg)
        report = report.merge(PathCheckReport(1, int(not res.passed), res.margin, 0.0, [s1, s2]))
    return report


def random_multicluster_config(rng, side: float = 1.0, d: float = 0.5,
                               n_clusters=(2, 3), per_cluster=(1, 3)):
    """Boxes grouped around well separated anchors so that at least two clusters form."""
    from .clusters import partition

    while True:
        k = int(rng.integers(n_clusters[0], n_clusters[1] + 1))
        centers = []
        for c in range(k):
            anchor = np.array([c * 6.0 * side, 0.0, 0.0]) + rng.uniform(-side, side, 3)
            for _ in range(int(rng.integers(per_cluster[0], per_cluster[1] + 1))):
                centers.append(anchor + rng.uniform(-0.8 * side, 0.8 * side, 3))
        cfg = BoxConfiguration(np.array(centers), side)
        part = partition(cfg, d)
        if len(part.groups) >= 2:
            return cfg, part


def sweep_split(n_ensembles: int = 100, side: float = 1.0, T: float = 0.25, n_steps: int = 32,
                d: float = 0.5, alpha: float = 1.0, seed: int = 0) -> PathCheckReport:
    """Check the cluster-split inequality on random multi-cluster path ensembles."""
    rng = np.random.default_rng(seed)
    report = PathCheckReport(tolerance=1e-6 * T)
    for e in range(n_ensembles):
        cfg, part = random_multicluster_config(rng, side, d)
        nu = float(rng.uniform(0.0, 6.0))
        seeds = [seed * 1_000_003 + 100 * e + i for i in range(cfg.N)]
        paths = [sample_confined_bridge(cfg, i, T, n_steps, s) for i, s in enumerate(seeds)]
        try:
            res = integrand_cluster_split_check(paths, part, cfg, alpha, nu, T)
        except QuadratureUnstable:
            report = report.merge(PathCheckReport(0, 0, math.inf, 1e-6 * T, seeds, 1))
            continue
        report = report.merge(PathCheckReport(1, int(not res.passed), res.margin, 1e-6 * T, seeds))
    return report
