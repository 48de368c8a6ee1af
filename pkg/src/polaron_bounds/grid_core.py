"""Discretized orbitals, densities and the quadratures of the Pekar-Tomasevich functional.

Two discretizations are supported:

* radial (s-wave) orbitals on a logarithmic mesh, with the exact Newton kernel
  ``min(1/r, 1/r')`` for the Coulomb term;
* uniform Cartesian grids (one particle in 3 dimensions, or a coarse
  two-particle grid in 6 dimensions), with free-space FFT convolution for the
  Coulomb term.

All energies are in units where the kinetic operator is ``-Laplacian``.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft


class GridError(ValueError):
    pass


class ZeroNorm(GridError):
    pass


class GridTooCoarse(GridError):
    pass


class GridMismatch(GridError):
    pass


FOUR_PI = 4.0 * np.pi
# radius of the sphere with the volume of a unit cell
_EQUIV_SPHERE = (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0)


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Radial mesh with quadrature weights for integrals over R^3.

    ``weights[k]`` already contains the ``4 pi r^2 dr`` measure, so
    ``sum(weights * f)`` approximates ``int f(|x|) d^3x``.
    """
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if r.ndim != 1 or r.shape != w.shape:
            raise GridError("nodes and weights must be 1-d arrays of equal length")
        if len(r) < 4:
            raise GridTooCoarse(f"radial grid needs at least 4 nodes, got {len(r)}")
        if r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise GridError("radial nodes must be positive and strictly increasing")
        object.__setattr__(self, "nodes", r)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def key(self) -> tuple:
        return ("radial", self.nodes.tobytes(), self.weights.tobytes())

    def same_as(self, other) -> bool:
        return isinstance(other, RadialGrid) and (
            self is other
            or (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights)))

    def scaled(self, lam: float) -> "RadialGrid":
        # x -> x / lam
        return RadialGrid(self.nodes / lam, self.weights / lam**3)

    def hash(self) -> str:
        return _hash_bytes(b"radial", self.nodes.tobytes(), self.weights.tobytes())


def log_radial_grid(r_max: float = 40.0, n: int = 1200, r_min_ratio: float = 1e-3) -> RadialGrid:
    """Logarithmic mesh on ``[r_min_ratio * r_max, r_max]``.

    Weights are the trapezoid rule in ``t = log r`` (so ``dr = r dt``); the
    ball ``|x| < r_min`` is lumped onto the first node.
    """
    if r_max <= 0:
        raise GridError("r_max must be positive")
    if n < 4:
        raise GridTooCoarse(f"radial grid needs at least 4 nodes, got {n}")
    t = np.linspace(np.log(r_min_ratio * r_max), np.log(r_max), n)
    r = np.exp(t)
    dt = t[1] - t[0]
    w = FOUR_PI * r**3 * dt
    w[0] *= 0.5
    w[-1] *= 0.5
    w[0] += FOUR_PI * r[0] ** 3 / 3.0
    return RadialGrid(r, w)


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform cell-centred grid on ``[-L/2, L/2]^3`` with ``n`` points per axis.

    ``boundary`` is ``"dirichlet"`` (the orbital vanishes on the cube faces)
    or ``"periodic"``.
    """
    extent: float
    n: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.n < 4:
            raise GridTooCoarse(f"need n >= 4 points per axis, got {self.n}")
        if self.extent <= 0:
            raise GridError("extent must be positive")
        if self.boundary not in ("dirichlet", "periodic"):
            raise GridError(f"unknown boundary {self.boundary!r}")

    @property
    def h(self) -> float:
        return self.extent / self.n

    @property
    def axis(self) -> np.ndarray:
        return -0.5 * self.extent + (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        x = self.axis
        return np.meshgrid(x, x, x, indexing="ij")

    def key(self) -> tuple:
        return ("cartesian", float(self.extent), int(self.n), self.boundary)

    def same_as(self, other) -> bool:
        return isinstance(other, CartesianGrid) and self.key() == other.key()

    def scaled(self, lam: float) -> "CartesianGrid":
        return CartesianGrid(self.extent / lam, self.n, self.boundary)

    def hash(self) -> str:
        return _hash_bytes(repr(self.key()).encode())


def _hash_bytes(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# wavefunctions and densities
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialWaveFunction:
    """Spherically symmetric orbital ``psi(|x|)`` sampled on a radial grid."""
    grid: RadialGrid
    values: np.ndarray
    n_particles: int = field(default=1, init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise GridMismatch("values do not match the radial grid")
        object.__setattr__(self, "values", v)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.grid.weights, self.values**2)))

    @classmethod
    def from_function(cls, grid: RadialGrid, f) -> "RadialWaveFunction":
        return cls(grid, f(grid.nodes))

    @classmethod
    def gaussian(cls, grid: RadialGrid, sigma: float, normalized: bool = True):
        """Orbital ``exp(-r^2 / (4 sigma^2))``; ``|psi|^2`` has per-axis std ``sigma``."""
        psi = cls(grid, np.exp(-grid.nodes**2 / (4.0 * sigma**2)))
        return normalize(psi) if normalized else psi


@dataclass(frozen=True, eq=False)
class CartesianWaveFunction:
    """Wavefunction on a uniform grid: shape ``(n,)*3`` for one particle or
    ``(n,)*6`` for two particles."""
    grid: CartesianGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if v.shape not in ((n,) * 3, (n,) * 6):
            raise GridMismatch(f"values of shape {v.shape} do not fit a grid with n={n}")
        object.__setattr__(self, "values", v)

    @property
    def n_particles(self) -> int:
        return self.values.ndim // 3

    @property
    def extent(self) -> float:
        return self.grid.extent

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def h(self) -> float:
        return self.grid.h

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.h ** self.values.ndim))

    @classmethod
    def gaussian(cls, grid: CartesianGrid, sigma: float, center=(0.0, 0.0, 0.0),
                 normalized: bool = True):
        X, Y, Z = grid.mesh()
        c = np.asarray(center, dtype=float)
        r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
        psi = cls(grid, np.exp(-r2 / (4.0 * sigma**2)))
        return normalize(psi) if normalized else psi

    @classmethod
    def product(cls, phi1: "CartesianWaveFunction", phi2: "CartesianWaveFunction"):
        """Two-particle state ``phi1(x1) phi2(x2)`` on the 6-d grid."""
        _check_same_grid([phi1, phi2])
        return cls(phi1.grid, np.multiply.outer(phi1.values, phi2.values))


WaveFunction = RadialWaveFunction | CartesianWaveFunction


@dataclass(frozen=True, eq=False)
class Density:
    """Single-particle density on a radial or Cartesian (3-d) grid.

    For radial densities ``center`` places the spherically symmetric profile
    at a point in R^3; it only matters for Coulomb integrals between
    densities with different centres.
    """
    grid: RadialGrid | CartesianGrid
    values: np.ndarray
    n_particles: int = 1
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def mass(self) -> float:
        if isinstance(self.grid, RadialGrid):
            return float(np.dot(self.grid.weights, self.values))
        return float(np.sum(self.values) * self.grid.h**3)

    def __add__(self, other: "Density") -> "Density":
        if not self.grid.same_as(other.grid) or self.center != other.center:
            raise GridMismatch("cannot add densities on different grids or centres")
        return Density(self.grid, self.values + other.values,
                       self.n_particles + other.n_particles, self.center)

    @classmethod
    def zero(cls, grid) -> "Density":
        shape = grid.nodes.shape if isinstance(grid, RadialGrid) else (grid.n,) * 3
        return cls(grid, np.zeros(shape), 0)


def _check_same_grid(items):
    g0 = items[0].grid
    for it in items[1:]:
        if not g0.same_as(it.grid):
            raise GridMismatch("objects live on different grids")


# --------------------------------------------------------------------------
# elementary operations
# --------------------------------------------------------------------------

def normalize(psi):
    norm = psi.norm()
    if not np.isfinite(norm) or norm <= np.finfo(float).eps * psi.values.size:
        raise ZeroNorm(f"cannot normalize a wavefunction of norm {norm!r}")
    return type(psi)(psi.grid, psi.values / norm)


def radial_stiffness(grid: RadialGrid) -> np.ndarray:
    """Coefficients ``c_k`` with ``int |grad psi|^2 = sum_k c_k (u_{k+1} - u_k)^2``."""
    r = grid.nodes
    dr = np.diff(r)
    mid = 0.5 * (r[1:] + r[:-1])
    return FOUR_PI * mid**2 / dr


def _neg_laplacian(values: np.ndarray, h: float, boundary: str) -> np.ndarray:
    """Seven-point (or 13-point in 6-d) ``-Laplacian`` with cell-centred ghosts.

    Dirichlet uses antisymmetric ghosts, which puts the zero on the cube face.
    """
    out = 2.0 * values.ndim * values
    for ax in range(values.ndim):
        if boundary == "periodic":
            out -= np.roll(values, 1, axis=ax) + np.roll(values, -1, axis=ax)
        else:
            first = np.take(values, [0], axis=ax)
            last = np.take(values, [-1], axis=ax)
            up = np.concatenate([np.take(values, np.arange(1, values.shape[ax]), axis=ax), -last], axis=ax)
            down = np.concatenate([-first, np.take(values, np.arange(values.shape[ax] - 1), axis=ax)], axis=ax)
            out -= up + down
    return out / h**2


def kinetic_energy(psi) -> float:
    """``sum_i int |grad_{x_i} psi|^2`` on the wavefunction's grid."""
    if isinstance(psi, RadialWaveFunction):
        c = radial_stiffness(psi.grid)
        return float(np.dot(c, np.diff(psi.values) ** 2))
    if psi.grid.n < 4:
        raise GridTooCoarse("need n >= 4")
    h = psi.grid.h
    lap = _neg_laplacian(psi.values, h, psi.grid.boundary)
    return float(np.sum(psi.values * lap) * h**psi.values.ndim)


def one_body_density(psi) -> Density:
    """Single-particle density of a single orbital or of a two-particle grid state."""
    if isinstance(psi, RadialWaveFunction):
        return Density(psi.grid, psi.values**2, 1)
    p2 = psi.values**2
    if psi.n_particles == 1:
        return Density(psi.grid, p2, 1)
    h3 = psi.grid.h**3
    rho = p2.sum(axis=(3, 4, 5)) * h3 + p2.sum(axis=(0, 1, 2)) * h3
    return Density(psi.grid, rho, 2)


def density(orbitals) -> Density:
    """``rho = sum_i |phi_i|^2`` for a product of orbitals on one grid."""
    orbitals = list(orbitals)
    if not orbitals:
        raise ValueError("need at least one orbital")
    _check_same_grid(orbitals)
    rho = orbitals[0].values**2
    for phi in orbitals[1:]:
        rho = rho + phi.values**2
    return Density(orbitals[0].grid, rho, len(orbitals))


# --------------------------------------------------------------------------
# Coulomb integrals
# --------------------------------------------------------------------------

def newton_potential(rho: Density) -> np.ndarray:
    """``V(r_k) = int rho(y) min(1/r_k, 1/|y|) d^3y`` for a radial density."""
    r, w = rho.grid.nodes, rho.grid.weights
    q = w * rho.values
    inner = np.cumsum(q) / r
    outer = np.concatenate([np.cumsum((q / r)[::-1])[::-1][1:], [0.0]])
    return inner + outer


def shell_kernel(a: np.ndarray, b: np.ndarray, dist: float) -> np.ndarray:
    """Mean of ``1/|x - y|`` for x, y uniform on spheres of radii ``a``, ``b``
    whose centres are ``dist`` apart (broadcasts over ``a`` and ``b``)."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    if dist == 0.0:
        return 1.0 / np.maximum(a, b)
    lo = np.abs(dist - b)
    hi = dist + b
    out = np.empty(a.shape)
    far = a <= lo
    inside = a >= hi
    mid = ~(far | inside)
    out[far] = 1.0 / np.maximum(dist, b[far])
    out[inside] = 1.0 / a[inside]
    am, bm, lm, hm = a[mid], b[mid], lo[mid], hi[mid]
    # |x - y| = s ranges over (lo, hi) with density s / (2 b dist); the a-shell
    # potential is 1/a for s < a and 1/s beyond
    out[mid] = (am**2 - lm**2) / (4.0 * am * bm * dist) + (hm - am) / (2.0 * bm * dist)
    return out


@functools.lru_cache(maxsize=32)
def _shell_matrix(grid_key: tuple, dist: float) -> np.ndarray:
    r = np.frombuffer(grid_key[1])
    m = shell_kernel(r[:, None], r[None, :], dist)
    # enforce exact symmetry of the kernel
    return 0.5 * (m + m.T)


def two_center_matrix(grid: RadialGrid, dist: float) -> np.ndarray:
    """Kernel matrix ``K`` with ``D(rho_a, rho_b) = (w rho_a) . K . (w rho_b)``
    for radial densities centred ``dist`` apart."""
    return _shell_matrix(grid.key(), float(dist))


@functools.lru_cache(maxsize=16)
def _coulomb_kernel_hat(n: int, h: float, ndim: int = 3) -> np.ndarray:
    """FFT of ``1/|x|`` on the zero-padded ``(2n)^3`` grid.

    The origin cell uses the mean of ``1/|x|`` over the ball with the cell's
    volume, ``3 / (2 a)`` with ``a = h (3/(4 pi))^(1/3)``.
    """
    m = 2 * n
    idx = np.arange(m)
    idx = np.where(idx < n, idx, idx - m).astype(float)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    dist = h * np.sqrt(I**2 + J**2 + K**2)
    with np.errstate(divide="ignore"):
        G = 1.0 / dist
    G[0, 0, 0] = 1.5 / (_EQUIV_SPHERE * h)
    return scipy.fft.rfftn(G)


def coulomb_kernel_cell(n: int, h: float) -> np.ndarray:
    """Real-space regularized kernel ``G[d] = 1/|h d|`` on offsets ``d in (-n, n)^3``,
    stored with offset ``d`` at index ``d + n - 1``."""
    idx = np.arange(-(n - 1), n, dtype=float)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    dist = h * np.sqrt(I**2 + J**2 + K**2)
    with np.errstate(divide="ignore"):
        G = 1.0 / dist
    G[n - 1, n - 1, n - 1] = 1.5 / (_EQUIV_SPHERE * h)
    return G


def cartesian_potential(rho: Density) -> np.ndarray:
    """``V(x) = int rho(y) / |x - y| dy`` by free-space FFT convolution."""
    g = rho.grid
    n, h = g.n, g.h
    Ghat = _coulomb_kernel_hat(n, h)
    padded = scipy.fft.rfftn(rho.values, s=(2 * n,) * 3)
    conv = scipy.fft.irfftn(padded * Ghat, s=(2 * n,) * 3)
    return conv[:n, :n, :n] * h**3


def _one_sided(rho1: Density, rho2: Density) -> float:
    if isinstance(rho1.grid, RadialGrid):
        dist = float(np.linalg.norm(np.subtract(rho1.center, rho2.center)))
        if dist == 0.0:
            return float(np.dot(rho1.grid.weights * rho1.values, newton_potential(rho2)))
        K = two_center_matrix(rho1.grid, dist)
        q1 = rho1.grid.weights * rho1.values
        q2 = rho2.grid.weights * rho2.values
        return float(q1 @ (K @ q2))
    return float(np.sum(rho1.values * cartesian_potential(rho2)) * rho1.grid.h**3)


def coulomb_interaction(rho1: Density, rho2: Density) -> float:
    """``D(rho1, rho2) = int int rho1(x) rho2(y) / |x - y| dx dy``.

    Both orders are evaluated and averaged, so ``D(a, b) == D(b, a)`` holds
    bit for bit.
    """
    if not rho1.grid.same_as(rho2.grid):
        raise GridMismatch("densities live on different grids")
    return 0.5 * (_one_sided(rho1, rho2) + _one_sided(rho2, rho1))


def pair_repulsion_6d(psi: CartesianWaveFunction) -> float:
    """``int |psi(x1, x2)|^2 / |x1 - x2|`` on a two-particle grid, using the
    same regularized kernel as :func:`coulomb_interaction`."""
    n, h = psi.grid.n, psi.grid.h
    G = coulomb_kernel_cell(n, h)
    p2 = (psi.values**2).reshape(n**3, n, n, n)
    total = 0.0
    flat = 0
    for a in range(n):
        for b in range(n):
            for c in range(n):
                # G[x1 - x2] for all x2, x1 = (a, b, c)
                sub = G[a:a + n, b:b + n, c:c + n][::-1, ::-1, ::-1]
                total += float(np.sum(p2[flat] * sub))
                flat += 1
    return total * h**6


# --------------------------------------------------------------------------
# the functional
# --------------------------------------------------------------------------

def pt_energy(psi, alpha: float, U: float = 0.0, centers=None) -> float:
    """Pekar-Tomasevich energy of a product of orbitals or of a two-particle grid state.

    Parameters
    ----------
    psi : orbital, list of orbitals, or two-particle CartesianWaveFunction
        Orbitals must be normalized and share one grid.
    alpha : float
        Phonon coupling, multiplies the attractive self-interaction of rho.
    U : float
        Coulomb repulsion strength.
    centers : sequence of 3-vectors, optional
        Positions of radial orbitals (default: all at the origin).
    """
    if isinstance(psi, CartesianWaveFunction) and psi.n_particles == 2:
        kin = kinetic_energy(psi)
        rho = one_body_density(psi)
        rep = pair_repulsion_6d(psi) if U != 0.0 else 0.0
        return kin + U * rep - alpha * coulomb_interaction(rho, rho)

    orbitals = [psi] if not isinstance(psi, (list, tuple)) else list(psi)
    _check_same_grid(orbitals)
    kin = sum(kinetic_energy(phi) for phi in orbitals)
    if centers is None:
        centers = [(0.0, 0.0, 0.0)] * len(orbitals)
    if len(centers) != len(orbitals):
        raise ValueError("need one centre per orbital")
    if isinstance(orbitals[0], CartesianWaveFunction) or len(set(map(tuple, centers))) == 1:
        rhos = [Density(phi.grid, phi.values**2, 1) for phi in orbitals]
        total = Density(orbitals[0].grid, sum(r.values for r in rhos), len(rhos))
        self_term = coulomb_interaction(total, total)
        rep = 0.0
        if U != 0.0:
            for i in range(len(rhos)):
                for j in range(i + 1, len(rhos)):
                    rep += coulomb_interaction(rhos[i], rhos[j])
        return kin + U * rep - alpha * self_term

    rhos = [Density(phi.grid, phi.values**2, 1, c) for phi, c in zip(orbitals, centers)]
    self_term = 0.0
    rep = 0.0
    for i in range(len(rhos)):
        self_term += coulomb_interaction(rhos[i], rhos[i])
        for j in range(i + 1, len(rhos)):
            dij = coulomb_interaction(rhos[i], rhos[j])
            self_term += 2.0 * dij
            rep += dij
    return kin + U * rep - alpha * self_term


def scale_wavefunction(psi, lam: float):
    """``psi_lam(X) = lam^{3N/2} psi(lam X)``, realised exactly by shrinking the grid."""
    if not lam > 0:
        raise ValueError(f"scale factor must be positive, got {lam}")
    if isinstance(psi, (list, tuple)):
        return [scale_wavefunction(p, lam) for p in psi]
    return type(psi)(psi.grid.scaled(lam), psi.values * lam ** (1.5 * psi.n_particles))


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_MAGIC = b"PTGRID01"
_HEADER = struct.Struct("<8sBBBxI")   # magic, kind, n_particles, boundary, n
_BOUNDARIES = ("dirichlet", "periodic")


def to_bytes(psi) -> bytes:
    """Flat little-endian snapshot: header, grid description, float64 values.

    Radial: header + n nodes + n weights + n values.
    Cartesian: header + extent + n^(3N) values in C order.
    """
    if isinstance(psi, RadialWaveFunction):
        head = _HEADER.pack(_MAGIC, 0, 1, 0, psi.grid.n)
        arrays = [psi.grid.nodes, psi.grid.weights, psi.values]
        return head + b"".join(a.astype("<f8").tobytes() for a in arrays)
    g = psi.grid
    head = _HEADER.pack(_MAGIC, 1, psi.n_particles, _BOUNDARIES.index(g.boundary), g.n)
    return head + struct.pack("<d", g.extent) + psi.values.astype("<f8").tobytes()


def from_bytes(blob: bytes):
    magic, kind, n_particles, boundary, n = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise ValueError("not a grid snapshot")
    off = _HEADER.size
    if kind == 0:
        data = np.frombuffer(blob, dtype="<f8", count=3 * n, offset=off).astype(float)
        grid = RadialGrid(data[:n], data[n:2 * n])
        return RadialWaveFunction(grid, data[2 * n:])
    (extent,) = struct.unpack_from("<d", blob, off)
    off += 8
    count = n ** (3 * n_particles)
    vals = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float)
    grid = CartesianGrid(extent, n, _BOUNDARIES[boundary])
    return CartesianWaveFunction(grid, vals.reshape((n,) * (3 * n_particles)))


def to_csv(psi) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(psi, RadialWaveFunction):
        w.writerow(["r", "value"])
        for r, v in zip(psi.nodes, psi.values):
            w.writerow([repr(float(r)), repr(float(v))])
        return buf.getvalue()
    if psi.n_particles != 1:
        raise ValueError("CSV export supports single-particle grids only")
    w.writerow(["x", "y", "z", "value"])
    x = psi.grid.axis
    for (i, j, k), v in np.ndenumerate(psi.values):
        w.writerow([repr(float(x[i])), repr(float(x[j])), repr(float(x[k])), repr(float(v))])
    return buf.getvalue()
