"""Variational minimization of the Pekar-Tomasevich functional.

Everything is solved at coupling ``alpha = 1`` and rescaled with
``E_U(alpha) = alpha^2 E_{U/alpha}(1)``.  Multi-particle estimates use Hartree
products of spherically symmetric orbitals; every reported number is the
energy of an admissible normalized trial state (or a limit of such states),
hence an upper bound on the true infimum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.fft
from scipy.linalg import LinAlgError, solveh_banded
from scipy.optimize import minimize_scalar

from . import grid_core as gc
from .bound_engine import optimal_partition_value

UPPER = "upper_variational"
LOWER = "lower_certificate"
REFERENCE = "reference_oracle"
KINDS = (UPPER, LOWER, REFERENCE)

PEKAR_SIGMA = 1.5 * math.sqrt(math.pi)     # optimal Gaussian width at alpha = 1


class SolverError(RuntimeError):
    pass


class NotConverged(UserWarning):
    """Issued when a solve stops at ``max_iterations``; the best state is still returned."""


class OscillationDetected(SolverError):
    pass


class ProviderFailure(SolverError):
    pass


class InvalidK(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Settings for one minimization.

    ``step`` is the imaginary-time increment; ``None`` means ``1e-3 r_max^2``
    on radial grids and ``2.0`` on Cartesian grids (preconditioned flow).
    """
    max_iterations: int = 3000
    step: float | None = None
    tol: float = 1e-9
    seed: int | None = 0
    perturbation: float = 1e-3
    grid_kind: str = "radial"
    n_radial: int = 1200
    r_max: float = 40.0
    cart_n: int = 48
    cart_extent: float = 24.0
    max_separation: float = 200.0

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.grid_kind not in ("radial", "cartesian"):
            raise ValueError(f"unknown grid kind {self.grid_kind!r}")

    def radial_grid(self) -> gc.RadialGrid:
        return gc.log_radial_grid(self.r_max, self.n_radial)

    def cartesian_grid(self) -> gc.CartesianGrid:
        return gc.CartesianGrid(self.cart_extent, self.cart_n)

    def grid(self):
        return self.radial_grid() if self.grid_kind == "radial" else self.cartesian_grid()

    def default_step(self) -> float:
        if self.step is not None:
            return self.step
        return 1e-3 * self.r_max**2 if self.grid_kind == "radial" else 2.0


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    kind: str
    N: int
    nu: float
    alpha: float = 1.0
    note: str = ""
    iterations: int = 0
    grid_hash: str = ""
    converged: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimate kind {self.kind!r}")

    def to_record(self) -> dict:
        return {"N": self.N, "nu": self.nu, "alpha": self.alpha, "kind": self.kind,
                "value": self.value, "iterations": self.iterations,
                "grid_hash": self.grid_hash}


@dataclass(eq=False)
class TrialState:
    """Product state made of groups that are infinitely far from each other.

    Each group is a list of orbitals with centres; the energy of the state is
    the sum of the group energies (inter-group terms vanish in the limit).
    """
    groups: list
    label: str = ""

    @property
    def N(self) -> int:
        return sum(len(orbs) for orbs, _ in self.groups)

    def energy(self, alpha: float, U: float) -> float:
        return sum(gc.pt_energy(orbs, alpha, U, centers) for orbs, centers in self.groups)

    def orbitals(self) -> list:
        return [phi for orbs, _ in self.groups for phi in orbs]


# --------------------------------------------------------------------------
# initial guesses
# --------------------------------------------------------------------------

def _smooth_noise(x: np.ndarray, scale: float, rng: np.random.Generator, modes: int = 4):
    coeffs = rng.standard_normal(modes)
    return sum(c * np.cos((k + 1) * np.pi * x / scale) for k, c in enumerate(coeffs)) / modes


def initial_radial(grid: gc.RadialGrid, config: SolverConfig, sigma: float = PEKAR_SIGMA,
                   salt: int = 0) -> gc.RadialWaveFunction:
    u = np.exp(-grid.nodes**2 / (4.0 * sigma**2))
    if config.seed is not None and config.perturbation:
        rng = np.random.default_rng([config.seed, salt])
        u = u * (1.0 + config.perturbation * _smooth_noise(grid.nodes, grid.nodes[-1], rng))
    return gc.normalize(gc.RadialWaveFunction(grid, u))


def initial_cartesian(grid: gc.CartesianGrid, config: SolverConfig, sigma: float = PEKAR_SIGMA,
                      center=(0.0, 0.0, 0.0), salt: int = 0) -> gc.CartesianWaveFunction:
    psi = gc.CartesianWaveFunction.gaussian(grid, sigma, center, normalized=False)
    u = psi.values
    if config.seed is not None and config.perturbation:
        rng = np.random.default_rng([config.seed, salt])
        X, Y, Z = grid.mesh()
        L = grid.extent
        noise = _smooth_noise(X, L, rng) + _smooth_noise(Y, L, rng) + _smooth_noise(Z, L, rng)
        u = u * (1.0 + config.perturbation * noise)
    return gc.normalize(gc.CartesianWaveFunction(grid, u))


# --------------------------------------------------------------------------
# radial self-consistent descent
# --------------------------------------------------------------------------

def _radial_potentials(grid, rhos, centers):
    """``V[i][j]`` = potential of density j evaluated on the shells of orbital i."""
    n = len(rhos)
    w = grid.weights
    V = [[None] * n for _ in range(n)]
    for j in range(n):
        V[j][j] = gc.newton_potential(gc.Density(grid, rhos[j]))
    for i in range(n):
        for j in range(i + 1, n):
            dist = float(np.linalg.norm(np.subtract(centers[i], centers[j])))
            if dist == 0.0:
                V[i][j] = V[j][j]
                V[j][i] = V[i][i]
            else:
                K = gc.two_center_matrix(grid, dist)
                V[i][j] = K @ (w * rhos[j])
                V[j][i] = K @ (w * rhos[i])
    return V


def _radial_energy(grid, stiff, us, centers, alpha, U):
    w = grid.weights
    rhos = [u * u for u in us]
    V = _radial_potentials(grid, rhos, centers)
    kin = sum(float(np.dot(stiff, np.diff(u) ** 2)) for u in us)
    self_term = 0.0
    rep = 0.0
    n = len(us)
    for i in range(n):
        self_term += float(np.dot(w * rhos[i], V[i][i]))
        for j in range(i + 1, n):
            # average both orders so the pair term is symmetric
            dij = 0.5 * (float(np.dot(w * rhos[i], V[i][j])) + float(np.dot(w * rhos[j], V[j][i])))
            self_term += 2.0 * dij
            rep += dij
    return kin + U * rep - alpha * self_term, V


def _radial_step(grid, stiff, us, V, alpha, U, dt):
    w = grid.weights
    n = len(us)
    new = []
    for i in range(n):
        field = 2.0 * alpha * sum(V[i][j] for j in range(n))
        if U != 0.0 and n > 1:
            field = field - U * sum(V[i][j] for j in range(n) if j != i)
        diag = w * (1.0 - dt * field)
        diag[:-1] += dt * stiff
        diag[1:] += dt * stiff
        ab = np.empty((2, len(w)))
        ab[1] = diag
        ab[0, 0] = 0.0
        ab[0, 1:] = -dt * stiff
        u = solveh_banded(ab, w * us[i])
        u /= math.sqrt(float(np.dot(w, u * u)))
        new.append(u)
    return new


@dataclass
class _Descent:
    us: list
    energy: float
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    rejections: int = 0


def _descend_radial(grid, us, centers, alpha, U, config, max_iterations=None):
    stiff = gc.radial_stiffness(grid)
    dt = config.default_step()
    dt_floor = dt * 1e-10
    E, V = _radial_energy(grid, stiff, us, centers, alpha, U)
    state = _Descent(list(us), E, [E])
    max_it = max_iterations or config.max_iterations
    while state.iterations < max_it:
        try:
            trial = _radial_step(grid, stiff, state.us, V, alpha, U, dt)
            E_new, V_new = _radial_energy(grid, stiff, trial, centers, alpha, U)
        except (LinAlgError, FloatingPointError):
            E_new = math.inf
        if not E_new <= state.energy + 1e-12 * max(1.0, abs(state.energy)):
            dt *= 0.5
            state.rejections += 1
            if dt < dt_floor:
                raise OscillationDetected("step size collapsed while the energy kept rising")
            continue
        state.iterations += 1
        change = abs(state.energy - E_new)
        state.us, state.energy, V = trial, E_new, V_new
        state.history.append(E_new)
        if change <= config.tol * max(abs(E_new), 1e-300):
            state.converged = True
            break
    return state


# --------------------------------------------------------------------------
# Cartesian descent (preconditioned projected gradient)
# --------------------------------------------------------------------------

def _dst_symbol(grid: gc.CartesianGrid) -> np.ndarray:
    n, h = grid.n, grid.h
    k = np.arange(1, n + 1)
    lam = (4.0 / h**2) * np.sin(np.pi * k / (2 * n)) ** 2
    return lam[:, None, None] + lam[None, :, None] + lam[None, None, :]


def _cartesian_energy(grid, us, alpha, U):
    h3 = grid.h**3
    rhos = [gc.Density(grid, u * u) for u in us]
    V = [gc.cartesian_potential(r) for r in rhos]
    lap = [gc._neg_laplacian(u, grid.h, grid.boundary) for u in us]
    kin = sum(float(np.sum(u * l)) * h3 for u, l in zip(us, lap))
    n = len(us)
    D = [[float(np.sum(rhos[i].values * V[j])) * h3 for j in range(n)] for i in range(n)]
    self_term = sum(D[i][j] for i in range(n) for j in range(n))
    rep = sum(0.5 * (D[i][j] + D[j][i]) for i in range(n) for j in range(i + 1, n))
    return kin + U * rep - alpha * self_term, V, lap


def _descend_cartesian(grid, us, alpha, U, config, max_iterations=None):
    if grid.boundary != "dirichlet":
        raise ValueError("the Cartesian solver uses Dirichlet boundaries")
    h3 = grid.h**3
    symbol = _dst_symbol(grid)
    dt = config.default_step()
    dt_floor = dt * 1e-10
    E, V, lap = _cartesian_energy(grid, us, alpha, U)
    state = _Descent(list(us), E, [E])
    max_it = max_iterations or config.max_iterations
    n = len(us)
    while state.iterations < max_it:
        trial = []
        for i, u in enumerate(state.us):
            field = 2.0 * alpha * sum(V)
            if U != 0.0 and n > 1:
                field = field - U * sum(V[j] for j in range(n) if j != i)
            Hu = lap[i] - field * u
            mu = float(np.sum(u * Hu)) * h3
            resid = Hu - mu * u
            prec = scipy.fft.idstn(scipy.fft.dstn(resid, type=2, norm="ortho") * (dt / (1.0 + dt * symbol)),
                                   type=2, norm="ortho")
            v = u - prec
            trial.append(v / math.sqrt(float(np.sum(v * v)) * h3))
        E_new, V_new, lap_new = _cartesian_energy(grid, trial, alpha, U)
        if not E_new <= state.energy + 1e-12 * max(1.0, abs(state.energy)):
            dt *= 0.5
            state.rejections += 1
            if dt < dt_floor:
                raise OscillationDetected("step size collapsed while the energy kept rising")
            continue
        state.iterations += 1
        change = abs(state.energy - E_new)
        state.us, state.energy, V, lap = trial, E_new, V_new, lap_new
        state.history.append(E_new)
        if change <= config.tol * max(abs(E_new), 1e-300):
            state.converged = True
            break
    return state


def _run_with_retry(run, config):
    """Run a descent; on oscillation halve the step and retry once."""
    try:
        return run(config)
    except OscillationDetected:
        return run(replace(config, step=0.5 * config.default_step()))


def _warn_if_unconverged(state, what):
    if not state.converged:
        warnings.warn(f"{what} stopped after {state.iterations} iterations "
                      f"(energy {state.energy:.12g}); returning best state", NotConverged,
                      stacklevel=3)


# --------------------------------------------------------------------------
# public solvers
# --------------------------------------------------------------------------

def minimize_pekar(alpha: float = 1.0, config: SolverConfig | None = None):
    """Minimize the one-particle functional ``int |grad psi|^2 - alpha D(|psi|^2, |psi|^2)``.

    The descent runs at ``alpha = 1`` and the minimizer is rescaled, so
    ``E(alpha) = alpha^2 E(1)`` holds exactly.

    Returns
    -------
    (EnergyEstimate, wavefunction)
        The wavefunction is radial or Cartesian according to ``config.grid_kind``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    config = config or SolverConfig()
    grid = config.grid()
    if config.grid_kind == "radial":
        state = _run_with_retry(
            lambda cfg: _descend_radial(grid, [initial_radial(grid, cfg).values],
                                        [(0.0, 0.0, 0.0)], 1.0, 0.0, cfg), config)
        psi = gc.RadialWaveFunction(grid, state.us[0])
    else:
        state = _run_with_retry(
            lambda cfg: _descend_cartesian(grid, [initial_cartesian(grid, cfg).values], 1.0, 0.0, cfg),
            config)
        psi = gc.CartesianWaveFunction(grid, state.us[0])
    _warn_if_unconverged(state, "minimize_pekar")
    est = EnergyEstimate(alpha**2 * state.energy, UPPER, 1, 0.0, alpha,
                         note=f"{config.grid_kind} gradient flow at alpha=1, rescaled",
                         iterations=state.iterations, grid_hash=grid.hash(),
                         converged=state.converged)
    return est, gc.scale_wavefunction(psi, alpha) if alpha != 1.0 else psi


def pekar_energy_history(config: SolverConfig | None = None) -> list:
    """Energy after every accepted step of the alpha = 1 radial descent."""
    config = config or SolverConfig()
    grid = config.radial_grid()
    state = _descend_radial(grid, [initial_radial(grid, config).values], [(0.0, 0.0, 0.0)],
                            1.0, 0.0, config)
    return state.history


def _cocentered(N, nu, config, grid):
    """All orbitals at one centre, seeded identical; ``None`` if that family is
    not bound (effective coupling ``N - nu (N - 1) / 2`` not positive)."""
    eff = N - nu * (N - 1) / 2.0
    if eff <= 0:
        return None
    sigma = PEKAR_SIGMA / eff
    if config.grid_kind == "radial":
        seeds = [initial_radial(grid, config, sigma, salt=i).values for i in range(N)]
        centers = [(0.0, 0.0, 0.0)] * N
        state = _run_with_retry(lambda cfg: _descend_radial(grid, seeds, centers, 1.0, nu, cfg), config)
        orbs = [gc.RadialWaveFunction(grid, u) for u in state.us]
    else:
        seeds = [initial_cartesian(grid, config, sigma, salt=i).values for i in range(N)]
        centers = [(0.0, 0.0, 0.0)] * N
        state = _run_with_retry(lambda cfg: _descend_cartesian(grid, seeds, 1.0, nu, cfg), config)
        orbs = [gc.CartesianWaveFunction(grid, u) for u in state.us]
    _warn_if_unconverged(state, f"co-centred Hartree N={N}")
    return TrialState([(orbs, centers)], "co-centred"), state


def _chain_centers(N, spacing):
    offset = 0.5 * (N - 1) * spacing
    return [(0.0, 0.0, k * spacing - offset) for k in range(N)]


def _displaced(N, nu, config, grid):
    """Orbitals on a line; the spacing is optimized starting from ``2 sigma``."""
    if config.grid_kind == "radial":
        seeds = [initial_radial(grid, config, salt=i).values for i in range(N)]
        cache = {}

        def solve(spacing):
            spacing = float(spacing)
            if spacing not in cache:
                st = _descend_radial(grid, seeds, _chain_centers(N, spacing), 1.0, nu, config,
                                     max_iterations=min(config.max_iterations, 600))
                cache[spacing] = st
            return cache[spacing].energy

        start = 2.0 * PEKAR_SIGMA
        solve(start)
        minimize_scalar(solve, bounds=(0.0, config.max_separation), method="bounded",
                        options={"xatol": 1e-3})
        best = min(cache, key=lambda s: cache[s].energy)
        st = cache[best]
        orbs = [gc.RadialWaveFunction(grid, u) for u in st.us]
        return TrialState([(orbs, _chain_centers(N, best))], f"displaced spacing={best:.6g}"), st
    # Cartesian: a single run from displaced seeds, the grid resolves the geometry
    spacing = 2.0 * PEKAR_SIGMA
    seeds = [initial_cartesian(grid, config, center=c, salt=i).values
             for i, c in enumerate(_chain_centers(N, spacing))]
    st = _run_with_retry(lambda cfg: _descend_cartesian(grid, seeds, 1.0, nu, cfg), config)
    orbs = [gc.CartesianWaveFunction(grid, u) for u in st.us]
    return TrialState([(orbs, [(0.0, 0.0, 0.0)] * N)], "displaced (cartesian)"), st


def hartree_candidates(N: int, nu: float, config: SolverConfig | None = None,
                       _memo: dict | None = None) -> list:
    """All product trial states tried for ``N`` particles at repulsion ``nu``.

    Candidates: co-centred orbitals, orbitals on a line with optimized
    spacing, and every splitting into infinitely separated sub-clusters built
    from the best states of smaller particle numbers.
    """
    config = config or SolverConfig()
    memo = {} if _memo is None else _memo
    key = (N, float(nu))
    if key in memo:
        return memo[key]
    grid = config.grid()
    found = []
    if N == 1:
        _, psi = minimize_pekar(1.0, config)
        found.append(TrialState([([psi], [(0.0, 0.0, 0.0)])], "pekar"))
    else:
        co = _cocentered(N, nu, config, grid)
        if co is not None:
            found.append(co[0])
        if nu > 0:
            found.append(_displaced(N, nu, config, grid)[0])
        best_small = {}
        for k in range(1, N):
            cands = hartree_candidates(k, nu, config, memo)
            best_small[k] = min(cands, key=lambda s: s.energy(1.0, nu))
        values = {k: best_small[k].energy(1.0, nu) for k in range(1, N)}
        # N itself may not be split further than N-1 + 1; exclude the unsplit part
        values[N] = math.inf
        _, parts = optimal_partition_value(N, values)
        found.append(TrialState([g for k in parts for g in best_small[k].groups],
                                 "separated " + "+".join(map(str, parts))))
    memo[key] = found
    return found


def minimize_hartree(N: int, nu: float, config: SolverConfig | None = None):
    """Best Hartree-product upper estimate of ``E^(N)_nu(1)``.

    Returns
    -------
    (EnergyEstimate, list of orbitals)
        Orbitals of the winning trial state (for separated states, the
        orbitals of all sub-clusters).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    config = config or SolverConfig()
    if N == 1:
        est, psi = minimize_pekar(1.0, config)
        return replace(est, nu=float(nu)), [psi]
    cands = hartree_candidates(N, nu, config)
    energies = [c.energy(1.0, nu) for c in cands]
    best = int(np.argmin(energies))
    grid = config.grid()
    est = EnergyEstimate(energies[best], UPPER, N, float(nu), 1.0,
                         note=f"Hartree product, {cands[best].label}",
                         grid_hash=grid.hash())
    return est, cands[best].orbitals()


def hartree_sweep(N: int, nus, config: SolverConfig | None = None) -> list:
    """Hartree estimates over several ``nu`` values.

    Every candidate state found at any ``nu`` is re-evaluated at every other
    ``nu`` (the energy of a fixed state is affine in ``nu``) and the lowest
    value is kept, so the returned curve is the lower envelope of affine
    functions and therefore concave.
    """
    config = config or SolverConfig()
    memo: dict = {}
    pool = []
    for nu in nus:
        pool.extend(hartree_candidates(N, nu, config, memo))
    grid_hash = config.grid().hash()
    out = []
    for nu in nus:
        energies = [s.energy(1.0, nu) for s in pool]
        i = int(np.argmin(energies))
        out.append(EnergyEstimate(energies[i], UPPER, N, float(nu), 1.0,
                                  note=f"Hartree envelope, {pool[i].label}", grid_hash=grid_hash))
    return out


# --------------------------------------------------------------------------
# providers and derived quantities
# --------------------------------------------------------------------------

Provider = Callable[[int, float], EnergyEstimate]


class HartreeProvider:
    """Caching provider of ``E^(N)_nu(1)`` upper estimates keyed by ``(N, nu, grid)``."""

    def __init__(self, config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self._cache: dict = {}
        self._memo: dict = {}

    def __call__(self, N: int, nu: float) -> EnergyEstimate:
        key = (int(N), float(nu), self.config.grid().hash())
        if key not in self._cache:
            if N == 1:
                est, _ = minimize_pekar(1.0, self.config)
                est = replace(est, nu=float(nu))
            else:
                cands = hartree_candidates(N, nu, self.config, self._memo)
                energies = [c.energy(1.0, nu) for c in cands]
                i = int(np.argmin(energies))
                est = EnergyEstimate(energies[i], UPPER, int(N), float(nu), 1.0,
                                     note=f"Hartree product, {cands[i].label}",
                                     grid_hash=key[2])
            self._cache[key] = est
        return self._cache[key]


def pt_energy_scaled(nu: float, alpha: float, N: int, provider: Provider) -> EnergyEstimate:
    """``E^(N)_{nu alpha}(alpha) = alpha^2 E^(N)_nu(1)``."""
    try:
        base = provider(N, nu)
    except Exception as exc:
        raise ProviderFailure(str(exc)) from exc
    return replace(base, value=alpha**2 * base.value, alpha=float(alpha))


@dataclass(frozen=True)
class BindingReport:
    N: int
    k: int
    nu: float
    E_N: EnergyEstimate
    E_N_minus_k: EnergyEstimate
    E_k: EnergyEstimate
    margin: float
    binds: bool
    comparable: bool
    caveat: str = ("upper estimates can suggest binding but cannot certify it; "
                   "margin = E(N-k) + E(k) - E(N)")

    def to_record(self) -> dict:
        return {"N": self.N, "k": self.k, "nu": self.nu, "E_N": self.E_N.value,
                "E_N_minus_k": self.E_N_minus_k.value, "E_k": self.E_k.value,
                "margin": self.margin, "binds": self.binds,
                "comparable": self.comparable, "caveat": self.caveat}


def binding_check(N: int, nu: float, k: int, provider: Provider, tol: float = 1e-8) -> BindingReport:
    """Compare ``E^(N)`` with ``E^(N-k) + E^(k)`` (the binding inequality)."""
    if not (1 <= k < N):
        raise InvalidK(f"need 1 <= k < N, got k={k}, N={N}")
    try:
        eN, eNk, ek = provider(N, nu), provider(N - k, nu), provider(k, nu)
    except Exception as exc:
        raise ProviderFailure(str(exc)) from exc
    margin = eNk.value + ek.value - eN.value
    comparable = (all(e.kind == UPPER for e in (eN, eNk, ek))
                  and len({e.grid_hash for e in (eN, eNk, ek)}) == 1)
    return BindingReport(N, k, float(nu), eN, eNk, ek, margin, margin > tol, comparable)
