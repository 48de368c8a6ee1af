"""Lower-bound certificates for the multi-polaron ground-state energy.

The certificate chains four ingredients:

1. localization of every electron to a cube of side ``R`` (kinetic penalty
   ``3 N pi^2 / R^2``);
2. splitting the electrons into clusters and bounding the interaction between
   clusters (zero in the strong regime, ``alpha N^2 / d`` otherwise);
3. the per-cluster bound ``F(N_i)`` built from the cut-off ``K``, the block
   size ``P`` and the coherent-state slack ``delta``;
4. a minimum over all integer partitions of ``N``.

Parameters follow two power-law schedules in ``alpha`` (strong regime
``nu > 2`` and general ``nu >= 0``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

SQRT3 = math.sqrt(3.0)


class BoundError(ValueError):
    pass


class NonpositiveR(BoundError):
    pass


class NuNotAboveTwo(BoundError):
    pass


class AlphaTooSmall(BoundError):
    pass


class HypothesisViolated(BoundError):
    pass


class OrderingViolated(BoundError):
    pass


# --------------------------------------------------------------------------
# elementary pieces
# --------------------------------------------------------------------------

def ims_penalty(N: int, R: float) -> float:
    """Kinetic cost ``3 N pi^2 / R^2`` of confining N electrons to cubes of side R."""
    if not R > 0:
        raise NonpositiveR(f"R must be positive, got {R}")
    return 3.0 * N * math.pi**2 / R**2


def zero_correction_threshold(nu: float, R: float) -> float:
    """Smallest cluster separation ``4 sqrt(3) R / (nu - 2)`` at which the
    inter-cluster terms vanish."""
    if not nu > 2:
        raise NuNotAboveTwo(f"needs nu > 2, got {nu}")
    if not R > 0:
        raise NonpositiveR(f"R must be positive, got {R}")
    return 4.0 * SQRT3 * R / (nu - 2.0)


def intercluster_pair_term(gap: float, alpha: float, nu: float, R: float) -> float:
    """``alpha / g - nu alpha / (2 g + 4 sqrt(3) R)`` for one ordered pair of boxes at distance g."""
    return alpha / gap - nu * alpha / (2.0 * gap + 4.0 * SQRT3 * R)


@dataclass(frozen=True)
class InterclusterCorrection:
    exact: float    # sum over ordered pairs in different clusters
    crude: float    # alpha N^2 / d
    pairs: int


def intercluster_correction(partition, config, alpha: float, nu: float,
                            R: float | None = None) -> InterclusterCorrection:
    """Energy subtracted for the interaction between different clusters.

    ``exact`` sums ``intercluster_pair_term`` over ordered pairs ``(i, j)``
    lying in different clusters; ``crude`` is the bound ``alpha N^2 / d``.
    """
    from .clusters import box_distance

    R = config.side if R is None else R
    label = {}
    for g, members in enumerate(partition.groups):
        for i in members:
            label[i] = g
    exact = 0.0
    pairs = 0
    n = config.N
    for i in range(n):
        for j in range(n):
            if i != j and label[i] != label[j]:
                exact += intercluster_pair_term(box_distance(i, j, config), alpha, nu, R)
                pairs += 1
    return InterclusterCorrection(exact, alpha * n**2 / partition.threshold, pairs)


def concavity_adjust(E_nu: float, E_zero: float, nu: float, nu_tilde: float) -> float:
    """Chord lower bound ``E_{nu~} >= (1 - nu~/nu) E_0 + (nu~/nu) E_nu``.

    Valid because ``nu -> E_nu`` is concave.
    """
    if nu_tilde < 0:
        raise OrderingViolated(f"nu_tilde must be nonnegative, got {nu_tilde}")
    if nu_tilde > nu:
        raise OrderingViolated(f"nu_tilde={nu_tilde} exceeds nu={nu}")
    if nu == 0:
        return E_zero
    t = nu_tilde / nu
    return (1.0 - t) * E_zero + t * E_nu


# --------------------------------------------------------------------------
# partitions
# --------------------------------------------------------------------------

def optimal_partition_value(N: int, per_size_value) -> tuple[float, tuple[int, ...]]:
    """Minimize ``sum_i v(N_i)`` over integer partitions of ``N``.

    ``g(n) = min_k v(k) + g(n - k)``; on ties the smallest first part wins.
    ``per_size_value`` is a mapping or a callable on ``1..N``.
    """
    v = per_size_value.__getitem__ if isinstance(per_size_value, Mapping) else per_size_value
    vals = [None] + [float(v(k)) for k in range(1, N + 1)]
    g = [0.0] * (N + 1)
    choice = [0] * (N + 1)
    for n in range(1, N + 1):
        best, arg = math.inf, 0
        for k in range(1, n + 1):
            cand = vals[k] + g[n - k]
            if cand < best - 1e-12 * max(1.0, abs(best)) or arg == 0:
                best, arg = cand, k
        g[n], choice[n] = best, arg
    parts = []
    n = N
    while n > 0:
        parts.append(choice[n])
        n -= choice[n]
    return g[N], tuple(parts)


# --------------------------------------------------------------------------
# parameters and schedules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundParameters:
    """Cut-off parameters per cluster size.

    ``K``, ``P`` and ``delta`` map a cluster size ``N_i`` to the value used for
    clusters of that size.
    """
    alpha: float
    nu: float
    R: float
    d: float
    K: Mapping[int, float]
    P: Mapping[int, float]
    delta: Mapping[int, float]
    constants: tuple = ()
    regime: str = "custom"
    N: int = 0
    flags: Mapping[str, bool] = field(default_factory=dict)
    epsilon: float | None = None

    def nu_tilde(self, size: int) -> float:
        return self.nu * (1.0 - 2.0 * self.delta[size])

    def hypotheses(self, size: int) -> dict:
        return {
            "2delta<1": 2.0 * self.delta[size] < 1.0,
            "8alphaN<piK": 8.0 * self.alpha * size < math.pi * self.K[size],
        }

    def valid(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        sizes = sorted(self.K)
        return {
            "regime": self.regime, "alpha": self.alpha, "nu": self.nu, "N": self.N,
            "R": self.R, "d": self.d, "constants": list(self.constants),
            "epsilon": self.epsilon,
            "per_size": {str(k): {"K": self.K[k], "P": self.P[k], "delta": self.delta[k],
                                  "nu_tilde": self.nu_tilde(k)} for k in sizes},
            "flags": dict(sorted(self.flags.items())),
        }


def _check_constants(c, count):
    c = tuple(float(x) for x in c)
    if len(c) < count:
        raise ValueError(f"need {count} constants, got {len(c)}")
    if any(not x > 0 for x in c):
        raise ValueError("constants must be positive")
    return c


def schedule_strong(nu: float, alpha: float, N: int, constants=(1.0, 1.0, 1.0, 1.0),
                    epsilon: float | None = None, strict: bool = True) -> BoundParameters:
    """Parameters for ``nu > 2``: errors of order ``alpha^{9/5} N^{9/5}``.

    ``K_i = c1 N_i^{1/5} alpha^{6/5}``, ``R = c2 alpha^{-9/10} N^{-2/5}``,
    ``P_i = c3 alpha^{3/5} N_i^{-2/5}``, ``delta_i = c4 alpha^{-1/5} N_i^{4/5}``
    and ``d = 4 sqrt(3) R / (nu - 2)``.

    Admissibility requires
    ``alpha > N^4 max{(2 nu c4/(nu-2))^5, (8/(pi c1))^5}``; if ``epsilon`` is
    given, also ``alpha > epsilon N^4``.
    """
    if not nu > 2:
        raise NuNotAboveTwo(f"the strong regime needs nu > 2, got {nu}")
    c1, c2, c3, c4 = _check_constants(constants, 4)[:4]
    R = c2 * alpha ** (-0.9) * N ** (-0.4)
    d = zero_correction_threshold(nu, R)
    sizes = range(1, N + 1)
    K = {k: c1 * k**0.2 * alpha**1.2 for k in sizes}
    P = {k: c3 * alpha**0.6 * k ** (-0.4) for k in sizes}
    delta = {k: c4 * alpha ** (-0.2) * k**0.8 for k in sizes}
    lhs = {"(2 nu c4/(nu-2))^5": (2.0 * nu * c4 / (nu - 2.0)) ** 5,
           "(8/(pi c1))^5": (8.0 / (math.pi * c1)) ** 5}
    eps_needed = max(lhs.values())
    flags = {"admissible": alpha > N**4 * eps_needed}
    if epsilon is not None:
        flags["alpha>eps N^4"] = alpha > epsilon * N**4
    params = BoundParameters(alpha, nu, R, d, K, P, delta, (c1, c2, c3, c4), "strong", N,
                             flags, eps_needed if epsilon is None else epsilon)
    for k in sizes:
        for name, ok in params.hypotheses(k).items():
            flags[f"{name}[{k}]"] = ok
    flags["nu_tilde>2"] = all(params.nu_tilde(k) > 2 for k in sizes)
    if strict and not flags["admissible"]:
        worst = max(lhs, key=lhs.get)
        raise AlphaTooSmall(
            f"alpha={alpha:g} <= N^4 * max{{(2 nu c4/(nu-2))^5, (8/(pi c1))^5}} = "
            f"{N**4:g} * {eps_needed:.6g} = {N**4 * eps_needed:.6g} (dominant term {worst})")
    if strict and epsilon is not None and not flags["alpha>eps N^4"]:
        raise AlphaTooSmall(f"alpha={alpha:g} <= epsilon N^4 = {epsilon * N**4:.6g}")
    return params


def schedule_general(nu: float, alpha: float, N: int, constants=(1.0, 1.0, 1.0, 1.0, 1.0),
                     strict: bool = True) -> BoundParameters:
    """Parameters for any ``nu >= 0``: errors of order ``alpha^{42/23} N^3``.

    ``K_i = c1 N_i alpha^{27/23}``, ``R = c2 alpha^{-19/23} / N``, ``d = c5 R``,
    ``P_i = c3 alpha^{13/23}``, ``delta_i = c4 alpha^{-4/23}``; admissible when
    ``alpha > max{(2 c4)^{23/4}, (8/(pi c1))^{23/4}}``.
    """
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    c1, c2, c3, c4, c5 = _check_constants(constants, 5)[:5]
    R = c2 * alpha ** (-19 / 23) / N
    d = c5 * R
    sizes = range(1, N + 1)
    K = {k: c1 * k * alpha ** (27 / 23) for k in sizes}
    P = {k: c3 * alpha ** (13 / 23) for k in sizes}
    delta = {k: c4 * alpha ** (-4 / 23) for k in sizes}
    lhs = {"(2 c4)^(23/4)": (2.0 * c4) ** (23 / 4), "(8/(pi c1))^(23/4)": (8.0 / (math.pi * c1)) ** (23 / 4)}
    threshold = max(lhs.values())
    flags = {"admissible": alpha > threshold}
    params = BoundParameters(alpha, nu, R, d, K, P, delta, (c1, c2, c3, c4, c5), "general", N,
                             flags, threshold)
    for k in sizes:
        for name, ok in params.hypotheses(k).items():
            flags[f"{name}[{k}]"] = ok
    if strict and not flags["admissible"]:
        worst = max(lhs, key=lhs.get)
        raise AlphaTooSmall(
            f"alpha={alpha:g} <= max{{(2 c4)^(23/4), (8/(pi c1))^(23/4)}} = {threshold:.6g} "
            f"(dominant term {worst})")
    return params


# --------------------------------------------------------------------------
# per-cluster bound
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterBound:
    size: int
    pt_value: float            # E^(N_i)_{nu~}(1) fed in
    cutoff_denominator: float  # (1 - 2 delta)^2 (1 - 8 alpha N_i / (pi K))
    pt_term: float
    locality_term: float       # 9 alpha (R+d)^2 N_i^4 P^2 K / (pi delta), subtracted
    mode_count_term: float     # (2K/P + 1)^3, subtracted
    half_constant: float = 0.5

    @property
    def value(self) -> float:
        return self.pt_term - self.locality_term - self.mode_count_term - self.half_constant


def _value_of(est) -> float:
    return float(getattr(est, "value", est))


def cluster_bound_F(N_i: int, params: BoundParameters, pt_provider) -> ClusterBound:
    """Lower bound ``F(N_i)`` on the energy of one cluster of ``N_i`` electrons.

    ``pt_provider(N_i, nu_tilde)`` returns ``E^(N_i)_{nu_tilde}(1)`` (a number or
    an object with a ``value`` attribute).
    """
    alpha = params.alpha
    K, P, delta = params.K[N_i], params.P[N_i], params.delta[N_i]
    hyp = params.hypotheses(N_i)
    if not hyp["2delta<1"]:
        raise HypothesisViolated(f"2 delta = {2 * delta:.6g} >= 1 for cluster size {N_i}")
    if not hyp["8alphaN<piK"]:
        raise HypothesisViolated(
            f"8 alpha N_i = {8 * alpha * N_i:.6g} >= pi K = {math.pi * K:.6g} for cluster size {N_i}")
    E = _value_of(pt_provider(N_i, params.nu_tilde(N_i)))
    denom = (1.0 - 2.0 * delta) ** 2 * (1.0 - 8.0 * alpha * N_i / (math.pi * K))
    pt_term = alpha**2 * E / denom
    locality = 9.0 * alpha * (params.R + params.d) ** 2 * N_i**4 * P**2 * K / (math.pi * delta)
    modes = (2.0 * K / P + 1.0) ** 3
    return ClusterBound(N_i, E, denom, pt_term, locality, modes)


# --------------------------------------------------------------------------
# certificate
# --------------------------------------------------------------------------

TERM_ORDER = ("pt_term", "locality_term", "mode_count_term", "half_constant",
              "ims_penalty", "intercluster_term")

# alpha-exponent of each term when it is an exact monomial in alpha
_EXPONENTS = {
    "strong": {"locality_term": Fraction(9, 5), "ims_penalty": Fraction(9, 5)},
    "general": {"locality_term": Fraction(42, 23), "intercluster_term": Fraction(42, 23),
                "ims_penalty": Fraction(38, 23)},
}
LEADING_EXPONENT = {"strong": Fraction(9, 5), "general": Fraction(42, 23)}


@dataclass(frozen=True)
class BoundCertificate:
    regime: str
    N: int
    alpha: float
    nu: float
    params: BoundParameters
    terms: dict                 # signed contributions, summing to ``final``
    clusters: dict              # size -> ClusterBound
    per_size_value: dict        # size -> F(k) - 3 k pi^2 / R^2
    witness: tuple
    flags: dict
    provenance: list
    final: float

    @property
    def valid(self) -> bool:
        return all(self.flags.values())

    @property
    def label(self) -> str:
        rigorous = all(p["kind"] == "lower_certificate" for p in self.provenance)
        return "lower bound" if rigorous else "heuristic lower bound"

    def recompute(self) -> float:
        return math.fsum(self.terms[name] for name in TERM_ORDER)

    def term_exponents(self) -> dict:
        return {k: v for k, v in _EXPONENTS[self.regime].items() if k in self.terms}

    def pure_error_part(self) -> float:
        """Sum of the terms that are exact monomials of the regime's leading order in alpha."""
        lead = LEADING_EXPONENT[self.regime]
        return math.fsum(self.terms[k] for k, e in self.term_exponents().items() if e == lead)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "N": self.N,
            "alpha": self.alpha,
            "nu": self.nu,
            "label": self.label,
            "valid": self.valid,
            "final": self.final,
            "final_over_alpha2": self.final / self.alpha**2,
            "terms": {k: self.terms[k] for k in TERM_ORDER},
            "witness_partition": list(self.witness),
            "parameters": self.params.to_dict(),
            "cluster_bounds": {
                str(k): {"pt_value": cb.pt_value, "cutoff_denominator": cb.cutoff_denominator,
                         "pt_term": cb.pt_term, "locality_term": cb.locality_term,
                         "mode_count_term": cb.mode_count_term, "half_constant": cb.half_constant,
                         "F": cb.value, "F_minus_ims": self.per_size_value[k]}
                for k, cb in sorted(self.clusters.items())},
            "flags": dict(sorted(self.flags.items())),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _record(est, N, nu) -> dict:
    if hasattr(est, "to_record"):
        rec = est.to_record()
        rec["note"] = getattr(est, "note", "")
        return rec
    return {"N": N, "nu": nu, "alpha": 1.0, "kind": "unspecified", "value": float(est),
            "iterations": 0, "grid_hash": "", "note": "plain number"}


def theorem1_certificate(regime: str, nu: float, alpha: float, N: int, constants,
                         pt_provider: Callable, epsilon: float | None = None) -> BoundCertificate:
    """Assemble the lower bound on ``E^(N)_U(alpha)``, ``U = nu alpha``.

    ``pt_provider(k, nu)`` supplies ``E^(k)_nu(1)`` for ``k = 1..N``; values at
    the reduced repulsion ``nu_tilde`` are obtained from the chord between
    ``nu = 0`` and ``nu``.
    """
    if regime == "strong":
        params = schedule_strong(nu, alpha, N, constants, epsilon)
    elif regime == "general":
        params = schedule_general(nu, alpha, N, constants)
    else:
        raise ValueError(f"unknown regime {regime!r}")

    provenance = []
    seen = set()

    def fetch(k, nu_):
        try:
            est = pt_provider(k, nu_)
        except BoundError:
            raise
        except Exception as exc:
            from .pt_solver import ProviderFailure
            raise ProviderFailure(f"provider failed for N={k}, nu={nu_}: {exc}") from exc
        if (k, nu_) not in seen:
            seen.add((k, nu_))
            provenance.append(_record(est, k, nu_))
        return _value_of(est)

    def adjusted(k, nu_tilde):
        if k == 1:
            return fetch(1, nu)
        return concavity_adjust(fetch(k, nu), fetch(k, 0.0), nu, nu_tilde)

    clusters = {}
    per_size = {}
    for k in range(1, N + 1):
        clusters[k] = cluster_bound_F(k, params, adjusted)
        per_size[k] = clusters[k].value - ims_penalty(k, params.R)
    dp_value, witness = optimal_partition_value(N, per_size)

    inter = alpha * N**2 / params.d if regime == "general" else 0.0
    terms = {
        "pt_term": math.fsum(clusters[k].pt_term for k in witness),
        "locality_term": -math.fsum(clusters[k].locality_term for k in witness),
        "mode_count_term": -math.fsum(clusters[k].mode_count_term for k in witness),
        "half_constant": -0.5 * len(witness),
        "ims_penalty": -ims_penalty(N, params.R),
        "intercluster_term": -inter,
    }
    final = math.fsum(terms[name] for name in TERM_ORDER)
    if not math.isclose(final, dp_value - inter, rel_tol=1e-9, abs_tol=1e-9):
        raise AssertionError("term breakdown disagrees with the partition minimum")
    flags = dict(params.flags)
    if regime == "strong":
        flags["d>=4sqrt3R/(nu-2)"] = params.d >= zero_correction_threshold(nu, params.R) * (1 - 1e-15)
    return BoundCertificate(regime, N, float(alpha), float(nu), params, terms, clusters, per_size,
                            witness, flags, provenance, final)


def expanded_strong_bound(nu: float, alpha: float, N: int, constants, E_nu_tilde: float) -> float:
    """Closed-form expansion of the strong-regime bound, kept as a cross-check.

    This is the published expansion with its ``2 pi^2 / c2^2`` localization
    coefficient and its ``d = sqrt(3) R / (nu - 2)`` geometry; it is not what
    :func:`theorem1_certificate` evaluates.
    """
    c1, c2, c3, c4 = _check_constants(constants, 4)[:4]
    a15 = alpha ** 0.2
    lead = alpha**2 * E_nu_tilde / ((1 - 2 * c4 * N**0.8 / a15) ** 2 * (1 - 8 * N**0.8 / (c1 * math.pi * a15)))
    a95 = alpha**1.8 * N**1.8
    loc = a95 * 9 * (nu + SQRT3 - 2) ** 2 * c1 * c2**2 * c3**2 / (math.pi * c4 * (nu - 2) ** 2)
    modes = (alpha**0.6 * N**0.6 * 2 * c1 / c3 + 1) ** 3
    ims = a95 * 2 * math.pi**2 / c2**2
    tail = N * (1.5 + 6 * alpha**0.6 * c1 / c3)
    return lead - loc - modes - ims - tail


def search_constants(regime: str, nu: float, alpha: float, N: int, pt_provider,
                     grid=(0.25, 0.5, 1.0, 2.0, 4.0)) -> BoundCertificate | None:
    """Best valid certificate over a product grid of constants (None if none is admissible)."""
    import itertools

    count = 4 if regime == "strong" else 5
    best = None
    for consts in itertools.product(grid, repeat=count):
        try:
            cert = theorem1_certificate(regime, nu, alpha, N, consts, pt_provider)
        except (AlphaTooSmall, HypothesisViolated):
            continue
        if cert.valid and (best is None or cert.final > best.final):
            best = cert
    return best
