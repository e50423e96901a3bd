"""Flaws, resampling matrices, the dependency relation and structural checks."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

from .matrix import ONE, ZERO, SparseMatrix
from .space import Distribution, Event, StateSpace


class UnboundedChargeError(ValueError):
    """A resampling matrix sends positive mass into a state of measure zero."""


@dataclass(frozen=True, eq=False)
class Flaw:
    id: int
    support: frozenset
    matrix: SparseMatrix
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "support", frozenset(self.support))
        if not self.name:
            object.__setattr__(self, "name", f"f{self.id}")
        validate_flaw_matrix(self.support, self.matrix, self.name)

    def __contains__(self, state: int) -> bool:
        return state in self.support


def validate_flaw_matrix(support: frozenset, matrix: SparseMatrix, name: str = "flaw") -> None:
    for s, row in enumerate(matrix.rows):
        if any(x < 0 for x in row.values()):
            raise ValueError(f"{name}: row {s} has a negative entry")
        if s in support:
            total = sum(row.values(), ZERO)
            if total != 1:
                raise ValueError(f"{name}: row {s} sums to {total}, expected 1")
        elif row:
            raise ValueError(f"{name}: row {s} is nonzero but state {s} is outside the flaw")


class DependencyRelation:
    """Symmetric relation on flaw ids 0..n-1.

    `reflexive=True` adds f ~ f for every f, as the search framework requires.
    Pre-flaw relations used for composition may leave it off.
    """

    def __init__(self, n: int, pairs: Iterable[tuple] = (), reflexive: bool = True):
        self.n = n
        self.reflexive = reflexive
        nbrs = [set() for _ in range(n)]
        for f, g in pairs:
            if not (0 <= f < n and 0 <= g < n):
                raise IndexError(f"relation pair {(f, g)} outside 0..{n - 1}")
            nbrs[f].add(g)
            nbrs[g].add(f)
        if reflexive:
            for f in range(n):
                nbrs[f].add(f)
        self._closed = tuple(frozenset(s) for s in nbrs)

    @classmethod
    def complete(cls, n: int) -> "DependencyRelation":
        return cls(n, combinations(range(n), 2))

    @classmethod
    def equality(cls, n: int) -> "DependencyRelation":
        return cls(n)

    def related(self, f: int, g: int) -> bool:
        return g in self._closed[f]

    def closed_neighborhood(self, f: int) -> frozenset:
        """Γ̄(f): everything related to f (f itself when reflexive)."""
        return self._closed[f]

    def neighborhood(self, f: int) -> frozenset:
        """Γ(f) = Γ̄(f) minus f."""
        return self._closed[f] - {f}

    def is_stable(self, flaws: Iterable[int]) -> bool:
        items = list(flaws)
        if len(set(items)) != len(items):
            return False
        return not any(self.related(f, g) for f, g in combinations(items, 2))

    def pairs(self) -> list:
        return [(f, g) for f in range(self.n) for g in sorted(self._closed[f]) if f < g]

    def __eq__(self, other):
        if not isinstance(other, DependencyRelation):
            return NotImplemented
        return self.n == other.n and self._closed == other._closed

    def __repr__(self):
        return f"DependencyRelation(n={self.n}, pairs={self.pairs()})"


class OracleSystem:
    """A state space with measure, flaws and a dependency relation.

    Treated as immutable once built; derived quantities are cached.
    """

    def __init__(
        self,
        space: StateSpace,
        mu: Distribution,
        flaws: Sequence[Flaw],
        dep: DependencyRelation,
        declared: dict | None = None,
    ):
        if len(mu) != space.size:
            raise ValueError("distribution size does not match the state space")
        for i, f in enumerate(flaws):
            if f.id != i:
                raise ValueError(f"flaw ids must be 0..m-1 in order; position {i} has id {f.id}")
            if f.matrix.n != space.size:
                raise ValueError(f"{f.name}: matrix size {f.matrix.n} != |Ω| = {space.size}")
        if dep.n != len(flaws):
            raise ValueError("dependency relation size does not match the flaw count")
        self.space = space
        self.mu = mu
        self.flaws = tuple(flaws)
        self.dep = dep
        self.declared = dict(declared or {})
        self._holding = None
        self._charges = None
        self.cache: dict = {}

    @property
    def n_states(self) -> int:
        return self.space.size

    @property
    def n_flaws(self) -> int:
        return len(self.flaws)

    def matrix(self, f: int) -> SparseMatrix:
        return self.flaws[f].matrix

    def holding(self, state: int) -> tuple:
        """Sorted ids of the flaws that hold on `state`."""
        if self._holding is None:
            table = [[] for _ in range(self.n_states)]
            for fl in self.flaws:
                for s in fl.support:
                    table[s].append(fl.id)
            self._holding = tuple(tuple(sorted(t)) for t in table)
        return self._holding[state]

    def mu_vector(self) -> dict:
        return {i: w for i, w in enumerate(self.mu.weights) if w}

    def event(self, members: Iterable[int]) -> Event:
        return Event.of(members, self.n_states)

    def measure_of(self, states: Iterable[int]) -> Fraction:
        w = self.mu.weights
        return sum((w[s] for s in states), ZERO)

    def charges(self) -> tuple:
        if self._charges is None:
            self._charges = tuple(charge(self, f) for f in range(self.n_flaws))
        return self._charges

    def with_relation(self, dep: DependencyRelation) -> "OracleSystem":
        return OracleSystem(self.space, self.mu, self.flaws, dep, self.declared)


def check_dependency_soundness(sys: OracleSystem) -> list:
    """(f, g, σ, σ') for every f ≁ g, σ ∈ f∖g whose row reaches σ' ∈ g."""
    violations = []
    for f in sys.flaws:
        for g in sys.flaws:
            if f.id == g.id or sys.dep.related(f.id, g.id):
                continue
            for s in sorted(f.support - g.support):
                for t in sorted(f.matrix.rows[s]):
                    if t in g.support:
                        violations.append((f.id, g.id, s, t))
    return violations


def commutes(a: SparseMatrix, b: SparseMatrix) -> bool:
    return a @ b == b @ a


def check_t_commutative(sys: OracleSystem) -> list:
    """Unrelated pairs (f, g), f < g, whose matrices fail to commute."""
    bad = []
    for f, g in combinations(range(sys.n_flaws), 2):
        if sys.dep.related(f, g):
            continue
        if not commutes(sys.matrix(f), sys.matrix(g)):
            bad.append((f, g))
    return bad


def minimal_dependency(sys: OracleSystem) -> DependencyRelation:
    pairs = [
        (f, g)
        for f, g in combinations(range(sys.n_flaws), 2)
        if not commutes(sys.matrix(f), sys.matrix(g))
    ]
    return DependencyRelation(sys.n_flaws, pairs)


def incoming_mass(sys: OracleSystem, f: int) -> dict:
    """μ^T A_f as a sparse vector."""
    return sys.matrix(f).left(sys.mu_vector())


def charge(sys: OracleSystem, f: int) -> Fraction:
    """γ_f = max over targets τ of (μ^T A_f)[τ] / μ(τ)."""
    mass = incoming_mass(sys, f)
    best = ZERO
    for t, m in mass.items():
        w = sys.mu.weights[t]
        if w == 0:
            raise UnboundedChargeError(
                f"{sys.flaws[f].name} sends mass {m} to state {t} of measure zero"
            )
        best = max(best, m / w)
    return best


def distortion(sys: OracleSystem, f: int) -> Fraction:
    mu_f = sys.measure_of(sys.flaws[f].support)
    if mu_f == 0:
        raise ValueError(f"{sys.flaws[f].name} has measure zero; distortion undefined")
    return charge(sys, f) / mu_f


def is_regenerating(sys: OracleSystem, f: int) -> bool:
    mu_f = sys.measure_of(sys.flaws[f].support)
    target = {i: mu_f * w for i, w in enumerate(sys.mu.weights) if w and mu_f}
    return incoming_mass(sys, f) == target


def is_injective_flaw(sys: OracleSystem, f: int) -> bool:
    return all(len(col) <= 1 for col in sys.matrix(f).columns())


def is_injective(sys: OracleSystem) -> bool:
    return all(is_injective_flaw(sys, f) for f in range(sys.n_flaws))


@dataclass(frozen=True)
class LopsidedCheck:
    lhs: Fraction
    gamma: Fraction
    holds: bool


def check_lopsided_bound(sys: OracleSystem, f: int, others: Iterable[int]) -> LopsidedCheck:
    """Compare μ(f | no flaw of `others` holds) with γ_f."""
    others = sorted(set(others))
    clash = [g for g in others if g in sys.dep.neighborhood(f)]
    if clash:
        raise ValueError(f"conditioning flaws {clash} are related to {sys.flaws[f].name}")
    allowed = set(range(sys.n_states))
    for g in others:
        allowed -= sys.flaws[g].support
    denom = sys.measure_of(allowed)
    if denom == 0:
        raise ValueError("conditioning event has measure zero")
    lhs = sys.measure_of(allowed & sys.flaws[f].support) / denom
    gamma = charge(sys, f)
    return LopsidedCheck(lhs, gamma, lhs <= gamma)


def property_matrix(sys: OracleSystem) -> dict:
    """Exact verdicts for every structural property."""
    regen = [is_regenerating(sys, f) for f in range(sys.n_flaws)]
    return {
        "sound": not check_dependency_soundness(sys),
        "t_commutative": not check_t_commutative(sys),
        "regenerating": all(regen),
        "injective": is_injective(sys),
    }


def identity_on(support: Iterable[int], n: int) -> SparseMatrix:
    support = set(support)
    return SparseMatrix(n, ({i: ONE} if i in support else {} for i in range(n)))
