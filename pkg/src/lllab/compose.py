"""Seeded (oblivious) resampling oracles and composition over stable sets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, permutations, product
from typing import Callable, Sequence

from .matrix import ONE, ZERO, SparseMatrix
from .oracle import DependencyRelation, Flaw, OracleSystem, check_dependency_soundness
from .space import Distribution, StateSpace
from .wdag import PropertyViolation


@dataclass(frozen=True, eq=False)
class SeededFlaw:
    """A flaw whose oracle applies a deterministic action to a random seed."""

    id: int
    support: frozenset
    seeds: tuple  # ((seed, probability), ...)
    action: Callable  # (state, seed) -> state
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "support", frozenset(self.support))
        object.__setattr__(self, "seeds", tuple((r, Fraction(p)) for r, p in self.seeds))
        if not self.name:
            object.__setattr__(self, "name", f"f{self.id}")
        total = sum((p for _, p in self.seeds), ZERO)
        if total != 1 or any(p < 0 for _, p in self.seeds):
            raise ValueError(f"{self.name}: seed probabilities must be non-negative and sum to 1")

    def apply(self, state: int, seed) -> int:
        return self.action(state, seed)

    def induced_matrix(self, n: int) -> SparseMatrix:
        rows = [dict() for _ in range(n)]
        for s in self.support:
            row = rows[s]
            for r, p in self.seeds:
                if p:
                    t = self.action(s, r)
                    row[t] = row.get(t, ZERO) + p
        return SparseMatrix(n, rows)


class SeededSystem:
    """Pre-flaws with seeded oracles and a symmetric relation (self-loops optional)."""

    def __init__(self, space: StateSpace, mu: Distribution, flaws: Sequence[SeededFlaw], dep: DependencyRelation):
        for i, f in enumerate(flaws):
            if f.id != i:
                raise ValueError("seeded flaw ids must be 0..m-1 in order")
        self.space = space
        self.mu = mu
        self.flaws = tuple(flaws)
        self.dep = dep
        self._matrices = {}

    @property
    def n_states(self) -> int:
        return self.space.size

    def matrix(self, f: int) -> SparseMatrix:
        got = self._matrices.get(f)
        if got is None:
            got = self._matrices[f] = self.flaws[f].induced_matrix(self.n_states)
        return got

    def unrelated(self, f: int, g: int) -> bool:
        return f != g and not self.dep.related(f, g)

    def is_stable(self, flaws: Sequence[int]) -> bool:
        items = list(flaws)
        if len(set(items)) != len(items):
            return False
        return all(self.unrelated(f, g) for f, g in combinations(items, 2))

    def oracle_system(self) -> OracleSystem:
        """The matrices as a search-ready system (relation made reflexive)."""
        flaws = [
            Flaw(f.id, f.support, self.matrix(f.id), f.name) for f in self.flaws
        ]
        dep = DependencyRelation(self.dep.n, self.dep.pairs(), reflexive=True)
        return OracleSystem(self.space, self.mu, flaws, dep)


def check_oblivious(ss: SeededSystem) -> list:
    """(f, g, r) where seed r sends part, but not all, of f ∩ g into g."""
    bad = []
    for f in ss.flaws:
        for g in ss.flaws:
            if not ss.unrelated(f.id, g.id):
                continue
            common = sorted(f.support & g.support)
            if len(common) < 2:
                continue
            for r, _ in f.seeds:
                stays = {f.apply(s, r) in g.support for s in common}
                if len(stays) > 1:
                    bad.append((f.id, g.id, r))
    return bad


@dataclass(frozen=True)
class ConditionedSeeds:
    seeds: tuple  # renormalized ((seed, prob), ...)
    mass: Fraction  # probability of the filter under R_f


def conditioned_seed_space(ss: SeededSystem, f: int, conditions: Sequence[int]) -> ConditionedSeeds:
    """Seeds of f that keep states of f ∩ g inside g for every condition g."""
    fl = ss.flaws[f]
    keep = list(fl.seeds)
    for g in conditions:
        if not ss.unrelated(f, g):
            raise ValueError(f"condition {ss.flaws[g].name} is related to {fl.name}")
        common = fl.support & ss.flaws[g].support
        if not common:
            raise ValueError(f"{fl.name} and {ss.flaws[g].name} are disjoint; condition undefined")
        probe = min(common)
        keep = [(r, p) for r, p in keep if fl.apply(probe, r) in ss.flaws[g].support]
    mass = sum((p for _, p in keep), ZERO)
    if mass == 0:
        raise ValueError(f"conditioning {fl.name} on {list(conditions)} leaves no seeds")
    return ConditionedSeeds(tuple((r, p / mass) for r, p in keep if p), mass)


@dataclass(frozen=True, eq=False)
class ComposedFlaw:
    enumeration: tuple
    support: frozenset
    seeds: tuple  # ((tuple of seeds, prob), ...)
    matrix: SparseMatrix
    constant: Fraction

    @property
    def members(self) -> frozenset:
        return frozenset(self.enumeration)


def _sequential_action(ss: SeededSystem, enumeration: tuple):
    flaws = [ss.flaws[f] for f in enumeration]

    def act(state, seeds):
        for fl, r in zip(flaws, seeds):
            state = fl.apply(state, r)
        return state

    return act


def compose_flaw(ss: SeededSystem, enumeration: Sequence[int], check: bool = True) -> ComposedFlaw:
    """Flaw on the intersection of a stable pre-flaw set.

    Seed i is drawn from f_i's seeds conditioned on staying inside
    f_{i+1}, ..., f_t; the seeds act in order r_1 first. With `check`, the
    matrix is compared to c·A_{f_1}⋯A_{f_t}, c the product of the inverse
    filter probabilities.
    """
    enumeration = tuple(enumeration)
    if not enumeration:
        raise ValueError("cannot compose an empty set")
    if not ss.is_stable(enumeration):
        raise ValueError(f"pre-flaws {enumeration} are not stable")
    support = frozenset.intersection(*(ss.flaws[f].support for f in enumeration))
    if not support:
        raise ValueError(f"pre-flaws {enumeration} have empty intersection")
    spaces = []
    constant = ONE
    for i, f in enumerate(enumeration):
        cond = conditioned_seed_space(ss, f, enumeration[i + 1:])
        spaces.append(cond.seeds)
        constant /= cond.mass
    seeds = []
    for combo in product(*spaces):
        p = ONE
        for _, q in combo:
            p *= q
        seeds.append((tuple(r for r, _ in combo), p))
    act = _sequential_action(ss, enumeration)
    n = ss.n_states
    rows = [dict() for _ in range(n)]
    for s in support:
        row = rows[s]
        for rs, p in seeds:
            t = act(s, rs)
            row[t] = row.get(t, ZERO) + p
    matrix = SparseMatrix(n, rows)
    if check:
        prod = SparseMatrix.identity(n)
        for f in enumeration:
            prod = prod @ ss.matrix(f)
        if prod.scale(constant) != matrix:
            raise PropertyViolation(f"composed matrix of {enumeration} is not c·∏A_f with c={constant}")
    return ComposedFlaw(enumeration, support, tuple(seeds), matrix, constant)


def enumeration_differences(ss: SeededSystem, members: Sequence[int], check: bool = True) -> list:
    """Enumerations of a stable set whose composed matrix differs from the
    one built in sorted order. Empty when the pre-flaws commute."""
    members = tuple(sorted(members))
    ref = compose_flaw(ss, members, check=check).matrix
    return [
        order
        for order in permutations(members)
        if order != members and compose_flaw(ss, order, check=check).matrix != ref
    ]


def composed_relation(ss: SeededSystem, sets: Sequence[frozenset]) -> DependencyRelation:
    pairs = []
    for i, j in combinations(range(len(sets)), 2):
        a, b = sets[i], sets[j]
        if a == b or any(ss.dep.related(x, y) for x in a for y in b):
            pairs.append((i, j))
    return DependencyRelation(len(sets), pairs, reflexive=True)


def composed_name(ss: SeededSystem, enumeration: Sequence[int]) -> str:
    return "<" + ",".join(ss.flaws[f].name for f in enumeration) + ">"


@dataclass
class ComposedSystem:
    system: OracleSystem
    parts: list  # ComposedFlaw per flaw id
    seeded: SeededSystem  # composed flaws in seeded form, with the composed relation


def composed_system(ss: SeededSystem, stable_sets: Sequence[Sequence[int]], check: bool = True) -> ComposedSystem:
    parts = [compose_flaw(ss, tuple(E), check=check) for E in stable_sets]
    members = [p.members for p in parts]
    dep = composed_relation(ss, members)
    flaws = [
        Flaw(i, p.support, p.matrix, composed_name(ss, p.enumeration)) for i, p in enumerate(parts)
    ]
    system = OracleSystem(
        ss.space,
        ss.mu,
        flaws,
        dep,
        declared={"provenance": [list(p.enumeration) for p in parts]},
    )
    bad = check_dependency_soundness(system)
    if bad:
        raise PropertyViolation(f"composed system is not dependency-sound: {bad[:3]}")
    seeded_flaws = [
        SeededFlaw(i, p.support, p.seeds, _sequential_action(ss, p.enumeration), flaws[i].name)
        for i, p in enumerate(parts)
    ]
    return ComposedSystem(system, parts, SeededSystem(ss.space, ss.mu, seeded_flaws, dep))
