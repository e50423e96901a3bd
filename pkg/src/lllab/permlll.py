"""Closed forms for products of swap-oracle matrices on permutations.

Atoms are pairs (x, y) standing for the event πx = y; a set of atoms is
stable when no two share a coordinate. For stable sets I (resampled atoms)
and C (the target event E = ⟨C⟩) the bipartite graph G_{I,E} joins a
C-node to an I-node when they share a coordinate. Its components are paths
and cycles, and the active conditions of I are the I-nodes themselves plus
one condition per path whose two ends are C-nodes.

Two independent routes compute e_π^T A_I e_E: the closed form from the
active conditions, and explicit matrix products (exact rationals through
the atomic oracle system, or integer arrays using that n·A_f is 0/1).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import factorial
from typing import Iterable, Sequence

import numpy as np

from .compose import compose_flaw
from .criteria import PsiCalculator
from .distribution import BoundValue, orderable_bounds
from .instances import PermSpace, PermSystem, atomic_id, atomic_system, atoms_related
from .matrix import ONE, ZERO, vec_leq
from .wdag import PropertyViolation


def _atoms(pairs: Iterable) -> tuple:
    return tuple(sorted((int(x), int(y)) for x, y in pairs))


def is_stable(pairs: Sequence[tuple]) -> bool:
    return len(set(pairs)) == len(pairs) and all(not atoms_related(a, b) for a, b in combinations(pairs, 2))


def _require_stable(pairs: tuple, what: str) -> None:
    if not is_stable(pairs):
        raise ValueError(f"{what} = {list(pairs)} is not a stable set of atoms")


def stable_atom_sets(n: int, max_size: int) -> list:
    """All stable sets of atoms over [n] with at most max_size members,
    as sorted tuples ordered by size then lexicographically."""
    out = [()]
    frontier = [()]
    for _ in range(max_size):
        nxt = []
        for S in frontier:
            last = S[-1] if S else (-1, -1)
            used_y = {y for _, y in S}
            for x in range(last[0] + 1, n):
                for y in range(n):
                    if y not in used_y:
                        nxt.append(S + ((x, y),))
        out.extend(nxt)
        frontier = nxt
    return out


# active conditions ------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    nodes: tuple  # (side, atom) along the path, side 'C' or 'I'
    cycle: bool

    @property
    def c_path(self) -> bool:
        return not self.cycle and self.nodes[0][0] == "C" and self.nodes[-1][0] == "C"


@dataclass(frozen=True)
class ActiveConditions:
    I: tuple
    C: tuple
    conditions: frozenset
    components: tuple

    @property
    def a(self) -> int:
        return len(self.conditions)

    def c_paths(self) -> list:
        return [c for c in self.components if c.c_path]

    def satisfied_by(self, perm: Sequence[int]) -> bool:
        return all(perm[x] == y for x, y in self.conditions)


def _shared(a: tuple, b: tuple) -> str:
    return "x" if a[0] == b[0] else "y"


def path_condition(path: Sequence[tuple]) -> tuple:
    """Condition forced by a C-path given as its atoms in either direction.

    Read in the direction whose first edge shares an x-coordinate, the path
    is (x1,y1),(x1,y2),(x2,y2),...,(xk,yk) and the condition is (xk, y1).
    """
    if len(path) == 1:
        return tuple(path[0])
    if _shared(path[0], path[1]) == "x":
        return (path[-1][0], path[0][1])
    return (path[0][0], path[-1][1])


def active_conditions(I: Iterable, C: Iterable) -> ActiveConditions:
    I, C = _atoms(I), _atoms(C)
    _require_stable(I, "I")
    _require_stable(C, "C")
    nodes = [("C", c) for c in C] + [("I", i) for i in I]
    adj = {v: [] for v in nodes}
    for c in C:
        for i in I:
            if atoms_related(c, i):
                adj[("C", c)].append(("I", i))
                adj[("I", i)].append(("C", c))
    for v, nb in adj.items():
        if len(nb) > 2:
            raise PropertyViolation(f"node {v} has degree {len(nb)} in G_(I,E)")

    seen = set()
    components = []

    def walk(start):
        order = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [w for w in adj[cur] if w != prev and w not in seen]
            if not nxt:
                return order
            prev, cur = cur, nxt[0]
            seen.add(cur)
            order.append(cur)

    # paths first, entered from their smallest endpoint (C-nodes sort first)
    for v in sorted(nodes):
        if v not in seen and len(adj[v]) <= 1:
            components.append(Component(tuple(walk(v)), False))
    for v in sorted(nodes):
        if v not in seen:
            components.append(Component(tuple(walk(v)), True))

    conditions = set(I)
    for comp in components:
        if comp.c_path:
            conditions.add(path_condition([atom for _, atom in comp.nodes]))
    return ActiveConditions(I, C, frozenset(conditions), tuple(components))


def satisfies(perm: Sequence[int], I: Iterable, C: Iterable) -> bool:
    return active_conditions(I, C).satisfied_by(perm)


def closed_form_value(n: int, size_I: int, size_C: int, a: int) -> Fraction:
    """Value of a nonzero entry: (n-|C|)! / (n^|I| (n-a)!)."""
    if a > n:
        return ZERO
    return Fraction(factorial(n - size_C), n**size_I * factorial(n - a))


def closed_form_entry(perm: Sequence[int], I: Iterable, C: Iterable, n: int) -> Fraction:
    act = active_conditions(I, C)
    if not act.satisfied_by(perm):
        return ZERO
    return closed_form_value(n, len(act.I), len(act.C), act.a)


# exact rational route ---------------------------------------------------------------


@lru_cache(maxsize=8)
def atomic_matrices(n: int) -> tuple:
    ss = atomic_system(n)
    return ss.perm_space, tuple(ss.matrix(f) for f in range(n * n))


def event_vector(space: PermSpace, C: Iterable) -> dict:
    return {s: ONE for s in space.satisfying(_atoms(C))}


def product_vector(n: int, I: Iterable, C: Iterable) -> dict:
    """A_I e_E by explicit sparse rational products."""
    space, mats = atomic_matrices(n)
    vec = event_vector(space, C)
    for x, y in reversed(_atoms(I)):
        vec = mats[atomic_id(n, x, y)].apply(vec)
    return vec


def matrix_entry(perm: Sequence[int], I: Iterable, C: Iterable, n: int) -> Fraction:
    space, _ = atomic_matrices(n)
    return product_vector(n, I, C).get(space.index[tuple(perm)], ZERO)


def check_closed_form_exact(n: int, I: Iterable, C: Iterable) -> list:
    """Permutations where the closed form and the rational product differ."""
    space, _ = atomic_matrices(n)
    vec = product_vector(n, I, C)
    act = active_conditions(I, C)
    bad = []
    for s, perm in enumerate(space.perms):
        expected = closed_form_value(n, len(act.I), len(act.C), act.a) if act.satisfied_by(perm) else ZERO
        if vec.get(s, ZERO) != expected:
            bad.append((perm, vec.get(s, ZERO), expected))
    return bad


# integer sweep ------------------------------------------------------------------------


class SwapTables:
    """Index arrays for the swap oracle: swap[y, z, s] is the index of
    (y z)π_s, and holds[x, y, s] says π_s x = y."""

    def __init__(self, n: int):
        self.n = n
        self.space = PermSpace(n)
        P = np.array(self.space.perms, dtype=np.int64).reshape(len(self.space), n)
        self.perms = P
        weights = n ** np.arange(n - 1, -1, -1, dtype=np.int64)
        lookup = np.full(n**n, -1, dtype=np.int64)
        lookup[P @ weights] = np.arange(len(P))
        self.swap = np.empty((n, n, len(P)), dtype=np.int64)
        for y in range(n):
            for z in range(n):
                Q = np.where(P == y, z, np.where(P == z, y, P))
                self.swap[y, z] = lookup[Q @ weights]
        self.holds = np.stack([P[:, x][None, :] == np.arange(n)[:, None] for x in range(n)])

    def apply_scaled(self, atom: tuple, V: np.ndarray) -> np.ndarray:
        """(n·A_f) V for the atom f, V of shape (states, columns)."""
        x, y = atom
        out = V[self.swap[y, 0]].copy()
        for z in range(1, self.n):
            out += V[self.swap[y, z]]
        out[~self.holds[x, y]] = 0
        return out

    def satisfying_mask(self, conditions: Iterable) -> np.ndarray:
        mask = np.ones(len(self.perms), dtype=bool)
        for x, y in conditions:
            mask &= self.holds[x, y]
        return mask


@dataclass
class SweepResult:
    n: int
    sets_I: int
    sets_C: int
    entries: int
    mismatches: list  # (I, C, perm index, product, closed form), scaled by n^|I|

    @property
    def ok(self) -> bool:
        return not self.mismatches


def closed_form_sweep(n: int, max_I: int = 3, max_C: int = 3, keep: int = 20) -> SweepResult:
    """Compare n^|I|·e_π^T A_I e_E against the closed form for every stable
    I, every stable C and every π, in integers."""
    tab = SwapTables(n)
    Is = stable_atom_sets(n, max_I)
    Cs = stable_atom_sets(n, max_C)
    X = np.stack([tab.satisfying_mask(c) for c in Cs], axis=1).astype(np.int64)
    products = {(): X}
    numer = [factorial(n - len(c)) for c in Cs]
    masks = {}
    mismatches = []
    for I in Is:
        if I:
            products[I] = tab.apply_scaled(I[0], products[I[1:]])
        M = products[I]
        for j, c in enumerate(Cs):
            act = active_conditions(I, c)
            key = act.conditions
            mask = masks.get(key)
            if mask is None:
                mask = masks[key] = tab.satisfying_mask(key)
            if act.a < len(c):
                raise PropertyViolation(f"a(I) = {act.a} below |C| for I={I}, C={c}")
            expected = np.zeros(len(tab.perms), dtype=np.int64)
            if act.a <= n:
                expected[mask] = numer[j] // factorial(n - act.a)
            diff = np.nonzero(M[:, j] != expected)[0]
            for s in diff[: max(0, keep - len(mismatches))]:
                mismatches.append((I, c, int(s), int(M[s, j]), int(expected[s])))
            if len(diff) and len(mismatches) >= keep:
                return SweepResult(n, len(Is), len(Cs), len(Is) * len(Cs) * len(tab.perms), mismatches)
    return SweepResult(n, len(Is), len(Cs), len(Is) * len(Cs) * len(tab.perms), mismatches)


# propositions on products -------------------------------------------------------------


def verify_repeat_scaling(I: Iterable, f: tuple, C: Iterable, n: int) -> bool:
    """A_f A_I e_E = (1/n) A_I e_E entrywise when f ∈ I."""
    I = _atoms(I)
    f = tuple(f)
    if f not in I:
        raise ValueError(f"{f} is not a member of I")
    _, mats = atomic_matrices(n)
    base = product_vector(n, I, C)
    left = mats[atomic_id(n, *f)].apply(base)
    scaled = {s: v / n for s, v in base.items()}
    return _same(left, scaled)


def _same(u: dict, v: dict) -> bool:
    keys = set(u) | set(v)
    return all(u.get(k, ZERO) == v.get(k, ZERO) for k in keys)


def composed_constant(n: int, parts: Sequence[Sequence[tuple]]) -> Fraction:
    """n^|J| ∏ (n-|F_i|)!/n! with J the union of the parts."""
    J = set().union(*(set(map(tuple, F)) for F in parts)) if parts else set()
    c = Fraction(n ** len(J))
    for F in parts:
        c *= Fraction(factorial(n - len(F)), factorial(n))
    return c


def composed_vector(n: int, parts: Sequence[Sequence[tuple]], C: Iterable) -> dict:
    """A_I e_E where I holds the composed flaws ⟨F_1⟩, ..., ⟨F_k⟩."""
    ss = atomic_system(n)
    vec = event_vector(ss.perm_space, C)
    for F in reversed(parts):
        flaw = compose_flaw(ss, [atomic_id(n, x, y) for x, y in F])
        vec = flaw.matrix.apply(vec)
    return vec


def verify_composed_product(parts: Sequence[Sequence[tuple]], C: Iterable, n: int) -> bool:
    parts = [_atoms(F) for F in parts]
    J = _atoms(set().union(*map(set, parts))) if parts else ()
    left = composed_vector(n, parts, C)
    c = composed_constant(n, parts)
    right = {s: c * v for s, v in product_vector(n, J, C).items()}
    return _same(left, right)


@dataclass(frozen=True)
class GrowthVerdict:
    case: int  # 1: a unchanged and a C-path end is related to f; 2: a grows by one
    a_before: int
    a_after: int
    touching_paths: int


def verify_active_growth(I: Iterable, f: tuple, C: Iterable) -> GrowthVerdict:
    """Classify adding an atom f unrelated to I; exactly one case must hold."""
    I, f = _atoms(I), tuple(f)
    if any(atoms_related(f, g) for g in I):
        raise ValueError(f"{f} is related to I")
    before = active_conditions(I, C)
    after = active_conditions(I + (f,), C)
    touching = sum(
        1
        for comp in before.c_paths()
        if atoms_related(comp.nodes[0][1], f) or atoms_related(comp.nodes[-1][1], f)
    )
    first = after.a == before.a and touching > 0
    second = after.a == before.a + 1 and before.conditions <= after.conditions
    if first == second:
        raise PropertyViolation(f"adding {f} to {I} with C={before.C}: cases (i)={first}, (ii)={second}")
    return GrowthVerdict(1 if first else 2, before.a, after.a, touching)


@dataclass(frozen=True)
class DominationCheck:
    premise: bool  # a(J') = a(J) + |J' - J|
    dominated: bool  # A_f A_I e_E ⪯ A_I e_E


def verify_domination(parts: Sequence[Sequence[tuple]], new: Sequence[tuple], C: Iterable, n: int) -> DominationCheck:
    """When the active count grows by |J'-J|, the composed flaw ⟨new⟩ must be
    dominated by the composed set I; the ⪯ test uses exact vectors."""
    parts = [_atoms(F) for F in parts]
    new = _atoms(new)
    J = set().union(*map(set, parts)) if parts else set()
    Jp = J | set(new)
    if any(atoms_related(a, b) for a in new for b in J):
        raise ValueError("the new flaw is related to I")
    premise = active_conditions(Jp, C).a == active_conditions(J, C).a + len(Jp - J)
    base = composed_vector(n, parts, C)
    ss = atomic_system(n)
    flaw = compose_flaw(ss, [atomic_id(n, x, y) for x, y in new])
    grown = flaw.matrix.apply(base)
    dominated = vec_leq(grown, base)
    if premise and not dominated:
        raise PropertyViolation(f"<{new}> not dominated by {parts} although the active count grew fully")
    return DominationCheck(premise, dominated)


# distributional bound ---------------------------------------------------------------------


@dataclass
class PermEventBound:
    C: tuple
    mu_E: Fraction
    bound: BoundValue
    orderable_psi: BoundValue
    neighbours: tuple  # per atom of C, the flaw ids related to it


def _flaw_atoms(ps: PermSystem, f: int) -> tuple:
    return ps.instance.flaws[f]


def perm_product_bound(
    ps: PermSystem,
    C: Iterable,
    max_nodes: int,
    calc: PsiCalculator | None = None,
    check: bool = True,
) -> PermEventBound:
    """μ(E)·∏_i (1 + Σ_{f ∼ g_i} Ψ(f)) for E = g_1 ∩ ... ∩ g_r.

    A flaw is related to g_i when one of its atoms shares a coordinate with
    g_i. With `check`, the product is compared against the orderable-set
    sum on the composed system, both truncated and (when both converge)
    with tails.
    """
    C = _atoms(C)
    _require_stable(C, "C")
    n = ps.instance.n
    sys = ps.system
    calc = calc or PsiCalculator(sys, max_nodes)
    mu_E = Fraction(factorial(n - len(C)), factorial(n))
    value, upper = mu_E, mu_E
    neighbours = []
    for g in C:
        related = tuple(f for f in range(sys.n_flaws) if any(atoms_related(a, g) for a in _flaw_atoms(ps, f)))
        neighbours.append(related)
        ests = [calc.psi((f,)) for f in related]
        value *= ONE + sum((e.value for e in ests), ZERO)
        if upper is not None and all(e.converged for e in ests):
            upper *= ONE + sum((e.upper for e in ests), ZERO)
        else:
            upper = None
    bound = BoundValue(value, upper - value if upper is not None else None)
    E = ps.event_states(C)
    if E:
        orderable_psi = orderable_bounds(sys, E, max_nodes, calc).orderable_psi
    else:
        orderable_psi = BoundValue(ZERO, ZERO)
    if check:
        if orderable_psi.value > bound.value:
            raise PropertyViolation(f"truncated product {bound.value} below the orderable sum {orderable_psi.value}")
        if bound.converged and orderable_psi.converged and orderable_psi.upper > bound.upper:
            raise PropertyViolation(f"product {bound.upper} below the orderable sum {orderable_psi.upper}")
    return PermEventBound(C, mu_E, bound, orderable_psi, tuple(neighbours))
