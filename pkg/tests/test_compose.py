from fractions import Fraction as F
from itertools import combinations

import pytest

from lllab.compose import (
    SeededFlaw,
    SeededSystem,
    check_oblivious,
    compose_flaw,
    composed_system,
    conditioned_seed_space,
    enumeration_differences,
)
from lllab.instances import atomic_id, atomic_system
from lllab.oracle import DependencyRelation, check_t_commutative, is_injective, is_regenerating
from lllab.space import Distribution, StateSpace
from lllab.wdag import PropertyViolation


def swap_values(p, a, b):
    return tuple(b if v == a else (a if v == b else v) for v in p)


def test_atomic_swap_oracle_is_oblivious():
    for n in (3, 4):
        assert check_oblivious(atomic_system(n)) == []


def tiny_seeded(moves_f):
    """Three states; f and g both hold on {0, 1} and are unrelated."""
    space = StateSpace.of_size(3)
    mu = Distribution.uniform(3)
    f = SeededFlaw(0, {0, 1}, (("r", F(1)),), lambda s, r: moves_f[s])
    g = SeededFlaw(1, {0, 1}, (("q", F(1)),), lambda s, r: 2)
    return SeededSystem(space, mu, [f, g], DependencyRelation(2, []))


def test_planted_violation_is_found():
    assert check_oblivious(tiny_seeded({0: 2, 1: 1})) == [(0, 1, "r")]
    assert check_oblivious(tiny_seeded({0: 2, 1: 2})) == []


def test_small_overlaps_never_violate():
    space = StateSpace.of_size(3)
    f = SeededFlaw(0, {0, 1}, ((0, F(1, 2)), (1, F(1, 2))), lambda s, r: (s + r + 1) % 3)
    g = SeededFlaw(1, {1, 2}, ((0, F(1)),), lambda s, r: 0)
    ss = SeededSystem(space, Distribution.uniform(3), [f, g], DependencyRelation(2, []))
    assert check_oblivious(ss) == []


def test_conditioned_seeds():
    ss = atomic_system(4)
    a = atomic_id(4, 0, 0)
    b = atomic_id(4, 1, 1)
    assert conditioned_seed_space(ss, a, ()).seeds == ss.flaws[a].seeds
    cond = conditioned_seed_space(ss, a, (b,))
    # swapping value 0 with 1 would break π(1) = 1
    assert [z for z, _ in cond.seeds] == [0, 2, 3]
    assert cond.mass == F(3, 4) and all(p == F(1, 3) for _, p in cond.seeds)
    with pytest.raises(ValueError):
        conditioned_seed_space(ss, a, (atomic_id(4, 0, 1),))
    # a condition no seed can meet
    space = StateSpace.of_size(2)
    f = SeededFlaw(0, {0, 1}, ((0, F(1)),), lambda s, r: 1 - s)
    g = SeededFlaw(1, {0}, ((0, F(1)),), lambda s, r: 1)
    ss2 = SeededSystem(space, Distribution.uniform(2), [f, g], DependencyRelation(2, []))
    with pytest.raises(ValueError):
        conditioned_seed_space(ss2, 0, (1,))


def test_single_member_composition_is_the_flaw():
    ss = atomic_system(3)
    for f in range(9):
        cf = compose_flaw(ss, (f,))
        assert cf.constant == 1 and cf.matrix == ss.matrix(f)


def test_two_disjoint_atoms_brute_force():
    n = 4
    ss = atomic_system(n)
    space = ss.perm_space
    (x1, y1), (x2, y2) = (0, 1), (2, 3)
    cf = compose_flaw(ss, (atomic_id(n, x1, y1), atomic_id(n, x2, y2)))
    assert cf.constant == F(n, n - 1)
    expect = {}
    for p in space.perms:
        if p[x1] != y1 or p[x2] != y2:
            continue
        row = {}
        for z1 in range(n):
            if z1 == y2:
                continue
            q = swap_values(p, y1, z1)
            for z2 in range(n):
                r = swap_values(q, y2, z2)
                t = space.index[r]
                row[t] = row.get(t, 0) + F(1, (n - 1) * n)
        expect[space.index[p]] = row
    assert set(cf.support) == set(expect)
    for s, row in expect.items():
        assert cf.matrix.rows[s] == row


def test_enumeration_does_not_matter_for_atoms():
    n = 4
    ss = atomic_system(n)
    for members in ((0, 5), (atomic_id(n, 0, 0), atomic_id(n, 1, 1), atomic_id(n, 2, 2))):
        assert enumeration_differences(ss, members) == []


def test_noncommuting_preflaws_depend_on_enumeration():
    space = StateSpace.of_size(4)
    mu = Distribution.uniform(4)
    # both hold everywhere; f sends 0 to 1 half the time, g sends 1 to 2
    f = SeededFlaw(0, range(4), ((0, F(1, 2)), (1, F(1, 2))), lambda s, r: 1 if (s == 0 and r) else s)
    g = SeededFlaw(1, range(4), ((0, F(1)),), lambda s, r: 2 if s == 1 else s)
    ss = SeededSystem(space, mu, [f, g], DependencyRelation(2, []))
    assert enumeration_differences(ss, (0, 1)) == [(1, 0)]


def test_composition_rejects_bad_sets():
    ss = atomic_system(3)
    with pytest.raises(ValueError):
        compose_flaw(ss, ())
    with pytest.raises(ValueError):
        compose_flaw(ss, (atomic_id(3, 0, 0), atomic_id(3, 0, 1)))
    with pytest.raises(ValueError):
        compose_flaw(ss, (atomic_id(3, 0, 0), atomic_id(3, 1, 0)))


def stable_pairs(n):
    atoms = [(x, y) for x in range(n) for y in range(n)]
    return [
        (atomic_id(n, *a), atomic_id(n, *b))
        for a, b in combinations(atoms, 2)
        if a[0] != b[0] and a[1] != b[1]
    ]


def test_composed_pairs_on_four_letters():
    n = 4
    ss = atomic_system(n)
    sets = stable_pairs(n)[:12]
    cs = composed_system(ss, sets)
    sys = cs.system
    assert check_t_commutative(sys) == []
    assert is_injective(sys)
    for f in range(sys.n_flaws):
        assert is_regenerating(sys, f)
        mu_f = sys.measure_of(sys.flaws[f].support)
        left = {}
        for s, row in enumerate(sys.matrix(f).rows):
            for t, p in row.items():
                left[t] = left.get(t, 0) + sys.mu.weights[s] * p
        assert left == {s: mu_f * w for s, w in sys.mu_vector().items()}
    for i, j in combinations(range(len(sets)), 2):
        shared = any(ss.dep.related(a, b) for a in sets[i] for b in sets[j])
        assert sys.dep.related(i, j) == shared
    assert all(sys.dep.related(i, i) for i in range(len(sets)))


def test_composing_singletons_reproduces_atoms():
    ss = atomic_system(3)
    cs = composed_system(ss, [(f,) for f in range(9)])
    base = ss.oracle_system()
    for f in range(9):
        assert cs.system.matrix(f) == base.matrix(f)
        assert cs.system.flaws[f].support == base.flaws[f].support
    for f, g in combinations(range(9), 2):
        assert cs.system.dep.related(f, g) == base.dep.related(f, g)


def test_product_identity_failure_is_reported():
    # seeds that are not oblivious break c·∏A_f
    space = StateSpace.of_size(3)
    mu = Distribution.uniform(3)
    f = SeededFlaw(0, {0, 1}, ((0, F(1, 2)), (1, F(1, 2))), lambda s, r: (0, 2)[r] if s == 0 else (1, 1)[r])
    g = SeededFlaw(1, {0, 1}, ((0, F(1)),), lambda s, r: s)
    ss = SeededSystem(space, mu, [f, g], DependencyRelation(2, []))
    assert check_oblivious(ss)
    with pytest.raises(PropertyViolation):
        compose_flaw(ss, (0, 1))
