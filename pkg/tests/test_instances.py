import json
from fractions import Fraction as F
from itertools import combinations
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from helpers import SPARSE_4SAT, cnf_system
from lllab.instances import (
    CnfInstance,
    PermInstance,
    atomic_id,
    atomic_system,
    load_noncommuting_fixture,
    build_permutation_system,
    build_variable_system,
    dump_fixture,
    dump_system,
    load_dimacs,
    load_explicit_system,
    load_perm_instance,
    parse_dimacs,
    parse_perm_instance,
    parse_system,
    run_variable_search,
    search_noncommuting_pair,
)
from lllab.oracle import (
    check_dependency_soundness,
    check_t_commutative,
    is_injective,
    is_regenerating,
    property_matrix,
)

ROOT = Path(__file__).resolve().parent.parent


def test_unit_clause_matrix():
    sys = cnf_system(1, [(1,)])
    fl = sys.flaws[0]
    assert fl.support == {0}
    assert fl.matrix.rows[0] == {0: F(1, 2), 1: F(1, 2)}


def test_disjoint_clauses_commute():
    sys = cnf_system(4, [(1, -2), (3, 4)])
    assert not sys.dep.related(0, 1)
    assert check_t_commutative(sys) == []


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_clause_charge_is_two_to_minus_k(k):
    sys = cnf_system(5, [tuple(range(1, k + 1))])
    assert sys.charges() == (F(1, 2**k),)
    assert sys.measure_of(sys.flaws[0].support) == F(1, 2**k)


def test_biased_measure():
    cnf = CnfInstance(2, ((1, 2),), bias=(F(1, 3), F(1, 4)))
    sys = build_variable_system(cnf)
    assert sys.measure_of(sys.flaws[0].support) == F(2, 3) * F(3, 4)
    assert property_matrix(sys)["regenerating"]
    skew = build_variable_system(CnfInstance(2, ((1, 2),), bias=(F(1, 3), F(1, 4)), resample_bias=(F(1, 2), F(1, 2))))
    assert not is_regenerating(skew, 0)
    assert "regenerating" not in skew.declared


def test_variable_system_rejects_bad_input():
    with pytest.raises(ValueError):
        CnfInstance(2, ((1, 3),))
    with pytest.raises(ValueError):
        CnfInstance(2, ((1, 0),))
    with pytest.raises(ValueError):
        build_variable_system(CnfInstance(13, ((1,),)))
    with pytest.raises(ValueError):
        CnfInstance(1, ((1,),), bias=(F(3, 2),))


def test_tautology_has_empty_support():
    sys = cnf_system(2, [(1, -1, 2)])
    assert sys.flaws[0].support == frozenset()


def test_dimacs_parsing():
    cnf = parse_dimacs("c comment\np cnf 3 2\n1 -2 0\n2 3\n0\n")
    assert cnf.n == 3 and cnf.clauses == ((1, -2), (2, 3))
    with pytest.raises(ValueError):
        parse_dimacs("1 2 0\n")
    with pytest.raises(ValueError):
        parse_dimacs("p cnf 2 2\n1 2 0\n")
    with pytest.raises(ValueError, match="line 2"):
        parse_dimacs("p cnf 2 1\n1 x 0\n")
    sparse = load_dimacs(ROOT / "instances" / "sparse4sat.cnf")
    assert sparse.n == 8 and len(sparse.clauses) == 4


@settings(max_examples=40)
@given(st.lists(st.lists(st.integers(1, 5).flatmap(lambda v: st.sampled_from([v, -v])), min_size=1, max_size=3), min_size=1, max_size=4))
def test_variable_systems_are_sound_and_match_declarations(clauses):
    sys = cnf_system(5, clauses)
    assert check_dependency_soundness(sys) == []
    props = property_matrix(sys)
    for key in ("sound", "t_commutative", "regenerating"):
        assert props[key]
    assert props["injective"]
    assert sys.charges() == tuple(sys.measure_of(fl.support) for fl in sys.flaws)


def test_matrix_free_search_matches_exact_runs_in_law():
    from lllab.search import LeastId, resample_count_stats

    cnf = CnfInstance(8, SPARSE_4SAT)
    sys = build_variable_system(cnf)
    trials = 4000
    counts = []
    for trial in range(trials):
        steps, x, ok = run_variable_search(cnf, 9, trial=trial)
        assert ok
        state = sum(b << i for i, b in enumerate(x))
        assert sys.holding(state) == ()
        counts.append(steps)
    mean = sum(counts) / trials
    sd = (sum((c - mean) ** 2 for c in counts) / (trials - 1)) ** 0.5
    exact = resample_count_stats(sys, LeastId(), trials, seed=10).total_steps
    assert abs(mean - exact.mean) <= 4 * (sd**2 / trials + exact.sd**2 / trials) ** 0.5


def test_atomic_permutation_matrix():
    ss = atomic_system(3)
    sys = ss.oracle_system()
    f = atomic_id(3, 0, 0)
    A = sys.matrix(f)
    assert A.n == 6
    for s in range(6):
        row = A.rows[s]
        if s in sys.flaws[f].support:
            assert len(row) == 3 and set(row.values()) == {F(1, 3)}
        else:
            assert row == {}


def test_permutation_systems_are_injective_and_regenerating():
    for n in (3, 4):
        sys = atomic_system(n).oracle_system()
        assert is_injective(sys)
        assert all(is_regenerating(sys, f) for f in range(sys.n_flaws))
        assert check_dependency_soundness(sys) == []
        for a, b in combinations(range(n * n), 2):
            (x1, y1), (x2, y2) = divmod(a, n), divmod(b, n)
            assert sys.dep.related(a, b) == (x1 == x2 or y1 == y2)


def test_perm_instance_file():
    inst = load_perm_instance(ROOT / "instances" / "perm4.perm")
    assert inst.n == 4 and len(inst.flaws) == 3 and "pair" in inst.events
    ps = build_permutation_system(inst)
    sys = ps.system
    props = property_matrix(sys)
    assert all(props.values())
    assert len(sys.flaws[0].support) == 2
    assert ps.event_states([(0, 0)]) == frozenset(i for i, p in enumerate(ps.space.perms) if p[0] == 0)


def test_perm_instance_errors():
    with pytest.raises(ValueError):
        parse_perm_instance("flaw 0:0\n")
    with pytest.raises(ValueError, match="line 2"):
        parse_perm_instance("n 3\nflaw 00\n")
    with pytest.raises(ValueError):
        parse_perm_instance("n 3\nflaw 0:0 0:1\n")
    with pytest.raises(ValueError):
        PermInstance(3, (((0, 3),),))
    with pytest.raises(ValueError):
        atomic_system(7)


def test_explicit_round_trip(tmp_path):
    sys = cnf_system(3, [(1, -2), (2, 3)])
    text = dump_system(sys)
    back, _ = parse_system(text)
    assert dump_system(back) == text
    for f in range(sys.n_flaws):
        assert back.matrix(f) == sys.matrix(f)
    path = tmp_path / "sys.json"
    path.write_text(text)
    assert dump_system(load_explicit_system(path)) == text


def test_explicit_rejects_bad_rows():
    doc = json.loads(dump_system(cnf_system(2, [(1,)])))
    label = doc["flaws"][0]["support"][0]
    doc["flaws"][0]["rows"][label][0][1] = "1/3"
    with pytest.raises(ValueError, match=repr(label)):
        parse_system(json.dumps(doc))
    with pytest.raises(ValueError, match="line"):
        parse_system("{ not json")
    with pytest.raises(ValueError, match="mu"):
        parse_system(json.dumps({"states": ["a"], "flaws": []}))


def test_noncommuting_fixture_structure():
    fx = load_noncommuting_fixture()
    sys = fx.system
    assert check_dependency_soundness(sys) == []
    bad = {tuple(sorted(p[:2])) for p in check_t_commutative(sys)}
    assert bad == {tuple(sorted((fx.f, fx.g)))}
    assert all(is_regenerating(sys, f) for f in range(sys.n_flaws))
    assert not sys.dep.related(fx.f, fx.g)
    for s in range(sys.n_states):
        h = fx.singleton(s)
        assert all(sys.dep.related(h, g) for g in range(sys.n_flaws))
    AB = sys.matrix(fx.f) @ sys.matrix(fx.g)
    BA = sys.matrix(fx.g) @ sys.matrix(fx.f)
    assert AB[fx.sigma, fx.tau] < BA[fx.sigma, fx.tau]


def test_noncommuting_fixture_round_trip():
    fx = load_noncommuting_fixture()
    again, _ = parse_system(dump_fixture(fx))
    for f in range(fx.system.n_flaws):
        assert again.matrix(f) == fx.system.matrix(f)


@pytest.mark.slow
def test_fixture_is_reproduced_by_search():
    fx = search_noncommuting_pair(limit=2000)
    assert dump_fixture(fx) == dump_fixture(load_noncommuting_fixture())
