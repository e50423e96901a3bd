"""End-to-end acceptance checks; each test_criterion_K is reported as
PASS/FAIL in the terminal summary by conftest.py."""

import random
import time
from fractions import Fraction as F
from itertools import combinations
from math import factorial
from pathlib import Path

import pytest

from helpers import SPARSE_4SAT, brute_force_wdags, cnf_system, wdag_from_edges
from lllab import criteria as crit
from lllab import distribution as dist
from lllab.compose import compose_flaw, composed_system, enumeration_differences
from lllab.instances import (
    atomic_id,
    atomic_system,
    load_noncommuting_fixture,
    build_permutation_system,
    build_variable_system,
    load_dimacs,
    load_perm_instance,
    PermInstance,
    random_cnf,
)
from lllab.oracle import DependencyRelation, check_t_commutative, is_regenerating
from lllab.permlll import closed_form_sweep, stable_atom_sets, perm_product_bound
from lllab.search import (
    LeastId,
    UniformRandom,
    Frequency,
    appearance_frequency,
    replay_problems,
    resample_count_stats,
    adversary_ratio_table,
    run_parallel_rounds,
)
from lllab.wdag import (
    Rule,
    appearance_bound,
    apply_left,
    canonicalize,
    enumerate_wdags,
    gen_witness,
    projected_bound,
    regenerating_weight,
    stable_subsets,
    weight,
)

ROOT = Path(__file__).resolve().parent.parent
INST = ROOT / "instances"
TRIALS = 10**5


def sparse():
    return cnf_system(8, SPARSE_4SAT)


def dense():
    return build_variable_system(load_dimacs(INST / "random3sat.cnf"))


def perm_file(name):
    inst = load_perm_instance(INST / name)
    return inst, build_permutation_system(inst)


def random_3cnfs(count, seed):
    rng = random.Random(seed)
    return [random_cnf(8, 7, 3, rng) for _ in range(count)]


def test_criterion_1():
    for cnf in random_3cnfs(5, 101):
        start = time.perf_counter()
        sys = build_variable_system(cnf)
        for f, g in combinations(range(sys.n_flaws), 2):
            shares = bool({abs(l) for l in cnf.clauses[f]} & {abs(l) for l in cnf.clauses[g]})
            assert sys.dep.related(f, g) == shares
        assert check_t_commutative(sys) == []
        assert time.perf_counter() - start < 10


def test_criterion_2():
    systems = [build_variable_system(c) for c in random_3cnfs(5, 101)] + [sparse(), dense()]
    for n in (3, 4, 5):
        systems.append(atomic_system(n).oracle_system())
    for sys in systems:
        mu = sys.mu_vector()
        for f in range(sys.n_flaws):
            left = apply_left_flaw(sys, f, mu)
            mu_f = sys.measure_of(sys.flaws[f].support)
            assert left == {s: mu_f * w for s, w in mu.items() if mu_f * w}
            assert is_regenerating(sys, f)


def apply_left_flaw(sys, f, mu):
    out = {}
    for s, row in enumerate(sys.matrix(f).rows):
        w = mu.get(s, 0)
        if not w:
            continue
        for t, p in row.items():
            out[t] = out.get(t, 0) + w * p
    return {t: v for t, v in out.items() if v}


def test_criterion_3():
    rng = random.Random(33)
    setups = [
        ("sparse4sat", sparse(), UniformRandom(), Rule.Q1),
        ("random3sat", dense(), LeastId(), Rule.Q1),
        ("perm4", perm_file("perm4.perm")[1].system, UniformRandom(), Rule.Q0),
    ]
    for name, sys, strategy, rule in setups:
        pool = [H for f in range(sys.n_flaws) for H in enumerate_wdags(sys.dep, (f,), 4)]
        targets = rng.sample(pool, min(25, len(pool)))
        assert len(targets) >= 20
        rep = appearance_frequency(sys, strategy, rule, targets, TRIALS, 10**4, seed=300)
        assert rep.timeouts == 0, name
        for H, fr in zip(targets, rep.frequencies):
            assert fr.below(float(appearance_bound(sys, H))), (name, H.labels, fr.value)


def _events(sys, count, seed):
    rng = random.Random(seed)
    out = [sys.event(rng.sample(range(sys.n_states), k)) for k in (1, 3, sys.n_states // 4)]
    while len(out) < count:
        out.append(sys.event(rng.sample(range(sys.n_states), rng.randint(1, sys.n_states // 2))))
    return out


def test_criterion_4():
    instances = {"sparse4sat": sparse(), "perm4": perm_file("perm4.perm")[1].system, "perm5": perm_file("perm5.perm")[1].system}
    for name, sys in instances.items():
        events = _events(sys, 3, 44)
        mu = sys.mu_vector()
        checked = 0
        for I in stable_subsets(sys.dep, range(sys.n_flaws), 2):
            for H in enumerate_wdags(sys.dep, I, 5):
                row = apply_left(sys, H, mu)
                assert sum(row.values()) == regenerating_weight(sys, H) == weight(sys, H)
                for E in events:
                    value = sum((row.get(s, 0) for s in E.members), F(0))
                    assert value <= sys.measure_of(E.members) * weight(sys, H)
                    assert projected_bound(sys, H, E) == value
                checked += 1
        assert checked > 100, name


def test_criterion_5():
    sys = sparse()
    p, d = crit.symmetric_parameters(sys)
    rep = crit.check_symmetric(sys, p, d)
    assert rep.satisfied
    stats = resample_count_stats(sys, UniformRandom(), 10**4, seed=500)
    assert stats.timeouts == 0
    total = stats.total_steps
    assert total.mean <= float(crit.E_UPPER * sum(sys.charges())) + 3 * total.halfwidth
    for f, est in enumerate(stats.per_flaw):
        ph = crit.phi(sys, Rule.Q1, f, 8, tighten=True)
        assert ph.converged
        assert est.mean <= float(ph.upper) + 3 * est.halfwidth


def _distribution_instances():
    cnf = sparse()
    yield "sparse4sat", cnf, [E.members for E in _events(cnf, 5, 66)]
    for name in ("perm4.perm", "perm5.perm"):
        inst, ps = perm_file(name)
        yield name, ps.system, [ps.event_states(a) for a in inst.events.values()]


def test_criterion_6():
    for name, sys, events in _distribution_instances():
        assert len(events) >= 5
        calc = crit.PsiCalculator(sys, 6)
        reports = [dist.event_report(sys, E, f"e{i}", 6, calc) for i, E in enumerate(events)]
        for rep in reports:
            rep.orderable.check_chain()
            rep.minimal.check_chain()
        freqs = dist.empirical_events(sys, UniformRandom(), events, TRIALS, 10**4, seed=600)
        for rep, fr in zip(reports, freqs):
            assert fr.timeouts == 0
            for key, b in rep.bounds().items():
                assert fr.ever.below(float(b)), (name, rep.name, key, fr.ever.value, float(b))


def test_criterion_7():
    sys = sparse()
    eps, delta = F(1, 5), F(1, 10)
    rb = crit.round_bound(sys, eps, delta, 8)
    tail = crit.deep_weight(sys, rb.t, 8)
    assert tail is not None
    runs = 10**4
    outside_candidates = depth_mismatches = over = 0
    for trial in range(runs):
        run = run_parallel_rounds(sys, UniformRandom(), 700, trial=trial)
        assert run.terminated and replay_problems(sys, run.trajectory) == []
        flaws = run.trajectory.flaws
        for k, r in enumerate(run.rounds):
            if k:
                prev = run.rounds[k - 1].resampled
                outside_candidates += sum(1 for f in r.candidates if not any(sys.dep.related(f, g) for g in prev))
            for i in range(len(r.resampled)):
                depth_mismatches += gen_witness(sys, Rule.Q1, flaws, r.before + i + 1).depth() != r.index
        over += run.n_rounds > rb.rounds
    assert outside_candidates == 0 and depth_mismatches == 0
    assert Frequency(over, runs).below(float(tail / rb.t))


def test_criterion_8():
    n = 4
    ss = atomic_system(n)
    sets = [tuple(atomic_id(n, *a) for a in S) for S in stable_atom_sets(n, 3) if S]
    base = ss.oracle_system()
    for members in sets:
        cf = compose_flaw(ss, members, check=False)
        prod = base.matrix(members[0])
        for f in members[1:]:
            prod = prod @ base.matrix(f)
        for s in range(base.n_states):
            want = {t: cf.constant * v for t, v in prod.rows[s].items() if v}
            assert cf.matrix.rows[s] == want
        assert enumeration_differences(ss, members) == []
    cs = composed_system(ss, sets)
    assert check_t_commutative(cs.system) == []


def test_criterion_9():
    fx = load_noncommuting_fixture()
    rows = adversary_ratio_table(fx, 4, seed=900, trials=TRIALS)
    ratios = [r.ratio for r in rows]
    assert all(r > 1 for r in ratios)
    assert all(a < b for a, b in zip(ratios, ratios[1:]))
    for r in rows:
        fr = r.frequency
        assert abs(fr.value - float(r.exact)) <= 3 * fr.halfwidth


@pytest.mark.parametrize("n", [3, 4, 5])
def test_criterion_10_closed_form(n):
    res = closed_form_sweep(n, 3, 3)
    assert res.mismatches == []
    assert res.entries == res.sets_I * res.sets_C * factorial(n)


def test_criterion_10():
    instances = [perm_file("perm4.perm"), perm_file("perm5.perm")]
    inline = PermInstance(4, (((0, 0), (1, 1)), ((2, 3),), ((3, 2), (1, 0))), {"a": ((0, 1),), "b": ((2, 2), (3, 3))})
    instances.append((inline, build_permutation_system(inline)))
    for inst, ps in instances:
        atoms = list(inst.events.values())
        assert atoms
        calc = crit.PsiCalculator(ps.system, 6)
        bounds = [perm_product_bound(ps, C, 6, calc) for C in atoms]
        freqs = dist.empirical_events(ps.system, UniformRandom(), [ps.event_states(C) for C in atoms], TRIALS, 10**4, seed=1000)
        for b, fr in zip(bounds, freqs):
            assert b.bound.upper is not None
            assert fr.ever.below(float(b.bound.upper)), (b.C, fr.ever.value, float(b.bound.upper))


def _relations():
    yield DependencyRelation(3, [(0, 1), (1, 2)])
    yield DependencyRelation(4, [(0, 1), (1, 2), (2, 3)])
    yield DependencyRelation(4, list(combinations(range(4), 2)))
    yield DependencyRelation(4, [(0, 1), (0, 2), (0, 3)])
    yield DependencyRelation(4, [])


def test_criterion_11():
    for dep in _relations():
        brute = brute_force_wdags(dep.related, dep.n, 4)
        for I in stable_subsets(dep, range(dep.n)):
            got = {canonicalize(H) for H in enumerate_wdags(dep, I, 4)}
            want = {canonicalize(wdag_from_edges(*v)) for v in brute.get(frozenset(I), {}).values()}
            assert got == want, I
