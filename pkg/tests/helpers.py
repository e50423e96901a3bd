"""Small systems shared by the tests."""

import random
from fractions import Fraction
from itertools import combinations

from lllab.instances import CnfInstance, build_variable_system, random_cnf
from lllab.matrix import SparseMatrix
from lllab.oracle import DependencyRelation, Flaw, OracleSystem
from lllab.space import Distribution, StateSpace

F = Fraction


def dense_system(mu, flaws, pairs=None, complete=False):
    """flaws: list of (support, dense rows) with rows given only for the support."""
    n = len(mu)
    built = []
    for i, (support, rows) in enumerate(flaws):
        sparse = [dict() for _ in range(n)]
        for s, row in rows.items():
            sparse[s] = {t: F(x) for t, x in enumerate(row) if x}
        built.append(Flaw(i, support, SparseMatrix(n, sparse)))
    if complete:
        pairs = list(combinations(range(len(built)), 2))
    dep = DependencyRelation(len(built), pairs or [])
    return OracleSystem(StateSpace.of_size(n), Distribution(tuple(F(w) for w in mu)), built, dep)


def two_state_flip():
    """μ uniform on {0, 1}; f = {0} always moves to 1, so γ_f = 1 and d_f = 2."""
    return dense_system([F(1, 2), F(1, 2)], [({0}, {0: [0, 1]})])


def cnf_system(n, clauses, **kw):
    return build_variable_system(CnfInstance(n, tuple(map(tuple, clauses)), **kw))


def random_3cnf_systems(count, seed, n=8, m=6):
    rng = random.Random(seed)
    return [cnf_system(n, random_cnf(n, m, 3, rng).clauses) for _ in range(count)]


SPARSE_4SAT = ((1, 2, 3, 4), (-4, 5, 6, 7), (-7, 8, -1, 2), (3, -5, -8, 6))


def _acyclic(k, edges):
    indeg = [0] * k
    for _, b in edges:
        indeg[b] += 1
    ready = [v for v in range(k) if indeg[v] == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for a, b in edges:
            if a == v:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
    return seen == k


def brute_force_key(labels, edges):
    """Isomorphism invariant by minimizing over all node relabelings."""
    from itertools import permutations

    k = len(labels)
    best = None
    for p in permutations(range(k)):
        pos = {v: i for i, v in enumerate(p)}
        key = (tuple(labels[v] for v in p), tuple(sorted((pos[a], pos[b]) for a, b in edges)))
        if best is None or key < best:
            best = key
    return best


def brute_force_wdags(related, n_flaws, max_nodes):
    """Every wdag with at most max_nodes nodes over flaws 0..n_flaws-1, found
    by listing all label tuples and all orientations-or-absences of every node
    pair, keeping acyclic graphs whose edges are exactly the related pairs.
    Returns {sink label set: {isomorphism key: (labels, edges)}}."""
    from itertools import product

    out = {}
    for k in range(max_nodes + 1):
        pairs = list(combinations(range(k), 2))
        for labels in product(range(n_flaws), repeat=k):
            for choice in product((0, 1, 2), repeat=len(pairs)):
                edges = []
                ok = True
                for (a, b), c in zip(pairs, choice):
                    rel = related(labels[a], labels[b])
                    if (c != 0) != rel:
                        ok = False
                        break
                    if c == 1:
                        edges.append((a, b))
                    elif c == 2:
                        edges.append((b, a))
                if not ok or not _acyclic(k, edges):
                    continue
                has_out = {a for a, _ in edges}
                sinks = frozenset(labels[v] for v in range(k) if v not in has_out)
                key = brute_force_key(labels, edges)
                out.setdefault(sinks, {})[key] = (labels, edges)
    return out


def wdag_from_edges(labels, edges):
    from lllab.wdag import Wdag

    preds = [set() for _ in labels]
    for a, b in edges:
        preds[b].add(a)
    return Wdag(tuple(labels), tuple(frozenset(p) for p in preds))
