"""Witness DAGs: structure, products A_H, GenWitness, canonical forms, enumeration.

A wdag is stored as node labels plus predecessor sets. Because edges are
forced by the labels (an edge joins two nodes iff their labels are related),
any topological label sequence determines the wdag; `from_sequence` rebuilds
it and `canonicalize` picks one distinguished sequence.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .matrix import ONE, ZERO, SparseMatrix, ones, vec_leq
from .oracle import DependencyRelation, OracleSystem
from .space import Event


class PropertyViolation(AssertionError):
    """An inequality that a theorem guarantees was found to fail."""


class Rule(enum.Enum):
    Q0 = "q0"
    Q1 = "q1"
    Q2 = "q2"

    @classmethod
    def parse(cls, text: str) -> "Rule":
        return cls(text.lower())


@dataclass(frozen=True)
class Wdag:
    labels: tuple
    preds: tuple

    @classmethod
    def empty(cls) -> "Wdag":
        return cls((), ())

    @classmethod
    def from_sequence(cls, seq: Sequence[int], dep: DependencyRelation) -> "Wdag":
        """Nodes in the given (topological) order; i -> j iff i < j and labels related."""
        seq = tuple(seq)
        preds = tuple(
            frozenset(i for i in range(j) if dep.related(seq[i], seq[j])) for j in range(len(seq))
        )
        return cls(seq, preds)

    def __len__(self):
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def successors(self) -> tuple:
        succ = [set() for _ in self.labels]
        for v, ps in enumerate(self.preds):
            for u in ps:
                succ[u].add(v)
        return tuple(frozenset(s) for s in succ)

    def sources(self) -> list:
        return [v for v, ps in enumerate(self.preds) if not ps]

    def sinks(self) -> list:
        succ = self.successors()
        return [v for v in range(self.size) if not succ[v]]

    def sink_labels(self) -> frozenset:
        return frozenset(self.labels[v] for v in self.sinks())

    def topological_order(self) -> list:
        indeg = [len(ps) for ps in self.preds]
        succ = self.successors()
        ready = sorted(v for v in range(self.size) if indeg[v] == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for w in sorted(succ[v]):
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
        if len(order) != self.size:
            raise ValueError("graph has a cycle")
        return order

    def depth(self) -> int:
        longest = {}
        for v in self.topological_order():
            longest[v] = 1 + max((longest[u] for u in self.preds[v]), default=0)
        return max(longest.values(), default=0)

    def subgraph(self, nodes: Iterable[int]) -> "Wdag":
        keep = sorted(set(nodes))
        index = {v: i for i, v in enumerate(keep)}
        labels = tuple(self.labels[v] for v in keep)
        preds = tuple(frozenset(index[u] for u in self.preds[v] if u in index) for v in keep)
        return Wdag(labels, preds)

    def remove(self, node: int) -> "Wdag":
        return self.subgraph(v for v in range(self.size) if v != node)

    def add_source(self, label: int, dep: DependencyRelation) -> "Wdag":
        """New earliest node with edges to every related node."""
        labels = (label,) + self.labels
        preds = [frozenset()]
        for v, ps in enumerate(self.preds):
            shifted = {u + 1 for u in ps}
            if dep.related(label, self.labels[v]):
                shifted.add(0)
            preds.append(frozenset(shifted))
        return Wdag(labels, tuple(preds))

    def dumps(self) -> str:
        lines = []
        for v in range(self.size):
            ps = " ".join(str(u) for u in sorted(self.preds[v]))
            lines.append(f"{v} {self.labels[v]} : {ps}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str) -> "Wdag":
        labels, preds = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, tail = line.partition(":")
            parts = head.split()
            if len(parts) != 2 or not _:
                raise ValueError(f"line {lineno}: expected 'id label : preds', got {raw!r}")
            node, label = int(parts[0]), int(parts[1])
            if node != len(labels):
                raise ValueError(f"line {lineno}: node ids must be consecutive from 0")
            labels.append(label)
            preds.append(frozenset(int(x) for x in tail.split()))
        for v, ps in enumerate(preds):
            if any(not (0 <= u < len(labels)) or u == v for u in ps):
                raise ValueError(f"node {v}: bad predecessor list {sorted(ps)}")
        return cls(tuple(labels), tuple(preds))


def wdag_problems(H: Wdag, dep: DependencyRelation) -> list:
    """Reasons H is not a wdag over `dep`; empty when valid."""
    if any(not (0 <= lab < dep.n) for lab in H.labels):
        return ["label outside the flaw set"]
    try:
        H.topological_order()
    except ValueError:
        return ["cycle"]
    problems = []
    for v in range(H.size):
        for w in range(v + 1, H.size):
            linked = v in H.preds[w] or w in H.preds[v]
            related = dep.related(H.labels[v], H.labels[w])
            if linked != related:
                problems.append(f"nodes {v},{w}: edge={linked} but related={related}")
    return problems


@dataclass(frozen=True, order=True)
class CanonicalWdag:
    labels: tuple

    def __len__(self):
        return len(self.labels)

    def to_wdag(self, dep: DependencyRelation) -> Wdag:
        return Wdag.from_sequence(self.labels, dep)


def elimination_order(H: Wdag, largest_first: bool = False) -> list:
    """Repeatedly remove the source with the smallest (or largest) label."""
    indeg = [len(ps) for ps in H.preds]
    succ = H.successors()
    sign = -1 if largest_first else 1
    heap = [(sign * H.labels[v], v) for v in range(H.size) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, v = heapq.heappop(heap)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, (sign * H.labels[w], w))
    if len(order) != H.size:
        raise ValueError("graph has a cycle")
    return order


def canonicalize(H: Wdag) -> CanonicalWdag:
    return CanonicalWdag(tuple(H.labels[v] for v in elimination_order(H)))


def matrix_of(sys: OracleSystem, H: Wdag, check: bool = False) -> SparseMatrix:
    """A_H as the product of the label matrices along a topological order.

    With `check`, the product along a second elimination order is also
    formed and the two must agree exactly.
    """
    n = sys.n_states

    def along(order):
        out = SparseMatrix.identity(n)
        for v in order:
            out = out @ sys.matrix(H.labels[v])
        return out

    result = along(elimination_order(H))
    if check:
        other = along(elimination_order(H, largest_first=True))
        if other != result:
            raise PropertyViolation("A_H depends on the choice of source order")
    return result


def apply_right(sys: OracleSystem, H: Wdag, vec: dict) -> dict:
    """A_H vec, applying factors from the last node backwards."""
    for v in reversed(elimination_order(H)):
        vec = sys.matrix(H.labels[v]).apply(vec)
    return vec


def apply_left(sys: OracleSystem, H: Wdag, vec: dict) -> dict:
    """vec^T A_H."""
    for v in elimination_order(H):
        vec = sys.matrix(H.labels[v]).left(vec)
    return vec


def is_dominated(sys: OracleSystem, f: int, H: Wdag) -> bool:
    base = apply_right(sys, H, ones(sys.n_states))
    return vec_leq(sys.matrix(f).apply(base), base)


def _flaw_list(trajectory) -> tuple:
    return tuple(getattr(trajectory, "flaws", trajectory))


def gen_witness(sys: OracleSystem, rule: Rule, trajectory, t: int) -> Wdag:
    """Backward witness construction at time t (1-based) of the trajectory."""
    flaws = _flaw_list(trajectory)
    if not (1 <= t <= len(flaws)):
        raise IndexError(f"time {t} outside 1..{len(flaws)}")
    return Wdag.from_sequence(_witness_labels(sys, rule, flaws, t), sys.dep)


def _witness_labels(sys: OracleSystem, rule: Rule, flaws: Sequence[int], t: int) -> list:
    dep = sys.dep
    last = flaws[t - 1]
    seq = [last]
    vec = {s: ONE for s in sys.flaws[last].support}  # A_G 1 for G = {f_t}
    sources = {last}
    for s in range(t - 2, -1, -1):
        f = flaws[s]
        cand = sys.matrix(f).apply(vec)
        if rule is Rule.Q2:
            add = True
        elif rule is Rule.Q0 and f in sources:
            add = True
        elif rule is Rule.Q1 and any(dep.related(f, g) for g in sources):
            add = True
        else:
            add = not vec_leq(cand, vec)
        if add:
            seq.append(f)
            vec = cand
            sources = {g for g in sources if not dep.related(f, g)}
            sources.add(f)
    seq.reverse()
    return seq


def witness_forms(sys: OracleSystem, rule: Rule, trajectory) -> list:
    """Canonical forms of the witness at every time t = 1..len(T)."""
    flaws = _flaw_list(trajectory)
    return [
        canonicalize(Wdag.from_sequence(_witness_labels(sys, rule, flaws, t), sys.dep))
        for t in range(1, len(flaws) + 1)
    ]


def simple_gen_witness(dep: DependencyRelation, trajectory, t: int) -> Wdag:
    """Warm-up construction: keep f_s iff some node already present is related to it."""
    flaws = _flaw_list(trajectory)
    if not (1 <= t <= len(flaws)):
        raise IndexError(f"time {t} outside 1..{len(flaws)}")
    seq = [flaws[t - 1]]
    present = {flaws[t - 1]}
    for s in range(t - 2, -1, -1):
        f = flaws[s]
        if any(dep.related(f, g) for g in present):
            seq.append(f)
            present.add(f)
    seq.reverse()
    return Wdag.from_sequence(seq, dep)


def weight(sys: OracleSystem, H: Wdag) -> Fraction:
    gam = sys.charges()
    out = ONE
    for lab in H.labels:
        out *= gam[lab]
    return out


def regenerating_weight(sys: OracleSystem, H: Wdag) -> Fraction:
    out = ONE
    for lab in H.labels:
        out *= sys.measure_of(sys.flaws[lab].support)
    return out


def appearance_bound(sys: OracleSystem, H: Wdag) -> Fraction:
    """μ^T A_H 1."""
    row = apply_left(sys, H, sys.mu_vector())
    return sum(row.values(), ZERO)


def projected_bound(sys: OracleSystem, H: Wdag, event: Event) -> Fraction:
    """μ^T A_H e_E, checked against μ(E) w(H)."""
    row = apply_left(sys, H, sys.mu_vector())
    value = sum((row.get(s, ZERO) for s in event.members), ZERO)
    cap = sys.measure_of(event.members) * weight(sys, H)
    if value > cap:
        raise PropertyViolation(f"μ^T A_H e_E = {value} exceeds μ(E) w(H) = {cap}")
    return value


def downsets(H: Wdag) -> Iterator[frozenset]:
    """Predecessor-closed node sets of H (prefixes), including ∅ and H."""
    order = H.topological_order()

    def walk(i, chosen):
        if i == len(order):
            yield frozenset(chosen)
            return
        v = order[i]
        yield from walk(i + 1, chosen)
        if H.preds[v] <= chosen:
            chosen.add(v)
            yield from walk(i + 1, chosen)
            chosen.discard(v)

    yield from walk(0, set())


def upsets(H: Wdag) -> Iterator[frozenset]:
    """Successor-closed node sets: complements of prefixes."""
    everything = frozenset(range(H.size))
    for d in downsets(H):
        yield everything - d


def is_prefix(G: Wdag, H: Wdag) -> bool:
    target = canonicalize(G)
    return any(
        len(d) == G.size and canonicalize(H.subgraph(d)) == target for d in downsets(H)
    )


def is_strict_prefix(G: Wdag, H: Wdag) -> bool:
    return G.size < H.size and is_prefix(G, H)


def depth(H: Wdag) -> int:
    return H.depth()


def stable_subsets(dep: DependencyRelation, universe: Iterable[int], max_size: int | None = None):
    """All stable subsets of `universe` as sorted tuples, ∅ first."""
    items = sorted(set(universe))
    cap = len(items) if max_size is None else max_size
    out = []

    def walk(i, chosen):
        out.append(tuple(chosen))
        if len(chosen) == cap:
            return
        for j in range(i, len(items)):
            f = items[j]
            if all(not dep.related(f, g) for g in chosen):
                chosen.append(f)
                walk(j + 1, chosen)
                chosen.pop()

    walk(0, [])
    return out


class SinkLayers:
    """Recursion over 𝔚(I): removing every sink of H ∈ 𝔚(I) leaves a wdag in
    𝔚(J) for a stable J inside the closed neighbourhood of I, and conversely
    every such pair (J, G') rebuilds a unique H. All enumeration and weighted
    sums below are driven by this correspondence.
    """

    def __init__(self, dep: DependencyRelation):
        self.dep = dep
        self._layers = {}

    def below(self, I: tuple) -> list:
        got = self._layers.get(I)
        if got is None:
            hood = set()
            for f in I:
                hood |= self.dep.closed_neighborhood(f)
            got = stable_subsets(self.dep, hood)
            self._layers[I] = got
        return got


def _normalize_sinks(dep: DependencyRelation, I: Iterable[int]) -> tuple:
    I = tuple(sorted(set(I)))
    if not dep.is_stable(I):
        raise ValueError(f"sink set {I} is not stable")
    return I


def enumerate_wdags(dep: DependencyRelation, I: Iterable[int], max_nodes: int) -> Iterator[Wdag]:
    """Every wdag with sink labels exactly I and at most max_nodes nodes,
    one per isomorphism class, ordered by node count."""
    I = _normalize_sinks(dep, I)
    layers = SinkLayers(dep)
    memo = {}

    def seqs(J, k):
        key = (J, k)
        if key in memo:
            return memo[key]
        if not J:
            res = [()] if k == 0 else []
        elif k < len(J):
            res = []
        elif k == len(J):
            res = [J]
        else:
            res = [body + J for K in layers.below(J) if K for body in seqs(K, k - len(J))]
        memo[key] = res
        return res

    for k in range(max_nodes + 1):
        for seq in seqs(I, k):
            yield Wdag.from_sequence(seq, dep)


def level_sums(dep: DependencyRelation, I: Iterable[int], max_nodes: int, weights: Sequence) -> list:
    """s_k = Σ_{H ∈ 𝔚(I), |H| = k} ∏ weights[L(v)] for k = 0..max_nodes."""
    I = _normalize_sinks(dep, I)
    table = LevelTable(dep, weights)
    return [table.get(I, k) for k in range(max_nodes + 1)]


class LevelTable:
    """Memoized weighted counts of 𝔚(I) by node count (and optionally depth)."""

    def __init__(self, dep: DependencyRelation, weights: Sequence, layers: SinkLayers | None = None):
        self.dep = dep
        self.weights = tuple(Fraction(w) for w in weights)
        self.layers = layers or SinkLayers(dep)
        self._memo = {}
        self._depth_memo = {}

    def set_weight(self, I: tuple) -> Fraction:
        out = ONE
        for f in I:
            out *= self.weights[f]
        return out

    def get(self, I: tuple, k: int) -> Fraction:
        key = (I, k)
        got = self._memo.get(key)
        if got is not None:
            return got
        if not I:
            val = ONE if k == 0 else ZERO
        elif k < len(I):
            val = ZERO
        elif k == len(I):
            val = self.set_weight(I)
        else:
            w = self.set_weight(I)
            if w == 0:
                val = ZERO
            else:
                val = w * sum((self.get(J, k - len(I)) for J in self.layers.below(I) if J), ZERO)
        self._memo[key] = val
        return val

    def get_depth(self, I: tuple, k: int, d: int) -> Fraction:
        """Weighted count of H ∈ 𝔚(I) with k nodes and depth exactly d."""
        key = (I, k, d)
        got = self._depth_memo.get(key)
        if got is not None:
            return got
        if not I:
            val = ONE if (k == 0 and d == 0) else ZERO
        elif k < len(I) or d < 1 or d > k:
            val = ZERO
        elif d == 1:
            val = self.set_weight(I) if k == len(I) else ZERO
        else:
            w = self.set_weight(I)
            if w == 0:
                val = ZERO
            else:
                val = w * sum(
                    (self.get_depth(J, k - len(I), d - 1) for J in self.layers.below(I) if J),
                    ZERO,
                )
        self._depth_memo[key] = val
        return val


class RowTable:
    """Memoized row vectors Σ_{H ∈ 𝔚(I), |H| = k} μ^T A_H.

    Sinks are the last factors of A_H, so the vector for I is the summed
    vector of the layer below, right-multiplied by the matrices of I.
    """

    def __init__(self, sys: OracleSystem, layers: SinkLayers | None = None):
        self.sys = sys
        self.layers = layers or SinkLayers(sys.dep)
        self._memo = {}

    def get(self, I: tuple, k: int) -> dict:
        key = (I, k)
        got = self._memo.get(key)
        if got is not None:
            return got
        if not I:
            val = self.sys.mu_vector() if k == 0 else {}
        elif k < len(I):
            val = {}
        else:
            acc = {}
            for J in self.layers.below(I):
                if k == len(I) and J:
                    continue
                if k > len(I) and not J:
                    continue
                for s, x in self.get(J, k - len(I)).items():
                    acc[s] = acc.get(s, ZERO) + x
            acc = {s: x for s, x in acc.items() if x}
            for f in I:
                acc = self.sys.matrix(f).left(acc)
            val = acc
        self._memo[key] = val
        return val

    def project(self, I: tuple, k: int, event: Event) -> Fraction:
        row = self.get(I, k)
        return sum((row.get(s, ZERO) for s in event.members), ZERO)

