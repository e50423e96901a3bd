"""LLL-type convergence criteria, truncated wdag weight sums and round bounds.

Every verdict is decided in exact rational arithmetic. The constant e
enters through rational brackets E_LOWER < e < E_UPPER that are tightened
on demand, so a comparison against e is never decided by rounding.

Truncated sums follow one tail policy, shared by Ψ, Ψ̄, Φ and W_ε: level k
holds the weight of all wdags with k nodes. The estimate is converged when
the last level is zero (every larger wdag contains a zero-weight one), or
when the last three levels shrink by a factor of at least 2 twice in a row;
the tail is then bounded geometrically by the last ratio r as s_K·r/(1−r).
The geometric tail is a heuristic, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .matrix import ONE, ZERO
from .oracle import OracleSystem
from .space import as_fraction, format_fraction
from .wdag import (
    LevelTable,
    PropertyViolation,
    Rule,
    SinkLayers,
    Wdag,
    enumerate_wdags,
    stable_subsets,
    weight,
)

MAX_NEIGHBORHOOD = 20
HALF = Fraction(1, 2)


# the constant e ---------------------------------------------------------------


def e_bracket(terms: int) -> tuple:
    """(lower, upper) with lower < e < upper from the first `terms` + 1
    terms of Σ 1/k! and the remainder bound 1/(terms!·terms)."""
    lower = ZERO
    fact = 1
    for k in range(terms + 1):
        if k:
            fact *= k
        lower += Fraction(1, fact)
    return lower, lower + Fraction(1, fact * terms)


E_LOWER, E_UPPER = e_bracket(30)


def e_times_at_most_one(x: Fraction) -> bool:
    """Decide e·x ≤ 1 exactly for rational x ≥ 0.

    Equality is impossible for rational x since e is irrational, so
    refining the bracket always terminates.
    """
    if x <= 0:
        return True
    terms = 10
    while True:
        lo, hi = e_bracket(terms)
        if hi * x <= 1:
            return True
        if lo * x > 1:
            return False
        terms *= 2


# reports -----------------------------------------------------------------------


@dataclass
class CriterionReport:
    criterion: str
    charges: tuple
    bounds: tuple  # certified upper bound on Ψ(f) per flaw, or None if unsatisfied
    satisfied: bool
    witness: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)  # (flaw or clique id, message)

    def to_csv(self) -> str:
        lines = ["flaw,gamma,psi_bound,satisfied"]
        for f, (g, b) in enumerate(zip(self.charges, self.bounds)):
            bound = format_fraction(b) if b is not None else ""
            ok = not any(fid == f for fid, _ in self.failures)
            lines.append(f"{f},{format_fraction(g)},{bound},{int(ok and self.satisfied)}")
        return "\n".join(lines) + "\n"


def _per_flaw(sys: OracleSystem, values, what: str) -> tuple:
    if isinstance(values, Mapping):
        missing = [f for f in range(sys.n_flaws) if f not in values]
        if missing:
            raise ValueError(f"{what} has no value for flaws {missing}")
        return tuple(as_fraction(values[f]) for f in range(sys.n_flaws))
    values = list(values)
    if len(values) != sys.n_flaws:
        raise ValueError(f"{what} needs {sys.n_flaws} values, got {len(values)}")
    return tuple(as_fraction(v) for v in values)


def _report(name, sys, bounds, failures, witness) -> CriterionReport:
    ok = not failures
    return CriterionReport(
        name,
        sys.charges(),
        tuple(bounds) if ok else (None,) * sys.n_flaws,
        ok,
        witness,
        failures,
    )


def check_symmetric(sys: OracleSystem, p, d: int) -> CriterionReport:
    """γ_f ≤ p, |Γ̄(f)| ≤ d and e·p·d ≤ 1 give Ψ(f) ≤ e·γ_f."""
    p = as_fraction(p)
    gam = sys.charges()
    failures = []
    for f in range(sys.n_flaws):
        if gam[f] > p:
            failures.append((f, f"charge {gam[f]} exceeds p = {p}"))
        hood = len(sys.dep.closed_neighborhood(f))
        if hood > d:
            failures.append((f, f"closed neighbourhood has {hood} > d = {d} flaws"))
    if not e_times_at_most_one(p * d):
        failures.append((-1, f"e·p·d > 1 for p = {p}, d = {d}"))
    return _report("symmetric", sys, [E_UPPER * g for g in gam], failures, {"p": p, "d": d})


def symmetric_parameters(sys: OracleSystem) -> tuple:
    """Smallest admissible (p, d): the largest charge and neighbourhood."""
    if not sys.n_flaws:
        return ZERO, 0
    p = max(sys.charges())
    d = max(len(sys.dep.closed_neighborhood(f)) for f in range(sys.n_flaws))
    return p, d


def check_neighborhood(sys: OracleSystem) -> CriterionReport:
    gam = sys.charges()
    failures = []
    for f in range(sys.n_flaws):
        total = sum((gam[g] for g in sys.dep.closed_neighborhood(f)), ZERO)
        if total > Fraction(1, 4):
            failures.append((f, f"neighbourhood charge {total} > 1/4"))
    return _report("neighborhood", sys, [4 * g for g in gam], failures, {})


def check_asymmetric(sys: OracleSystem, x) -> CriterionReport:
    x = _per_flaw(sys, x, "x")
    for f, v in enumerate(x):
        if not (0 <= v < 1):
            raise ValueError(f"x({f}) = {v} outside [0, 1)")
    gam = sys.charges()
    failures = []
    for f in range(sys.n_flaws):
        rhs = x[f]
        for g in sys.dep.neighborhood(f):
            rhs *= 1 - x[g]
        if gam[f] > rhs:
            failures.append((f, f"charge {gam[f]} > x(f)·∏(1 − x(g)) = {rhs}"))
    bounds = [v / (1 - v) for v in x]
    return _report("asymmetric", sys, bounds, failures, {"x": x})


def stable_weight_sum(sys: OracleSystem, universe, values: Sequence[Fraction]) -> Fraction:
    """Σ over stable I ⊆ universe of ∏_{g∈I} values[g]."""
    total = ZERO
    for I in stable_subsets(sys.dep, universe):
        term = ONE
        for g in I:
            term *= values[g]
        total += term
    return total


def check_cluster_expansion(sys: OracleSystem, eta) -> CriterionReport:
    eta = _per_flaw(sys, eta, "eta")
    if any(v < 0 for v in eta):
        raise ValueError("eta must be non-negative")
    gam = sys.charges()
    failures = []
    for f in range(sys.n_flaws):
        hood = sys.dep.closed_neighborhood(f)
        if len(hood) > MAX_NEIGHBORHOOD:
            raise ValueError(
                f"flaw {f} has {len(hood)} related flaws; stable-set enumeration is capped at {MAX_NEIGHBORHOOD}"
            )
        rhs = gam[f] * stable_weight_sum(sys, hood, eta)
        if eta[f] < rhs:
            failures.append((f, f"eta(f) = {eta[f]} < γ_f·Σ∏η = {rhs}"))
    return _report("cluster-expansion", sys, eta, failures, {"eta": eta})


def clique_cover_problems(sys: OracleSystem, cliques) -> list:
    """Pairs (f, g) where 'related' and 'share a clique' disagree."""
    member = [set() for _ in range(sys.n_flaws)]
    for v, clique in enumerate(cliques):
        for f in clique:
            if not 0 <= f < sys.n_flaws:
                raise ValueError(f"clique {v} mentions unknown flaw {f}")
            member[f].add(v)
    bad = []
    for f in range(sys.n_flaws):
        for g in range(f, sys.n_flaws):
            shared = bool(member[f] & member[g])
            if shared != sys.dep.related(f, g):
                bad.append((f, g))
    return bad


def check_clique_bound(sys: OracleSystem, cliques, zeta) -> CriterionReport:
    cliques = [tuple(sorted(set(c))) for c in cliques]
    zeta = [as_fraction(z) for z in zeta]
    if len(zeta) != len(cliques):
        raise ValueError("zeta needs one value per clique")
    if any(z < 0 for z in zeta):
        raise ValueError("zeta must be non-negative")
    bad = clique_cover_problems(sys, cliques)
    if bad:
        raise ValueError(f"cliques do not cover the relation exactly; first mismatches {bad[:5]}")
    gam = sys.charges()
    containing = [[v for v, c in enumerate(cliques) if f in c] for f in range(sys.n_flaws)]
    prod = []
    for f in range(sys.n_flaws):
        out = ONE
        for v in containing[f]:
            out *= zeta[v]
        prod.append(out)
    failures = []
    for v, clique in enumerate(cliques):
        rhs = ONE + sum((gam[f] * prod[f] for f in clique), ZERO)
        if zeta[v] < rhs:
            failures.append((v, f"zeta(clique {v}) = {zeta[v]} < {rhs}"))
    report = _report("clique", sys, prod, failures, {"cliques": cliques, "zeta": tuple(zeta)})
    return report


def runtime_bound(report: CriterionReport) -> Fraction:
    """Upper bound on the expected number of resampling steps."""
    if not report.satisfied:
        raise ValueError(f"{report.criterion} criterion is not satisfied")
    gam = report.charges
    name = report.criterion
    if name == "symmetric":
        return E_UPPER * sum(gam, ZERO)
    if name == "neighborhood":
        return 4 * sum(gam, ZERO)
    if name == "asymmetric":
        return sum((x / (1 - x) for x in report.witness["x"]), ZERO)
    if name == "cluster-expansion":
        return sum(report.witness["eta"], ZERO)
    if name == "clique":
        return sum(report.witness["zeta"], ZERO)
    raise ValueError(f"unknown criterion {name!r}")


def runtime_bounds(reports: Sequence[CriterionReport]) -> dict:
    return {r.criterion: runtime_bound(r) for r in reports if r.satisfied}


# truncated sums --------------------------------------------------------------------


@dataclass(frozen=True)
class PsiEstimate:
    value: Fraction  # sum over wdags with at most max_nodes nodes
    levels: tuple
    max_nodes: int
    converged: bool
    tail: Fraction | None

    @property
    def upper(self) -> Fraction | None:
        """Truncated value plus tail bound; None when nonconvergent."""
        return self.value + self.tail if self.converged else None

    @property
    def last_ratio(self) -> Fraction | None:
        lv = self.levels
        if len(lv) >= 2 and lv[-2]:
            return lv[-1] / lv[-2]
        return None

    def __add__(self, other: "PsiEstimate") -> "PsiEstimate":
        levels = tuple(a + b for a, b in zip(self.levels, other.levels))
        conv = self.converged and other.converged
        tail = self.tail + other.tail if conv else None
        return PsiEstimate(self.value + other.value, levels, self.max_nodes, conv, tail)

    def scaled(self, c: Fraction) -> "PsiEstimate":
        tail = self.tail * c if self.converged else None
        return PsiEstimate(self.value * c, tuple(x * c for x in self.levels), self.max_nodes, self.converged, tail)


def zero_estimate(max_nodes: int) -> PsiEstimate:
    return PsiEstimate(ZERO, (ZERO,) * (max_nodes + 1), max_nodes, True, ZERO)


def tail_policy(levels: Sequence[Fraction], min_size: int, decay: Fraction = HALF) -> tuple:
    """(converged, tail) for level sums s_0..s_K of wdags whose sink set
    has `min_size` elements; `decay` is the largest accepted level ratio."""
    K = len(levels) - 1
    if K >= min_size and levels[K] == 0:
        return True, ZERO
    if K >= 2 and levels[K - 1] and levels[K - 2]:
        r1 = levels[K - 1] / levels[K - 2]
        r2 = levels[K] / levels[K - 1]
        if r1 <= decay and r2 <= decay:
            return True, levels[K] * r2 / (1 - r2)
    return False, None


def estimate_from_levels(levels: Sequence[Fraction], min_size: int, decay: Fraction = HALF) -> PsiEstimate:
    conv, tail = tail_policy(levels, min_size, decay)
    return PsiEstimate(sum(levels, ZERO), tuple(levels), len(levels) - 1, conv, tail)


class PsiCalculator:
    """Shared memo tables for Ψ-type sums over one system and weighting.

    `weights` defaults to the charges; W_ε uses (1+ε)·γ. `decay` is the
    ratio threshold of the tail policy.
    """

    def __init__(
        self,
        sys: OracleSystem,
        max_nodes: int,
        weights: Sequence | None = None,
        decay: Fraction = HALF,
    ):
        if not (0 < decay < 1):
            raise ValueError("decay must lie in (0, 1)")
        self.decay = Fraction(decay)
        if max_nodes < 0:
            raise ValueError("max_nodes must be non-negative")
        self.sys = sys
        self.max_nodes = max_nodes
        self.weights = tuple(Fraction(w) for w in (weights if weights is not None else sys.charges()))
        self.layers = SinkLayers(sys.dep)
        self.table = LevelTable(sys.dep, self.weights, self.layers)
        self._psi = {}

    def _sinks(self, I) -> tuple:
        I = tuple(sorted(set(I)))
        if any(not 0 <= f < self.sys.n_flaws for f in I):
            raise ValueError(f"sink set {I} mentions unknown flaws")
        if not self.sys.dep.is_stable(I):
            raise ValueError(f"sink set {I} is not stable")
        return I

    def psi(self, I) -> PsiEstimate:
        I = self._sinks(I)
        got = self._psi.get(I)
        if got is None:
            levels = [self.table.get(I, k) for k in range(self.max_nodes + 1)]
            got = self._psi[I] = estimate_from_levels(levels, len(I), self.decay)
        return got

    def psi_bar(self, I) -> PsiEstimate:
        """Σ over stable J ⊆ I of Ψ(J); I itself need not be stable."""
        total = zero_estimate(self.max_nodes)
        for J in stable_subsets(self.sys.dep, I):
            total = total + self.psi(J)
        return total

    def depth_levels(self, I, max_depth: int) -> list:
        """rows[d][k]: weight of H ∈ 𝔚(I) with k nodes and depth d."""
        I = self._sinks(I)
        return [
            [self.table.get_depth(I, k, d) for k in range(self.max_nodes + 1)]
            for d in range(max_depth + 1)
        ]

    def check_subadditivity(self, I) -> None:
        """Ψ(I) ≤ ∏Ψ(f) and Ψ̄(I) ≤ ∏(1+Ψ(f)) on the truncated values
        (truncation preserves both since the parts of H are no larger than H)."""
        I = self._sinks(I)
        singles = [self.psi((f,)).value for f in I]
        prod = ONE
        prod_bar = ONE
        for v in singles:
            prod *= v
            prod_bar *= 1 + v
        got = self.psi(I).value
        if got > prod:
            raise PropertyViolation(f"Ψ({I}) = {got} exceeds ∏Ψ(f) = {prod}")
        got_bar = self.psi_bar(I).value
        if got_bar > prod_bar:
            raise PropertyViolation(f"Ψ̄({I}) = {got_bar} exceeds ∏(1+Ψ(f)) = {prod_bar}")


def psi(sys: OracleSystem, I, max_nodes: int, check: bool = True, decay: Fraction = HALF) -> PsiEstimate:
    calc = PsiCalculator(sys, max_nodes, decay=decay)
    out = calc.psi(I)
    if check:
        calc.check_subadditivity(I)
    return out


def psi_bar(sys: OracleSystem, I, max_nodes: int, decay: Fraction = HALF) -> PsiEstimate:
    return PsiCalculator(sys, max_nodes, decay=decay).psi_bar(I)


# witness reachability for Φ ---------------------------------------------------------


def _dominated(nxt: dict, vec: dict) -> bool:
    return all(x <= vec.get(s, ZERO) for s, x in nxt.items())


def witness_producible(sys: OracleSystem, rule: Rule, H: Wdag) -> bool:
    """Is there a topological order of H which, fed to the backward witness
    construction, keeps every node?

    Any witness is reproduced by the subsequence of steps that added a node
    (the decisions only look at the graph built so far), and that
    subsequence is a topological order of the witness. So failing this test
    excludes H from the producible family; passing it ignores state
    reachability and may over-include.
    """
    if rule is Rule.Q2:
        return True
    if H.size == 0:
        return False
    if len(H.sinks()) != 1:
        return False
    succ = H.successors()
    dep = sys.dep
    memo = {}

    def walk(placed: frozenset, sources: frozenset, vec: dict) -> bool:
        if len(placed) == H.size:
            return True
        key = (placed, tuple(sorted(vec.items())))
        if key in memo:
            return memo[key]
        labels = {H.labels[u] for u in sources}
        ok = False
        for v in range(H.size):
            if v in placed or not all(w in placed for w in succ[v]):
                continue
            f = H.labels[v]
            nxt = sys.matrix(f).apply(vec)
            if rule is Rule.Q0:
                keep = f in labels
            else:
                keep = any(dep.related(f, g) for g in labels)
            if not keep and _dominated(nxt, vec):
                continue
            new_sources = frozenset(u for u in sources if u not in succ[v]) | {v}
            if walk(placed | {v}, new_sources, nxt):
                ok = True
                break
        memo[key] = ok
        return ok

    (sink,) = H.sinks()
    start = {s: ONE for s in sys.flaws[H.labels[sink]].support}
    return walk(frozenset([sink]), frozenset([sink]), start)


def phi(
    sys: OracleSystem, rule, f: int, max_nodes: int, tighten: bool = False, decay: Fraction = HALF
) -> PsiEstimate:
    """Upper value for Φ_Q(f) = Σ w(H) over producible single-sink wdags.

    Without `tighten` this is Ψ(f). With it, the truncated part only counts
    wdags passing `witness_producible`; the tail stays the Ψ(f) tail, which
    dominates the filtered tail.
    """
    rule = Rule.parse(rule) if isinstance(rule, str) else rule
    base = PsiCalculator(sys, max_nodes, decay=decay).psi((f,))
    if not tighten:
        return base
    levels = [ZERO] * (max_nodes + 1)
    for H in enumerate_wdags(sys.dep, (f,), max_nodes):
        if witness_producible(sys, rule, H):
            levels[H.size] += weight(sys, H)
    return PsiEstimate(sum(levels, ZERO), tuple(levels), max_nodes, base.converged, base.tail)


# inflated sums and rounds --------------------------------------------------------------


class NonconvergentError(ValueError):
    pass


def inflated_weights(sys: OracleSystem, eps) -> tuple:
    eps = as_fraction(eps)
    return tuple((1 + eps) * g for g in sys.charges())


def w_epsilon(sys: OracleSystem, eps, max_nodes: int, decay: Fraction = HALF) -> PsiEstimate:
    """Σ_f Ψ_ε(f) with inflated charges (1+ε)γ, an upper value for W_ε."""
    eps = as_fraction(eps)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    calc = PsiCalculator(sys, max_nodes, inflated_weights(sys, eps), decay)
    total = zero_estimate(max_nodes)
    for f in range(sys.n_flaws):
        total = total + calc.psi((f,))
    if not total.converged:
        raise NonconvergentError(
            f"W_eps with eps = {eps} did not converge by {max_nodes} nodes (last ratio {total.last_ratio})"
        )
    return total


def deep_weight(sys: OracleSystem, t: int, max_nodes: int, decay: Fraction = HALF) -> Fraction | None:
    """Upper value for Σ w(H) over single-sink wdags of depth ≥ t.

    Exact depth-resolved sums up to max_nodes nodes, plus the whole Ψ tail
    beyond. None when Ψ does not converge.
    """
    calc = PsiCalculator(sys, max_nodes, decay=decay)
    total = ZERO
    for f in range(sys.n_flaws):
        est = calc.psi((f,))
        if not est.converged:
            return None
        shallow = ZERO
        for d in range(1, min(t, max_nodes + 1)):
            for k in range(max_nodes + 1):
                shallow += calc.table.get_depth((f,), k, d)
        total += est.value - shallow + est.tail
    return total


@dataclass(frozen=True)
class RoundBound:
    t: int
    w_eps: Fraction
    eps: Fraction
    delta: Fraction

    @property
    def rounds(self) -> int:
        return 2 * self.t


def round_bound(sys: OracleSystem, eps, delta, max_nodes: int, decay: Fraction = HALF) -> RoundBound:
    """Smallest t ≥ 1 with (1+ε)^{-t}·W_ε/t ≤ δ; more than 2t rounds then
    happen with probability at most δ."""
    eps, delta = as_fraction(eps), as_fraction(delta)
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    W = w_epsilon(sys, eps, max_nodes, decay).upper
    t = 1
    scale = 1 / (1 + eps)
    factor = scale
    while factor * W / t > delta:
        t += 1
        factor *= scale
    return RoundBound(t, W, eps, delta)

