"""Bounds on the probability that an event ever occurs during the search.

Two families of bounds are computed. The orderable-set bounds sum
μ^T A_H e_E over wdags whose sink set can be ordered against E, then relax
to charges. The minimal-pair bounds (for injective oracles) enumerate pairs
(H, σ) with no strict prefix of H leading back from E to σ.

Every bound is a `BoundValue`: an exact truncated sum over wdags with at
most max_nodes nodes, plus a tail derived from the Ψ tails of the sink
sets involved (see criteria.tail_policy). The same tail enters each member
of a chain of bounds, so the chain inequalities hold for both the
truncated and the upper values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .criteria import (
    E_UPPER,
    CriterionReport,
    PsiCalculator,
)
from .matrix import ONE, ZERO, vec_leq
from .oracle import Flaw, OracleSystem, check_t_commutative, is_injective
from .search import (
    Frequency,
    PrioritizedEvent,
    Strategy,
    map_trials,
    run_sequential,
)
from .space import Event
from .wdag import (
    PropertyViolation,
    RowTable,
    Rule,
    Wdag,
    appearance_bound,
    apply_right,
    canonicalize,
    enumerate_wdags,
    upsets,
    weight,
)


def _as_event(sys: OracleSystem, E) -> Event:
    if isinstance(E, Event):
        if E.size != sys.n_states:
            raise ValueError("event size does not match the state space")
        return E
    return sys.event(E)


def _indicator(E: Event) -> dict:
    return {s: ONE for s in E.members}


@dataclass(frozen=True)
class BoundValue:
    value: Fraction
    tail: Fraction | None  # None: some Ψ tail did not converge

    @property
    def converged(self) -> bool:
        return self.tail is not None

    @property
    def upper(self) -> Fraction | None:
        return self.value + self.tail if self.tail is not None else None

    def __float__(self):
        return float(self.upper if self.converged else self.value)


def _tail_sum(terms: Iterable) -> Fraction | None:
    total = ZERO
    for t in terms:
        if t is None:
            return None
        total += t
    return total


# cause sets --------------------------------------------------------------------


@dataclass(frozen=True)
class CauseSet:
    flaws: frozenset
    per_state: dict  # σ ∈ E -> frozenset of flaws reaching σ from outside E


def cause_set(sys: OracleSystem, E) -> CauseSet:
    E = _as_event(sys, E)
    per = {s: set() for s in E.members}
    for fl in sys.flaws:
        for s in fl.support:
            if s in E.members:
                continue
            for t in fl.matrix.rows[s]:
                if t in E.members:
                    per[t].add(fl.id)
    frozen = {s: frozenset(v) for s, v in per.items()}
    union = frozenset().union(*frozen.values()) if frozen else frozenset()
    return CauseSet(union, frozen)


# orderable sets -----------------------------------------------------------------


@dataclass
class OrderableFamily:
    sets: list  # sorted tuples, ∅ first
    orderings: dict  # set -> one enumeration g_1..g_r satisfying the ordering condition

    def __contains__(self, I) -> bool:
        return tuple(sorted(I)) in self.orderings

    def __len__(self):
        return len(self.sets)


def orderable_sets(sys: OracleSystem, E, max_size: int | None = None) -> OrderableFamily:
    """Stable I ⊆ Γ̃(E) with an enumeration g_1..g_r such that for every i
    A_{g_i}⋯A_{g_r} e_E is not dominated by A_{g_{i+1}}⋯A_{g_r} e_E.

    Built from the back of the enumeration: a set is orderable iff removing
    its first element leaves an orderable set whose vector the element
    escapes. Vectors are tracked per set, so no commutativity is assumed.
    Candidates are tried in flaw-id order.
    """
    E = _as_event(sys, E)
    causes = sorted(cause_set(sys, E).flaws)
    cap = len(causes) if max_size is None else max_size
    dep = sys.dep
    start = _indicator(E)
    frontier = {(): [((), start)]}
    orderings = {(): ()}
    for _ in range(cap):
        nxt = {}
        for I, entries in frontier.items():
            for g in causes:
                if g in I or any(dep.related(g, h) for h in I):
                    continue
                J = tuple(sorted(I + (g,)))
                for order, vec in entries:
                    new = sys.matrix(g).apply(vec)
                    if vec_leq(new, vec):
                        continue
                    seen = nxt.setdefault(J, [])
                    key = tuple(sorted(new.items()))
                    if all(tuple(sorted(v.items())) != key for _, v in seen):
                        seen.append(((g,) + order, new))
                    orderings.setdefault(J, (g,) + order)
        if not nxt:
            break
        frontier = nxt
    sets = sorted(orderings, key=lambda I: (len(I), I))
    return OrderableFamily(sets, orderings)


def _require_t_commutative(sys: OracleSystem) -> None:
    verdict = sys.cache.get("t_commutative")
    if verdict is None:
        verdict = sys.cache["t_commutative"] = not check_t_commutative(sys)
    if not verdict:
        raise PropertyViolation("this bound needs a T-commutative system")


# orderable-set bounds ----------------------------------------------------------------


@dataclass
class OrderableBounds:
    mu_E: Fraction
    family: OrderableFamily
    exact: BoundValue
    orderable_psi: BoundValue
    cause_psi_bar: BoundValue

    def check_chain(self) -> None:
        """orderable_exact ≤ orderable_psi ≤ cause_psi_bar on truncated values, and on upper values
        when all converge."""
        a, b, c = self.exact, self.orderable_psi, self.cause_psi_bar
        if not (a.value <= b.value <= c.value):
            raise PropertyViolation(f"truncated chain broken: {a.value}, {b.value}, {c.value}")
        if a.converged and b.converged and c.converged and not (a.upper <= b.upper <= c.upper):
            raise PropertyViolation(f"upper chain broken: {a.upper}, {b.upper}, {c.upper}")


def orderable_bounds(
    sys: OracleSystem,
    E,
    max_nodes: int,
    calc: PsiCalculator | None = None,
    table: RowTable | None = None,
) -> OrderableBounds:
    """Exact orderable-set sum and its two charge relaxations, with shared tails."""
    E = _as_event(sys, E)
    _require_t_commutative(sys)
    calc = calc or PsiCalculator(sys, max_nodes)
    table = table or RowTable(sys, calc.layers)
    mu_E = sys.measure_of(E.members)
    family = orderable_sets(sys, E)
    exact = ZERO
    relaxed = ZERO
    tails = []
    for I in family.sets:
        for k in range(max_nodes + 1):
            exact += table.project(I, k, E)
        est = calc.psi(I)
        relaxed += est.value
        tails.append(est.tail)
    tail = _tail_sum(tails)
    tail = mu_E * tail if tail is not None else None
    everything = calc.psi_bar(cause_set(sys, E).flaws)
    cause_tail = mu_E * everything.tail if everything.converged else None
    return OrderableBounds(
        mu_E,
        family,
        BoundValue(exact, tail),
        BoundValue(mu_E * relaxed, tail),
        BoundValue(mu_E * everything.value, cause_tail),
    )


def bound_orderable_exact(sys: OracleSystem, E, max_nodes: int) -> BoundValue:
    return orderable_bounds(sys, E, max_nodes).exact


def bound_orderable_psi(sys: OracleSystem, E, max_nodes: int) -> BoundValue:
    return orderable_bounds(sys, E, max_nodes).orderable_psi


def bound_cause_psi_bar(sys: OracleSystem, E, max_nodes: int) -> BoundValue:
    E = _as_event(sys, E)
    calc = PsiCalculator(sys, max_nodes)
    est = calc.psi_bar(cause_set(sys, E).flaws)
    mu_E = sys.measure_of(E.members)
    return BoundValue(mu_E * est.value, mu_E * est.tail if est.converged else None)


# closed forms under LLL criteria ----------------------------------------------------


def exp_upper(x: Fraction, terms: int = 30) -> Fraction:
    """A rational upper bound on e^x for x ≥ 0.

    Writes e^x = (e^{x/m})^m with x/m ≤ 1 and bounds e^y for y ≤ 1 by its
    Taylor polynomial plus 3·y^{N+1}/(N+1)!.
    """
    x = Fraction(x)
    if x < 0:
        raise ValueError("exp_upper expects x ≥ 0")
    if x == 0:
        return ONE
    m = max(1, -(-x.numerator // x.denominator))
    y = x / m
    total = ZERO
    term = ONE
    for k in range(terms + 1):
        if k:
            term = term * y / k
        total += term
    total += 3 * term * y / (terms + 1)
    return total**m


def bound_from_criterion(sys: OracleSystem, E, report: CriterionReport, max_size: int | None = None) -> Fraction:
    """Closed-form bound on P(E) implied by a satisfied criterion report."""
    if not report.satisfied:
        raise ValueError(f"{report.criterion} criterion is not satisfied")
    E = _as_event(sys, E)
    mu_E = sys.measure_of(E.members)
    causes = sorted(cause_set(sys, E).flaws)
    gam = sys.charges()
    name = report.criterion
    if name == "symmetric":
        return mu_E * exp_upper(E_UPPER * len(causes) * report.witness["p"])
    if name == "neighborhood":
        return mu_E * exp_upper(4 * sum((gam[f] for f in causes), ZERO))
    if name == "asymmetric":
        out = mu_E
        for f in causes:
            out /= 1 - report.witness["x"][f]
        return out
    if name == "cluster-expansion":
        eta = report.witness["eta"]
        total = ZERO
        for I in orderable_sets(sys, E, max_size).sets:
            term = ONE
            for g in I:
                term *= eta[g]
            total += term
        return mu_E * total
    raise ValueError(f"no closed-form distribution bound for criterion {name!r}")


# minimal pairs (injective oracles) --------------------------------------------------


@dataclass
class MinimalPair:
    wdag: Wdag
    state: int
    contribution: Fraction  # μ^T A_H e_σ
    weight: Fraction  # w(H)


@dataclass
class MinimalPairFamily:
    pairs: list
    max_nodes: int
    causes: CauseSet


def _require_injective(sys: OracleSystem) -> None:
    verdict = sys.cache.get("injective")
    if verdict is None:
        verdict = sys.cache["injective"] = is_injective(sys)
    if not verdict:
        raise PropertyViolation("minimal-pair bounds need an injective oracle")


def is_minimal_pair(sys: OracleSystem, E: Event, H: Wdag, sigma: int) -> bool:
    """σ ∈ E and e_E^T A_U e_σ = 0 for every nonempty successor-closed U."""
    if sigma not in E.members:
        return False
    e_sigma = {sigma: ONE}
    for U in upsets(H):
        if not U:
            continue
        col = apply_right(sys, H.subgraph(U), e_sigma)
        if any(s in E.members for s in col):
            return False
    return True


def minimal_pairs(sys: OracleSystem, E, max_nodes: int) -> MinimalPairFamily:
    """All (H, σ) in the minimal-pair family with |H| ≤ max_nodes and a
    positive contribution μ^T A_H e_σ.

    The family is closed under removing a source node, and a zero
    contribution stays zero when sources are added, so a breadth-first
    search that adds sources and drops zero or non-member pairs finds every
    member with positive contribution. When a source v is added to a member
    H, only the successor-closed sets containing v need checking; they are
    v plus a successor-closed set of H that holds every successor of v.
    """
    E = _as_event(sys, E)
    _require_injective(sys)
    mu = sys.mu_vector()
    dep = sys.dep
    members = E.members
    pairs = []
    for sigma in sorted(members):
        if not mu.get(sigma):
            continue
        empty = Wdag.empty()
        pairs.append(MinimalPair(empty, sigma, mu[sigma], ONE))
        # frontier entries: (H, {successor-closed node set: A_U e_σ})
        frontier = [(empty, {frozenset(): {sigma: ONE}})]
        seen = {canonicalize(empty)}
        for _ in range(max_nodes):
            nxt = []
            for H, cols in frontier:
                for g in range(sys.n_flaws):
                    H2 = H.add_source(g, dep)
                    key = canonicalize(H2)
                    if key in seen:
                        continue
                    seen.add(key)
                    below = frozenset(v - 1 for v in range(1, H2.size) if 0 in H2.preds[v])
                    mat = sys.matrix(g)
                    fresh = {}
                    ok = True
                    for U, col in cols.items():
                        if not below <= U:
                            continue
                        new = mat.apply(col)
                        if not members.isdisjoint(new):
                            ok = False
                            break
                        fresh[frozenset(u + 1 for u in U) | {0}] = new
                    if not ok:
                        continue
                    full = fresh[frozenset(range(H2.size))]
                    contrib = sum((mu.get(s, ZERO) * x for s, x in full.items()), ZERO)
                    if not contrib:
                        continue
                    cols2 = {frozenset(u + 1 for u in U): col for U, col in cols.items()}
                    cols2.update(fresh)
                    pairs.append(MinimalPair(H2, sigma, contrib, weight(sys, H2)))
                    nxt.append((H2, cols2))
            frontier = nxt
            if not frontier:
                break
    return MinimalPairFamily(pairs, max_nodes, cause_set(sys, E))


@dataclass
class MinimalPairBounds:
    mu_E: Fraction
    family: MinimalPairFamily
    exact: BoundValue
    weighted: BoundValue  # Σ μ(σ) w(H)
    per_state: BoundValue  # Σ_σ μ(σ) Ψ̄(Γ̃(E,σ))
    worst_state: BoundValue  # μ(E) max_σ Ψ̄(Γ̃(E,σ))

    def check_chain(self) -> None:
        chain = [self.exact, self.weighted, self.per_state, self.worst_state]
        vals = [b.value for b in chain]
        if vals != sorted(vals):
            raise PropertyViolation(f"truncated chain broken: {vals}")
        if all(b.converged for b in chain):
            ups = [b.upper for b in chain]
            if ups != sorted(ups):
                raise PropertyViolation(f"upper chain broken: {ups}")


def minimal_pair_bounds(
    sys: OracleSystem, E, max_nodes: int, calc: PsiCalculator | None = None
) -> MinimalPairBounds:
    E = _as_event(sys, E)
    family = minimal_pairs(sys, E, max_nodes)
    calc = calc or PsiCalculator(sys, max_nodes)
    mu = sys.mu.weights
    mu_E = sys.measure_of(E.members)
    exact = sum((p.contribution for p in family.pairs), ZERO)
    weighted = sum((mu[p.state] * p.weight for p in family.pairs), ZERO)
    per_value = ZERO
    per_tails = []
    worst = None
    for sigma in sorted(E.members):
        est = calc.psi_bar(family.causes.per_state[sigma])
        per_value += mu[sigma] * est.value
        per_tails.append(mu[sigma] * est.tail if est.converged else None)
        if worst is None or est.value > worst.value:
            worst = est
    tail = _tail_sum(per_tails)
    upper_worst = None
    if tail is not None and E.members:
        upper_worst = max(calc.psi_bar(family.causes.per_state[s]).upper for s in E.members)
    if worst is None:
        worst_bound = BoundValue(ZERO, ZERO)
    else:
        # the truncated maximum and the maximum of upper values may come from
        # different states; the tail is chosen so value + tail is the latter
        worst_tail = mu_E * upper_worst - mu_E * worst.value if upper_worst is not None else None
        worst_bound = BoundValue(mu_E * worst.value, worst_tail)
    return MinimalPairBounds(
        mu_E,
        family,
        BoundValue(exact, tail),
        BoundValue(weighted, tail),
        BoundValue(per_value, tail),
        worst_bound,
    )


def bound_minimal_exact(sys: OracleSystem, E, max_nodes: int) -> BoundValue:
    return minimal_pair_bounds(sys, E, max_nodes).exact


def bound_union_worst(sys: OracleSystem, events: Sequence, max_nodes: int) -> BoundValue:
    """μ(⋃C)·max_C Ψ̄(Γ̃(C)) for a collection of events."""
    _require_injective(sys)
    events = [_as_event(sys, C) for C in events]
    union = frozenset().union(*(C.members for C in events)) if events else frozenset()
    mu_E = sys.measure_of(union)
    calc = PsiCalculator(sys, max_nodes)
    ests = [calc.psi_bar(cause_set(sys, C).flaws) for C in events]
    if not ests:
        return BoundValue(ZERO, ZERO)
    best = max(e.value for e in ests)
    if all(e.converged for e in ests):
        top = max(e.upper for e in ests)
        return BoundValue(mu_E * best, mu_E * top - mu_E * best)
    return BoundValue(mu_E * best, None)


# the expanded system f^E --------------------------------------------------------------


def expanded_system(sys: OracleSystem, E) -> tuple:
    """(system with one extra flaw f^E, its id): f^E holds exactly on E,
    leaves the state unchanged and is related to every flaw."""
    from .oracle import DependencyRelation, identity_on

    E = _as_event(sys, E)
    fid = sys.n_flaws
    flaws = list(sys.flaws) + [Flaw(fid, E.members, identity_on(E.members, sys.n_states), "f^E")]
    pairs = sys.dep.pairs() + [(g, fid) for g in range(fid)]
    return OracleSystem(sys.space, sys.mu, flaws, DependencyRelation(fid + 1, pairs), sys.declared), fid


def bound_expanded_witness(sys: OracleSystem, E, max_nodes: int) -> Fraction:
    """Truncated Σ μ^T A_H 1 over wdags with sink f^E (at most max_nodes
    nodes) that pass the Q0 producibility filter in the expanded system.

    f^E can only be the sink: it holds exactly on E, and the witness is
    taken at the first time E holds.
    """
    from .criteria import witness_producible

    big, fid = expanded_system(sys, E)
    total = ZERO
    for H in enumerate_wdags(big.dep, (fid,), max_nodes):
        if H.labels.count(fid) != 1:
            continue
        if witness_producible(big, Rule.Q0, H):
            total += appearance_bound(big, H)
    return total


# Monte Carlo --------------------------------------------------------------------------


@dataclass
class EventFrequency:
    ever: Frequency
    terminal: Frequency
    timeouts: int


def _event_worker(payload, start, stop):
    sys, strategy, events, max_steps, seed = payload
    ever = [0] * len(events)
    final = [0] * len(events)
    timeouts = 0
    for trial in range(start, stop):
        run = run_sequential(sys, strategy, seed, max_steps, trial)
        timeouts += run.timed_out
        visited = set(run.trajectory.states())
        for i, E in enumerate(events):
            if not visited.isdisjoint(E):
                ever[i] += 1
            if run.final_state in E:
                final[i] += 1
    return ever, final, timeouts


def empirical_events(
    sys: OracleSystem,
    strategy: Strategy,
    events: Sequence,
    trials: int,
    max_steps: int,
    seed: int,
    jobs: int = 1,
) -> list:
    """Per event: how often it holds at some time (initial state included)
    and on the final state."""
    sets = [frozenset(_as_event(sys, E).members) for E in events]
    payload = (sys, strategy, sets, max_steps, seed)
    ever = [0] * len(sets)
    final = [0] * len(sets)
    timeouts = 0
    for e, f, t in map_trials(_event_worker, payload, trials, jobs):
        ever = [a + b for a, b in zip(ever, e)]
        final = [a + b for a, b in zip(final, f)]
        timeouts += t
    return [EventFrequency(Frequency(a, trials), Frequency(b, trials), timeouts) for a, b in zip(ever, final)]


def empirical_P(sys: OracleSystem, strategy: Strategy, E, trials: int, max_steps: int, seed: int, jobs: int = 1):
    return empirical_events(sys, strategy, [E], trials, max_steps, seed, jobs)[0]


def expanded_strategy(strategy: Strategy, fid: int) -> Strategy:
    return PrioritizedEvent(strategy, fid)


# report -------------------------------------------------------------------------------


@dataclass
class EventReport:
    name: str
    mu_E: Fraction
    orderable: OrderableBounds | None
    minimal: MinimalPairBounds | None
    empirical: EventFrequency | None = None
    notes: list = field(default_factory=list)

    def bounds(self) -> dict:
        out = {}
        if self.orderable:
            out.update(orderable_exact=self.orderable.exact, orderable_psi=self.orderable.orderable_psi, cause_psi_bar=self.orderable.cause_psi_bar)
        if self.minimal:
            out.update(
                minimal_exact=self.minimal.exact,
                minimal_weighted=self.minimal.weighted,
                per_state_psi_bar=self.minimal.per_state,
                worst_state_psi_bar=self.minimal.worst_state,
            )
        return out


def event_report(sys: OracleSystem, E, name: str, max_nodes: int, calc: PsiCalculator | None = None) -> EventReport:
    """All bounds that apply to E; the chains are asserted on the way."""
    E = _as_event(sys, E)
    calc = calc or PsiCalculator(sys, max_nodes)
    notes = []
    orderable = None
    try:
        orderable = orderable_bounds(sys, E, max_nodes, calc)
        orderable.check_chain()
    except PropertyViolation as exc:
        if "T-commutative" not in str(exc):
            raise
        notes.append(str(exc))
    minimal = None
    try:
        minimal = minimal_pair_bounds(sys, E, max_nodes, calc)
        minimal.check_chain()
    except PropertyViolation as exc:
        if "injective" not in str(exc):
            raise
        notes.append(str(exc))
    return EventReport(name, sys.measure_of(E.members), orderable, minimal, notes=notes)
