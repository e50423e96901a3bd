"""Sequential and parallel-round local search, trajectories and Monte Carlo statistics.

Randomness: every trial gets its own Philox stream keyed by (seed, trial,
stream id) through numpy's SeedSequence hashing. Stream 0 drives
resampling, stream 1 drives the flaw-selection strategy. A transition is
drawn by comparing a uniform 64-bit integer u with the integer thresholds
ceil(2^64 * cumulative row mass); this 2^-64 resolution is the only
approximation in simulation. Rows with a single target consume no draw.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .oracle import OracleSystem
from .wdag import (
    CanonicalWdag,
    Rule,
    Wdag,
    canonicalize,
    gen_witness,
    simple_gen_witness,
    witness_forms,
)

MASK64 = (1 << 64) - 1
SCALE = 1 << 64
Z99 = NormalDist().inv_cdf(0.995)
DEFAULT_MAX_STEPS = 10**6


class TrialRng:
    """Counter-based 64-bit stream for one (seed, trial, stream) triple."""

    __slots__ = ("key", "_gen", "_buf")

    def __init__(self, seed: int, trial: int, stream: int = 0):
        self.key = (seed & MASK64, trial, stream)
        self._gen = None
        self._buf = []

    def next64(self) -> int:
        if not self._buf:
            if self._gen is None:
                self._gen = np.random.Philox(np.random.SeedSequence(list(self.key)))
            self._buf = self._gen.random_raw(64).tolist()
            self._buf.reverse()
        return self._buf.pop()

    def below(self, k: int) -> int:
        """Index in 0..k-1 from the top bits of one draw."""
        return (self.next64() * k) >> 64


def _thresholds(weights: Sequence[Fraction]) -> tuple:
    cum = Fraction(0)
    out = []
    for w in weights:
        cum += w
        num, den = cum.numerator * SCALE, cum.denominator
        out.append(-(-num // den))
    return tuple(out)


class Sampler:
    """Integer CDF tables for the rows of every flaw and for μ."""

    def __init__(self, sys: OracleSystem):
        self.rows = []
        for fl in sys.flaws:
            table = {}
            for s in fl.support:
                row = fl.matrix.rows[s]
                targets = tuple(sorted(row))
                table[s] = (targets, _thresholds([row[t] for t in targets]))
            self.rows.append(table)
        states = tuple(i for i, w in enumerate(sys.mu.weights) if w)
        self.initial = (states, _thresholds([sys.mu.weights[i] for i in states]))

    @staticmethod
    def draw(entry, rng: TrialRng) -> int:
        targets, thr = entry
        if len(targets) == 1:
            return targets[0]
        return targets[bisect_right(thr, rng.next64())]

    def initial_state(self, rng: TrialRng) -> int:
        return self.draw(self.initial, rng)

    def step(self, f: int, state: int, rng: TrialRng) -> int:
        return self.draw(self.rows[f][state], rng)


def sampler_for(sys: OracleSystem) -> Sampler:
    got = sys.cache.get("sampler")
    if got is None:
        got = sys.cache["sampler"] = Sampler(sys)
    return got


# strategies ---------------------------------------------------------------


class Strategy:
    name = "strategy"

    def choose(self, t: int, state: int, holding: tuple, steps: list, rng: TrialRng) -> int:
        raise NotImplementedError

    def __repr__(self):
        return self.name


class LeastId(Strategy):
    name = "least-id"

    def choose(self, t, state, holding, steps, rng):
        return holding[0]


class UniformRandom(Strategy):
    name = "uniform-random"

    def choose(self, t, state, holding, steps, rng):
        if len(holding) == 1:
            return holding[0]
        return holding[rng.below(len(holding))]


class PriorityList(Strategy):
    """First flaw of `order` that holds; unlisted flaws come after, by id."""

    def __init__(self, order: Sequence[int]):
        self.order = tuple(order)
        self.rank = {f: i for i, f in enumerate(self.order)}
        self.name = "priority:" + ",".join(map(str, self.order))

    def choose(self, t, state, holding, steps, rng):
        big = len(self.rank)
        return min(holding, key=lambda f: (self.rank.get(f, big), f))


class Scripted(Strategy):
    """Follow a fixed flaw sequence while it is applicable, else least id."""

    def __init__(self, sequence: Sequence[int]):
        self.sequence = tuple(sequence)
        self.name = "scripted:" + ",".join(map(str, self.sequence))

    def choose(self, t, state, holding, steps, rng):
        if t < len(self.sequence) and self.sequence[t] in holding:
            return self.sequence[t]
        return holding[0]


class PrioritizedEvent(Strategy):
    def __init__(self, inner: Strategy, event_flaw: int):
        self.inner = inner
        self.event_flaw = event_flaw
        self.name = f"prioritize:{event_flaw}/{inner.name}"

    def choose(self, t, state, holding, steps, rng):
        if self.event_flaw in holding:
            return self.event_flaw
        return self.inner.choose(t, state, holding, steps, rng)


class CyclicAdversary(Strategy):
    """Cycles of three steps; the cycle's priority order depends on whether
    the state at the start of the cycle equals `trigger`."""

    def __init__(self, normal: Sequence[int], swapped: Sequence[int], trigger: int):
        self.normal = tuple(normal)
        self.swapped = tuple(swapped)
        self.trigger = trigger
        self.name = f"cyclic:{self.normal}/{self.swapped}@{trigger}"

    def pick(self, phase: int, start: int, holding: tuple) -> int:
        plan = self.swapped if start == self.trigger else self.normal
        if plan[phase] in holding:
            return plan[phase]
        rest = [f for f in plan if f in holding]
        return rest[0] if rest else holding[0]

    def choose(self, t, state, holding, steps, rng):
        phase = t % 3
        start = state if phase == 0 else steps[t - phase][1]
        return self.pick(phase, start, holding)


def parse_strategy(text: str) -> Strategy:
    text = text.strip()
    if text in ("least-id", "least"):
        return LeastId()
    if text in ("uniform-random", "uniform", "random"):
        return UniformRandom()
    if text.startswith("priority:"):
        return PriorityList(int(x) for x in text.split(":", 1)[1].split(","))
    if text.startswith("scripted:"):
        return Scripted(int(x) for x in text.split(":", 1)[1].split(","))
    raise ValueError(f"unknown strategy {text!r}")


# trajectories --------------------------------------------------------------


@dataclass
class Trajectory:
    seed: int
    trial: int
    strategy: str
    initial_state: int
    steps: list = field(default_factory=list)

    @property
    def flaws(self) -> tuple:
        return tuple(s[0] for s in self.steps)

    def __len__(self):
        return len(self.steps)

    def states(self) -> list:
        return [self.initial_state] + [s[2] for s in self.steps]

    def dumps(self) -> str:
        lines = [
            f"# seed {self.seed}",
            f"# trial {self.trial}",
            f"# strategy {self.strategy}",
            f"# initial {self.initial_state}",
        ]
        lines += [f"{t} {f} {pre} {post}" for t, (f, pre, post) in enumerate(self.steps, 1)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Trajectory":
        header = {}
        steps = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                header[key] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 't flaw pre post'")
            t, f, pre, post = map(int, parts)
            if t != len(steps) + 1:
                raise ValueError(f"line {lineno}: step index {t} out of sequence")
            steps.append((f, pre, post))
        try:
            return cls(
                int(header["seed"]),
                int(header.get("trial", 0)),
                header.get("strategy", "?"),
                int(header["initial"]),
                steps,
            )
        except KeyError as exc:
            raise ValueError(f"trajectory header is missing {exc}") from None


def replay_problems(sys: OracleSystem, traj: Trajectory) -> list:
    """Steps that do not resample a holding flaw or use a zero-probability move."""
    problems = []
    state = traj.initial_state
    for t, (f, pre, post) in enumerate(traj.steps, 1):
        if pre != state:
            problems.append(f"step {t}: pre-state {pre} but current state {state}")
        if pre not in sys.flaws[f].support:
            problems.append(f"step {t}: flaw {f} does not hold on {pre}")
        elif sys.matrix(f)[pre, post] == 0:
            problems.append(f"step {t}: transition {pre}->{post} has probability 0")
        state = post
    return problems


@dataclass
class RunResult:
    trajectory: Trajectory
    final_state: int
    terminated: bool

    @property
    def timed_out(self) -> bool:
        return not self.terminated


def run_sequential(
    sys: OracleSystem,
    strategy: Strategy,
    seed: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    trial: int = 0,
    halt_flaws: frozenset = frozenset(),
    initial_state: int | None = None,
) -> RunResult:
    """Resample a holding flaw chosen by `strategy` until no flaw holds.

    `halt_flaws` stops the run right after any of those flaws is resampled.
    """
    sampler = sampler_for(sys)
    rng = TrialRng(seed, trial, 0)
    srng = TrialRng(seed, trial, 1)
    state = sampler.initial_state(rng) if initial_state is None else initial_state
    traj = Trajectory(seed, trial, strategy.name, state)
    steps = traj.steps
    holding = sys.holding
    t = 0
    while True:
        h = holding(state)
        if not h:
            return RunResult(traj, state, True)
        if t >= max_steps:
            return RunResult(traj, state, False)
        f = strategy.choose(t, state, h, steps, srng)
        post = sampler.step(f, state, rng)
        steps.append((f, state, post))
        state = post
        t += 1
        if f in halt_flaws:
            return RunResult(traj, state, True)


@dataclass(frozen=True)
class RoundRecord:
    index: int
    candidates: frozenset
    resampled: tuple
    before: int


@dataclass
class ParallelRun:
    rounds: list
    trajectory: Trajectory
    terminated: bool

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)


def run_parallel_rounds(
    sys: OracleSystem,
    inner_order: Strategy,
    seed: int,
    max_rounds: int = DEFAULT_MAX_STEPS,
    trial: int = 0,
) -> ParallelRun:
    """Rounds of resampling: V starts as the holding flaws; each pick removes
    from V itself, every related flaw and every flaw no longer holding."""
    sampler = sampler_for(sys)
    rng = TrialRng(seed, trial, 0)
    srng = TrialRng(seed, trial, 1)
    dep = sys.dep
    state = sampler.initial_state(rng)
    traj = Trajectory(seed, trial, "rounds/" + inner_order.name, state)
    rounds = []
    done = 0
    while True:
        V = set(sys.holding(state))
        if not V:
            return ParallelRun(rounds, traj, True)
        if len(rounds) >= max_rounds:
            return ParallelRun(rounds, traj, False)
        start = frozenset(V)
        picked = []
        while V:
            f = inner_order.choose(len(traj.steps), state, tuple(sorted(V)), traj.steps, srng)
            post = sampler.step(f, state, rng)
            traj.steps.append((f, state, post))
            state = post
            picked.append(f)
            here = sys.flaws
            V = {g for g in V if state in here[g].support and not dep.related(f, g)}
        rounds.append(RoundRecord(len(rounds) + 1, start, tuple(picked), done))
        done += len(picked)


# statistics -----------------------------------------------------------------


@dataclass(frozen=True)
class Frequency:
    count: int
    trials: int

    @property
    def value(self) -> float:
        return self.count / self.trials if self.trials else 0.0

    @property
    def interval(self) -> tuple:
        return wilson_interval(self.count, self.trials)

    @property
    def halfwidth(self) -> float:
        lo, hi = self.interval
        return (hi - lo) / 2

    def below(self, bound: float, widths: float = 3.0) -> bool:
        """Frequency ≤ bound + widths·halfwidth."""
        return self.value <= float(bound) + widths * self.halfwidth


def wilson_interval(count: int, n: int, z: float = Z99) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    p = count / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    sd: float
    n: int

    @property
    def halfwidth(self) -> float:
        return Z99 * self.sd / math.sqrt(self.n) if self.n > 1 else float("inf")

    def below(self, bound: float, widths: float = 3.0) -> bool:
        return self.mean <= float(bound) + widths * self.halfwidth


def mean_estimate(total: float, total_sq: float, n: int) -> MeanEstimate:
    if n == 0:
        return MeanEstimate(0.0, 0.0, 0)
    mean = total / n
    var = max(0.0, (total_sq - n * mean * mean) / (n - 1)) if n > 1 else 0.0
    return MeanEstimate(mean, math.sqrt(var), n)


def map_trials(worker: Callable, payload, trials: int, jobs: int = 1) -> list:
    """Run worker(payload, start, stop) over trial ranges; results in trial order."""
    if jobs <= 1 or trials < 2 * jobs:
        return [worker(payload, 0, trials)]
    bounds = [trials * i // jobs for i in range(jobs + 1)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(worker, payload, a, b) for a, b in zip(bounds, bounds[1:])]
        return [fu.result() for fu in futures]


def _appearance_worker(payload, start, stop):
    sys, strategy, rule, targets, max_steps, seed = payload
    wanted = set(targets)
    counts = dict.fromkeys(targets, 0)
    timeouts = 0
    cache = {}
    for trial in range(start, stop):
        run = run_sequential(sys, strategy, seed, max_steps, trial)
        timeouts += run.timed_out
        flaws = run.trajectory.flaws
        seen = cache.get(flaws)
        if seen is None:
            seen = cache[flaws] = _appearing(sys, rule, flaws) & wanted
        for key in seen:
            counts[key] += 1
    return counts, timeouts


def _appearing(sys: OracleSystem, rule, flaws: tuple) -> set:
    if rule == "simple":
        return {
            canonicalize(simple_gen_witness(sys.dep, flaws, t)) for t in range(1, len(flaws) + 1)
        }
    return set(witness_forms(sys, rule, flaws))


@dataclass
class AppearanceReport:
    frequencies: list
    timeouts: int


def appearance_frequency(
    sys: OracleSystem,
    strategy: Strategy,
    rule,
    targets,
    trials: int,
    max_steps: int,
    seed: int,
    jobs: int = 1,
) -> AppearanceReport:
    """How often each target wdag appears as a witness of some prefix.

    `rule` is a Rule or the string "simple" for the warm-up construction.
    """
    single = isinstance(targets, (Wdag, CanonicalWdag))
    items = [targets] if single else list(targets)
    keys = tuple(t if isinstance(t, CanonicalWdag) else canonicalize(t) for t in items)
    payload = (sys, strategy, rule, keys, max_steps, seed)
    totals = dict.fromkeys(keys, 0)
    timeouts = 0
    for counts, tmo in map_trials(_appearance_worker, payload, trials, jobs):
        timeouts += tmo
        for k, c in counts.items():
            totals[k] += c
    return AppearanceReport([Frequency(totals[k], trials) for k in keys], timeouts)


@dataclass
class RunStats:
    per_flaw: list
    total_steps: MeanEstimate
    timeouts: int
    trials: int


def _count_worker(payload, start, stop):
    sys, strategy, max_steps, seed = payload
    m = sys.n_flaws
    s1 = [0] * m
    s2 = [0] * m
    tot1 = tot2 = 0
    timeouts = 0
    for trial in range(start, stop):
        run = run_sequential(sys, strategy, seed, max_steps, trial)
        timeouts += run.timed_out
        per = [0] * m
        for f, _, _ in run.trajectory.steps:
            per[f] += 1
        for f in range(m):
            s1[f] += per[f]
            s2[f] += per[f] * per[f]
        n = len(run.trajectory.steps)
        tot1 += n
        tot2 += n * n
    return s1, s2, tot1, tot2, timeouts


def resample_count_stats(
    sys: OracleSystem,
    strategy: Strategy,
    trials: int,
    seed: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    jobs: int = 1,
) -> RunStats:
    """Per-flaw and total resampling counts, averaged over independent runs."""
    m = sys.n_flaws
    s1, s2 = [0] * m, [0] * m
    tot1 = tot2 = timeouts = 0
    for a, b, c, d, e in map_trials(_count_worker, (sys, strategy, max_steps, seed), trials, jobs):
        s1 = [x + y for x, y in zip(s1, a)]
        s2 = [x + y for x, y in zip(s2, b)]
        tot1 += c
        tot2 += d
        timeouts += e
    per = [mean_estimate(s1[f], s2[f], trials) for f in range(m)]
    return RunStats(per, mean_estimate(tot1, tot2, trials), timeouts, trials)


# non-commuting adversary --------------------------------------------------------


def adversary_subsystem(fx):
    """The three-flaw system {f, g, h_τ} and the adversarial cycle strategy."""
    from .oracle import DependencyRelation, Flaw

    big = fx.system
    h = fx.singleton(fx.tau)
    ids = (fx.f, fx.g, h)
    flaws = [Flaw(i, big.flaws[j].support, big.matrix(j), big.flaws[j].name) for i, j in enumerate(ids)]
    sub = OracleSystem(big.space, big.mu, flaws, DependencyRelation(3, [(0, 2), (1, 2)]))
    strategy = CyclicAdversary((0, 1, 2), (1, 0, 2), fx.sigma)
    return sub, strategy


def adversary_cycle_probability(fx) -> Fraction:
    """p = μ^T x + μ(σ)(y[σ] − x[σ]) with x = A_f A_g e_τ, y = A_g A_f e_τ."""
    sys = fx.system
    e_tau = {fx.tau: Fraction(1)}
    x = sys.matrix(fx.f).apply(sys.matrix(fx.g).apply(e_tau))
    y = sys.matrix(fx.g).apply(sys.matrix(fx.f).apply(e_tau))
    mu = sys.mu.weights
    base = sum((mu[s] * v for s, v in x.items()), Fraction(0))
    zero = Fraction(0)
    return base + mu[fx.sigma] * (y.get(fx.sigma, zero) - x.get(fx.sigma, zero))


def adversary_cycle_gain(fx) -> Fraction:
    gam = fx.system.charges()
    w = gam[fx.f] * gam[fx.g] * gam[fx.singleton(fx.tau)]
    return adversary_cycle_probability(fx) / w


def _prefix_of_extension(H: Wdag, seq: Sequence[int]) -> bool:
    """Is seq the label sequence of the first len(seq) nodes of some
    topological order of H?"""
    used = set()
    for lab in seq:
        node = next(
            (v for v in range(H.size) if v not in used and H.labels[v] == lab and H.preds[v] <= used),
            None,
        )
        if node is None:
            return False
        used.add(node)
    return True


def exact_cycle_appearance(sub: OracleSystem, strategy: CyclicAdversary, target: Wdag) -> Fraction:
    """Exact probability that `target` is the witness of a run stopped after
    |target| steps, by propagating the law of (flaw prefix, cycle start, state)."""
    steps_total = target.size
    key = canonicalize(target)
    layer = {((), s, s): w for s, w in enumerate(sub.mu.weights) if w}
    for t in range(steps_total):
        nxt = {}
        for (flaws, start, state), p in layer.items():
            h = sub.holding(state)
            if not h:
                continue
            f = strategy.pick(t % 3, start, h)
            seq = flaws + (f,)
            if not _prefix_of_extension(target, seq):
                continue
            for post, q in sub.matrix(f).rows[state].items():
                new_start = post if (t + 1) % 3 == 0 else start
                k = (seq, new_start, post)
                nxt[k] = nxt.get(k, Fraction(0)) + p * q
        layer = nxt
    total = Fraction(0)
    forms = {}
    for (flaws, _, _), p in layer.items():
        if flaws not in forms:
            forms[flaws] = canonicalize(gen_witness(sub, Rule.Q0, flaws, steps_total)) == key
        if forms[flaws]:
            total += p
    return total


def _adversary_worker(payload, start, stop):
    sub, strategy, key, steps_total, seed = payload
    hits = 0
    cache = {}
    for trial in range(start, stop):
        run = run_sequential(sub, strategy, seed, steps_total, trial)
        flaws = run.trajectory.flaws
        if len(flaws) != steps_total:
            continue
        got = cache.get(flaws)
        if got is None:
            got = cache[flaws] = canonicalize(gen_witness(sub, Rule.Q0, flaws, steps_total)) == key
        hits += got
    return hits


@dataclass
class AdversaryRow:
    repeats: int
    witness: Wdag
    exact: Fraction
    cycle_formula: Fraction
    weight: Fraction
    frequency: Frequency | None

    @property
    def ratio(self) -> Fraction:
        return self.exact / self.weight


def adversary_ratio_table(fx, n_repeats: int, seed: int, trials: int = 0, jobs: int = 1) -> list:
    """Ratio table for the witnesses H_n of (f, g, h)^n, n = 1..n_repeats.

    The exact column is the probability that H_n is the witness at time 3n
    of a run stopped after 3n steps; the Monte Carlo column (when trials > 0)
    estimates the same event.
    """
    sub, strategy = adversary_subsystem(fx)
    p = adversary_cycle_probability(fx)
    rows = []
    for n in range(1, n_repeats + 1):
        H = gen_witness(sub, Rule.Q0, (0, 1, 2) * n, 3 * n)
        exact = exact_cycle_appearance(sub, strategy, H) if H.size == 3 * n else Fraction(0)
        freq = None
        if trials:
            payload = (sub, strategy, canonicalize(H), 3 * n, seed + n)
            hits = sum(map_trials(_adversary_worker, payload, trials, jobs))
            freq = Frequency(hits, trials)
        w = Fraction(1)
        for lab in H.labels:
            w *= sub.charges()[lab]
        rows.append(AdversaryRow(n, H, exact, p**n, w, freq))
    return rows
