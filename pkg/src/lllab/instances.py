"""Concrete oracle systems: CNF variable setting, permutations, file-defined
systems and the non-commuting counterexample fixture."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from itertools import combinations, permutations, product
from pathlib import Path
from typing import Iterable, Sequence

from .compose import ComposedSystem, SeededFlaw, SeededSystem, composed_system
from .matrix import ONE, ZERO, SparseMatrix
from .oracle import DependencyRelation, Flaw, OracleSystem, check_dependency_soundness
from .space import Distribution, StateSpace, as_fraction, format_fraction

MAX_VARIABLES = 12
MAX_PERM_N = 6


# CNF / variable setting -------------------------------------------------------


@dataclass(frozen=True)
class CnfInstance:
    """Binary variables 1..n and clauses of nonzero DIMACS literals.

    `bias[i]` is Pr(x_{i+1} = 1) under μ; `resample_bias` (default: the same)
    is the law used when a clause's variables are redrawn.
    """

    n: int
    clauses: tuple
    bias: tuple = ()
    resample_bias: tuple = ()

    def __post_init__(self):
        clauses = tuple(tuple(int(l) for l in c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        for c in clauses:
            for lit in c:
                if lit == 0 or abs(lit) > self.n:
                    raise ValueError(f"literal {lit} outside variables 1..{self.n}")
        half = Fraction(1, 2)
        bias = tuple(as_fraction(b) for b in self.bias) or (half,) * self.n
        rbias = tuple(as_fraction(b) for b in self.resample_bias) or bias
        if len(bias) != self.n or len(rbias) != self.n:
            raise ValueError("bias vectors must have one entry per variable")
        for b in bias + rbias:
            if not (0 <= b <= 1):
                raise ValueError(f"bias {b} outside [0, 1]")
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "resample_bias", rbias)

    def variables(self, c: int) -> tuple:
        return tuple(sorted({abs(l) - 1 for l in self.clauses[c]}))

    def violating_values(self, c: int):
        """{var: value} making every literal false, or None for tautologies."""
        need = {}
        for lit in self.clauses[c]:
            v, val = abs(lit) - 1, int(lit < 0)
            if need.get(v, val) != val:
                return None
            need[v] = val
        return need


def parse_dimacs(text: str) -> CnfInstance:
    n = m = None
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ValueError(f"line {lineno}: bad header {raw!r}")
            n, m = int(parts[2]), int(parts[3])
            continue
        if n is None:
            raise ValueError(f"line {lineno}: clause before the 'p cnf' header")
        try:
            tokens.extend(int(x) for x in line.split())
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer token in {raw!r}") from None
    if n is None:
        raise ValueError("missing 'p cnf' header")
    clauses, cur = [], []
    for tok in tokens:
        if tok == 0:
            clauses.append(tuple(cur))
            cur = []
        else:
            cur.append(tok)
    if cur:
        clauses.append(tuple(cur))
    if len(clauses) != m:
        raise ValueError(f"header promises {m} clauses, found {len(clauses)}")
    return CnfInstance(n, tuple(clauses))


def load_dimacs(path) -> CnfInstance:
    return parse_dimacs(Path(path).read_text())


def assignment_label(state: int, n: int) -> str:
    return "".join(str((state >> i) & 1) for i in range(n))


def product_measure(bias: Sequence[Fraction], n: int) -> list:
    out = []
    for s in range(1 << n):
        w = ONE
        for i in range(n):
            w *= bias[i] if (s >> i) & 1 else 1 - bias[i]
        out.append(w)
    return out


def build_variable_system(cnf: CnfInstance) -> OracleSystem:
    """One flaw per clause; its oracle redraws exactly the clause's variables."""
    if cnf.n > MAX_VARIABLES:
        raise ValueError(f"{cnf.n} variables exceed the exact-matrix cap of {MAX_VARIABLES}")
    n = cnf.n
    size = 1 << n
    space = StateSpace(tuple(assignment_label(s, n) for s in range(size)))
    mu = Distribution(tuple(product_measure(cnf.bias, n)))
    flaws = []
    for c in range(len(cnf.clauses)):
        need = cnf.violating_values(c)
        vars_ = cnf.variables(c)
        rows = [dict() for _ in range(size)]
        support = set()
        if need is not None:
            mask = sum(1 << v for v in vars_)
            pattern = sum(val << v for v, val in need.items())
            redraws = []
            for values in product((0, 1), repeat=len(vars_)):
                p = ONE
                bits = 0
                for v, val in zip(vars_, values):
                    r = cnf.resample_bias[v]
                    p *= r if val else 1 - r
                    bits |= val << v
                if p:
                    redraws.append((bits, p))
            for s in range(size):
                if s & mask == pattern:
                    support.add(s)
                    base = s & ~mask
                    rows[s] = {base | bits: p for bits, p in redraws}
        name = "C" + str(c) + "(" + " ".join(str(l) for l in cnf.clauses[c]) + ")"
        flaws.append(Flaw(c, support, SparseMatrix(size, rows), name))
    pairs = [
        (a, b)
        for a, b in combinations(range(len(flaws)), 2)
        if set(cnf.variables(a)) & set(cnf.variables(b))
    ]
    declared = {"sound": True, "t_commutative": True}
    if cnf.bias == cnf.resample_bias:
        declared["regenerating"] = True
    return OracleSystem(space, mu, flaws, DependencyRelation(len(flaws), pairs), declared)


def random_cnf(n: int, m: int, k: int, rng) -> CnfInstance:
    """m clauses of k distinct variables with random signs, drawn from `rng`
    (a random.Random)."""
    clauses = []
    for _ in range(m):
        vars_ = rng.sample(range(1, n + 1), k)
        clauses.append(tuple(v if rng.random() < 0.5 else -v for v in vars_))
    return CnfInstance(n, tuple(clauses))


def run_variable_search(cnf: CnfInstance, seed: int, max_steps: int = 10**6, trial: int = 0):
    """Resampling without materialized matrices, for instances past the cap.

    Always resamples the lowest-index violated clause. Returns
    (steps, final assignment as a list of 0/1, terminated).
    """
    from .search import TrialRng, _thresholds

    rng = TrialRng(seed, trial, 0)
    init = [_thresholds([1 - b, b]) for b in cnf.bias]
    redraw = [_thresholds([1 - b, b]) for b in cnf.resample_bias]

    def draw(thr):
        return 0 if rng.next64() < thr[0] else 1

    x = [draw(t) for t in init]
    need = [cnf.violating_values(c) for c in range(len(cnf.clauses))]
    steps = 0
    while True:
        bad = next(
            (c for c, nd in enumerate(need) if nd is not None and all(x[v] == val for v, val in nd.items())),
            None,
        )
        if bad is None:
            return steps, x, True
        if steps >= max_steps:
            return steps, x, False
        for v in cnf.variables(bad):
            x[v] = draw(redraw[v])
        steps += 1


# permutations -----------------------------------------------------------------


class PermSpace:
    """All permutations of 0..n-1, indexed in lexicographic order."""

    def __init__(self, n: int):
        if not (1 <= n <= MAX_PERM_N):
            raise ValueError(f"permutation size {n} outside 1..{MAX_PERM_N}")
        self.n = n
        self.perms = tuple(permutations(range(n)))
        self.index = {p: i for i, p in enumerate(self.perms)}

    def __len__(self):
        return len(self.perms)

    def labels(self) -> tuple:
        return tuple("".join(map(str, p)) for p in self.perms)

    def satisfying(self, pairs: Iterable[tuple]) -> frozenset:
        pairs = list(pairs)
        return frozenset(i for i, p in enumerate(self.perms) if all(p[x] == y for x, y in pairs))


@dataclass(frozen=True)
class SwapAction:
    """π ↦ (y z)π: swap the values y and z in π."""

    space: PermSpace
    y: int

    def __call__(self, state: int, z: int) -> int:
        p = self.space.perms[state]
        y = self.y
        q = tuple(z if v == y else (y if v == z else v) for v in p)
        return self.space.index[q]


def atomic_id(n: int, x: int, y: int) -> int:
    return x * n + y


def atomic_pair(n: int, a: int) -> tuple:
    return divmod(a, n)


def atoms_related(a: tuple, b: tuple) -> bool:
    return a[0] == b[0] or a[1] == b[1]


def atomic_system(n: int) -> SeededSystem:
    """All n² atomic events πx = y with the swap oracle, seeds z uniform."""
    space = PermSpace(n)
    flaws = []
    for x in range(n):
        for y in range(n):
            sid = atomic_id(n, x, y)
            flaws.append(
                SeededFlaw(
                    sid,
                    space.satisfying([(x, y)]),
                    tuple((z, Fraction(1, n)) for z in range(n)),
                    SwapAction(space, y),
                    f"<{x},{y}>",
                )
            )
    pairs = [
        (a, b)
        for a, b in combinations(range(n * n), 2)
        if atoms_related(atomic_pair(n, a), atomic_pair(n, b))
    ]
    ss = SeededSystem(
        StateSpace(space.labels()),
        Distribution.uniform(len(space)),
        flaws,
        DependencyRelation(n * n, pairs, reflexive=True),
    )
    ss.perm_space = space
    return ss


@dataclass
class PermInstance:
    n: int
    flaws: tuple  # each a tuple of (x, y) pairs
    events: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flaws = tuple(tuple(tuple(p) for p in f) for f in self.flaws)
        for f in self.flaws:
            for x, y in f:
                if not (0 <= x < self.n and 0 <= y < self.n):
                    raise ValueError(f"pair {(x, y)} outside 0..{self.n - 1}")
            if not _stable_pairs(f):
                raise ValueError(f"flaw {f} is not a stable set of atomic events")


def _stable_pairs(pairs: Sequence[tuple]) -> bool:
    return all(not atoms_related(a, b) for a, b in combinations(pairs, 2)) and len(set(pairs)) == len(pairs)


def parse_perm_instance(text: str) -> PermInstance:
    """Lines: 'n 4', 'flaw 0:1 2:3', 'event NAME 0:0 1:1'; '#' comments."""
    n = None
    flaws, events = [], {}

    def pairs(tokens, lineno):
        out = []
        for tok in tokens:
            x, sep, y = tok.partition(":")
            if not sep:
                raise ValueError(f"line {lineno}: expected x:y, got {tok!r}")
            out.append((int(x), int(y)))
        return tuple(out)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "n":
            n = int(rest[0])
        elif head == "flaw":
            flaws.append(pairs(rest, lineno))
        elif head == "event":
            if not rest:
                raise ValueError(f"line {lineno}: event needs a name")
            events[rest[0]] = pairs(rest[1:], lineno)
        else:
            raise ValueError(f"line {lineno}: unknown directive {head!r}")
    if n is None:
        raise ValueError("missing 'n' line")
    return PermInstance(n, tuple(flaws), events)


def load_perm_instance(path) -> PermInstance:
    return parse_perm_instance(Path(path).read_text())


@dataclass
class PermSystem:
    instance: PermInstance
    space: PermSpace
    atoms: SeededSystem
    composed: ComposedSystem

    @property
    def system(self) -> OracleSystem:
        return self.composed.system

    def event_states(self, pairs: Iterable[tuple]) -> frozenset:
        return self.space.satisfying(pairs)


def build_permutation_system(inst: PermInstance, check: bool = True) -> PermSystem:
    atoms = atomic_system(inst.n)
    sets = [tuple(atomic_id(inst.n, x, y) for x, y in f) for f in inst.flaws]
    composed = composed_system(atoms, sets, check=check)
    composed.system.declared.update({"sound": True, "t_commutative": True, "regenerating": True, "injective": True})
    return PermSystem(inst, atoms.perm_space, atoms, composed)


# explicit systems ----------------------------------------------------------------


def dump_system(sys: OracleSystem, extra: dict | None = None) -> str:
    labels = sys.space.labels
    doc = {
        "states": list(labels),
        "mu": [format_fraction(w) for w in sys.mu.weights],
        "flaws": [],
        "relation": [list(p) for p in sys.dep.pairs()],
    }
    prov = sys.declared.get("provenance")
    for fl in sys.flaws:
        entry = {
            "name": fl.name,
            "support": [labels[s] for s in sorted(fl.support)],
            "rows": {
                labels[s]: [[labels[t], format_fraction(x)] for t, x in sorted(fl.matrix.rows[s].items())]
                for s in sorted(fl.support)
            },
        }
        if prov is not None:
            entry["provenance"] = prov[fl.id]
        doc["flaws"].append(entry)
    declared = {k: v for k, v in sys.declared.items() if k != "provenance"}
    if declared:
        doc["declared"] = declared
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def parse_system(text: str) -> tuple:
    """(system, document) from the generic JSON format."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    for key in ("states", "mu", "flaws"):
        if key not in doc:
            raise ValueError(f"missing field {key!r}")
    space = StateSpace(tuple(str(s) for s in doc["states"]))
    try:
        mu = Distribution(tuple(as_fraction(w) for w in doc["mu"]))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"mu: {exc}") from None
    if len(mu) != space.size:
        raise ValueError(f"mu has {len(mu)} entries for {space.size} states")
    flaws = []
    prov = []
    for i, entry in enumerate(doc["flaws"]):
        name = entry.get("name") or f"f{i}"
        support = {space.index(s) for s in entry.get("support", [])}
        rows = [dict() for _ in range(space.size)]
        for s_label, row in entry.get("rows", {}).items():
            s = space.index(s_label)
            for t_label, value in row:
                t = space.index(t_label)
                rows[s][t] = rows[s].get(t, ZERO) + as_fraction(value)
            if s in support:
                total = sum(rows[s].values(), ZERO)
                if total != 1:
                    raise ValueError(f"flaw {name}: row {s_label!r} sums to {total}, expected 1")
            elif rows[s]:
                raise ValueError(f"flaw {name}: row {s_label!r} is nonzero outside the support")
        for s in support:
            if not rows[s]:
                raise ValueError(f"flaw {name}: row {space.labels[s]!r} missing (sums to 0)")
        flaws.append(Flaw(i, support, SparseMatrix(space.size, rows), name))
        prov.append(entry.get("provenance"))
    names = {fl.name: fl.id for fl in flaws}

    def flaw_ref(x):
        return names[x] if isinstance(x, str) else int(x)

    pairs = [(flaw_ref(a), flaw_ref(b)) for a, b in doc.get("relation", [])]
    declared = dict(doc.get("declared", {}))
    if any(p is not None for p in prov):
        declared["provenance"] = prov
    sys = OracleSystem(space, mu, flaws, DependencyRelation(len(flaws), pairs), declared)
    return sys, doc


def load_explicit_system(path) -> OracleSystem:
    return parse_system(Path(path).read_text())[0]


# non-commuting counterexample -------------------------------------------------------


@dataclass
class NoncommutingFixture:
    """A complete regenerating family: singleton flaws h_s for every state,
    related to everything, plus an unrelated pair f, g whose matrices do not
    commute. `sigma`, `tau` locate an entry where (A_f A_g)[σ,τ] < (A_g A_f)[σ,τ].
    """

    system: OracleSystem
    f: int
    g: int
    sigma: int
    tau: int

    def singleton(self, state: int) -> int:
        for fl in self.system.flaws:
            if fl.support == {state} and fl.id not in (self.f, self.g):
                return fl.id
        raise KeyError(state)


def complete_family(space: StateSpace, mu: Distribution, f_support, f_rows, g_support, g_rows) -> OracleSystem:
    n = space.size
    flaws = [
        Flaw(0, f_support, SparseMatrix(n, f_rows), "f"),
        Flaw(1, g_support, SparseMatrix(n, g_rows), "g"),
    ]
    mu_row = {t: w for t, w in enumerate(mu.weights) if w}
    for s in range(n):
        rows = [dict() for _ in range(n)]
        rows[s] = dict(mu_row)
        flaws.append(Flaw(2 + s, {s}, SparseMatrix(n, rows), f"h{s}"))
    pairs = [(a, b) for a, b in combinations(range(len(flaws)), 2) if (a, b) != (0, 1)]
    return OracleSystem(space, mu, flaws, DependencyRelation(len(flaws), pairs), {"sound": True, "regenerating": True})


def _grid_rows(n: int, den: int, allowed: Sequence[int]):
    """Probability rows with entries k/den supported inside `allowed`."""
    allowed = list(allowed)
    for parts in _compositions(den, len(allowed)):
        row = {}
        for s, k in zip(allowed, parts):
            if k:
                row[s] = Fraction(k, den)
        yield row


def _compositions(total: int, k: int):
    if k == 0:
        if total == 0:
            yield ()
        return
    if k == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, k - 1):
            yield (first,) + rest


def _regenerating_matrices(n: int, den: int, support: Sequence[int], forbidden_from: dict, mu):
    """All grid matrices on `support` with μ^T A = μ(support) μ^T.

    forbidden_from[s] lists target states row s may not use.
    """
    support = sorted(support)
    mu_f = sum((mu[s] for s in support), ZERO)
    target = [mu_f * mu[t] for t in range(n)]
    options = [
        list(_grid_rows(n, den, [t for t in range(n) if t not in forbidden_from.get(s, ())]))
        for s in support
    ]

    def walk(i, acc, chosen):
        if i == len(support):
            if all(acc[t] == target[t] for t in range(n)):
                yield list(chosen)
            return
        s = support[i]
        for row in options[i]:
            nxt = list(acc)
            ok = True
            for t, x in row.items():
                nxt[t] += mu[s] * x
                if nxt[t] > target[t]:
                    ok = False
                    break
            if ok:
                chosen.append(row)
                yield from walk(i + 1, nxt, chosen)
                chosen.pop()

    yield from walk(0, [ZERO] * n, [])


def search_noncommuting_pair(n: int = 4, den: int = 4, limit: int | None = None):
    """Brute-force search for a dependency-sound, regenerating, non-commuting
    pair on n states under the uniform measure, with entries k/den.

    Pairs sharing at most one state always commute under these constraints,
    so only supports with |f ∩ g| ≥ 2 are tried. Candidates are scored by the
    per-cycle gain p/(γ_f γ_g γ_h) of the adversarial strategy; returns the
    best NoncommutingFixture found, or None.
    """
    from .search import adversary_cycle_gain

    space = StateSpace(tuple(f"s{i}" for i in range(n)))
    mu = Distribution.uniform(n)
    w = mu.weights
    best, best_score = None, None
    seen = 0
    subsets = [frozenset(c) for r in range(2, n + 1) for c in combinations(range(n), r)]
    for fs in subsets:
        for gs in subsets:
            if len(fs & gs) < 2 or tuple(sorted(fs)) > tuple(sorted(gs)):
                continue
            f_forbid = {s: gs for s in fs - gs}
            g_forbid = {s: fs for s in gs - fs}
            f_mats = list(_regenerating_matrices(n, den, fs, f_forbid, mu.weights))
            g_mats = list(_regenerating_matrices(n, den, gs, g_forbid, mu.weights))
            for fm in f_mats:
                f_rows = [dict() for _ in range(n)]
                for s, row in zip(sorted(fs), fm):
                    f_rows[s] = row
                A = SparseMatrix(n, f_rows)
                for gm in g_mats:
                    g_rows = [dict() for _ in range(n)]
                    for s, row in zip(sorted(gs), gm):
                        g_rows[s] = row
                    B = SparseMatrix(n, g_rows)
                    AB, BA = A @ B, B @ A
                    if AB == BA:
                        continue
                    seen += 1
                    for sigma in range(n):
                        for tau in range(n):
                            x, y = AB[sigma, tau], BA[sigma, tau]
                            if x == y:
                                continue
                            if x < y:
                                cand = (fs, f_rows, AB, gs, g_rows, BA)
                            else:
                                cand = (gs, g_rows, BA, fs, f_rows, AB)
                            key = (_cycle_gain(w, cand, sigma, tau), -sigma, -tau)
                            if best_score is not None and key <= best_score:
                                continue
                            if not _witness_keeps_every_cycle(cand, w, tau, WITNESS_REPEATS):
                                continue
                            best, best_score = (cand, sigma, tau), key
                    if limit is not None and seen >= limit:
                        break
                if limit is not None and seen >= limit:
                    break
    if best is None:
        return None
    (fsup, rows_f, _, gsup, rows_g, _), sigma, tau = best
    fx = NoncommutingFixture(complete_family(space, mu, fsup, rows_f, gsup, rows_g), 0, 1, sigma, tau)
    if adversary_cycle_gain(fx) != best_score[0]:
        raise AssertionError("fast cycle score disagrees with the system-level computation")
    return fx


WITNESS_REPEATS = 4


def _witness_keeps_every_cycle(cand, w, tau: int, repeats: int) -> bool:
    """Does the Q0 witness of (f, g, h_τ)^repeats keep all 3·repeats nodes?

    Runs the backward construction directly on the two matrices; h_τ is
    related to both, f and g are unrelated.
    """
    _, rows_f, _, _, rows_g, _ = cand
    n = len(w)
    mu_row = {t: x for t, x in enumerate(w) if x}
    mats = (
        SparseMatrix(n, rows_f),
        SparseMatrix(n, rows_g),
        SparseMatrix(n, [dict(mu_row) if s == tau else {} for s in range(n)]),
    )
    unrelated = {(0, 1), (1, 0)}
    seq = (0, 1, 2) * repeats
    vec = {tau: ONE}
    sources = {2}
    for f in reversed(seq[:-1]):
        nxt = mats[f].apply(vec)
        dominated = all(x <= vec.get(s, ZERO) for s, x in nxt.items())
        if f not in sources and dominated:
            return False
        vec = nxt
        sources = {g for g in sources if (f, g) in unrelated} | {f}
    return True


def _cycle_gain(w, cand, sigma: int, tau: int) -> Fraction:
    """p/(γ_f γ_g γ_h) for regenerating flaws under μ = w, where γ equals the
    flaw's measure and the singleton h_τ has γ = μ(τ)."""
    fs, _, AB, gs, _, BA = cand
    n = len(w)
    p = sum((w[s] * AB[s, tau] for s in range(n)), ZERO) + w[sigma] * (BA[sigma, tau] - AB[sigma, tau])
    gam = sum((w[s] for s in fs), ZERO) * sum((w[s] for s in gs), ZERO) * w[tau]
    return p / gam


def fixture_path() -> Path:
    return Path(str(resources.files("lllab") / "data" / "noncommuting_pair.json"))


def load_noncommuting_fixture(path=None) -> NoncommutingFixture:
    """Load the frozen non-commuting fixture and re-verify its structure."""
    text = Path(path).read_text() if path else fixture_path().read_text()
    sys, doc = parse_system(text)
    meta = doc.get("pair")
    if not meta:
        raise ValueError("fixture has no 'pair' section")
    fx = NoncommutingFixture(sys, int(meta["f"]), int(meta["g"]), int(meta["sigma"]), int(meta["tau"]))
    if check_dependency_soundness(sys):
        raise ValueError("fixture is not dependency-sound")
    AB = sys.matrix(fx.f) @ sys.matrix(fx.g)
    BA = sys.matrix(fx.g) @ sys.matrix(fx.f)
    if not AB[fx.sigma, fx.tau] < BA[fx.sigma, fx.tau]:
        raise ValueError("fixture's designated entry does not witness non-commutation")
    return fx


def dump_fixture(fx: NoncommutingFixture) -> str:
    pair = {"f": fx.f, "g": fx.g, "sigma": fx.sigma, "tau": fx.tau}
    return dump_system(fx.system, {"pair": pair})
