"""Command-line entry point: `lllab <command> ...`.

Every command is a deterministic function of its input files, flags and
--seed. Tables go to standard output; --out writes the same rows as CSV.
Exact rationals appear as "num/den" with a decimal column next to them.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys as _sys
from fractions import Fraction
from pathlib import Path

from . import criteria as crit
from . import distribution as dist
from . import permlll
from .compose import check_oblivious, enumeration_differences
from .instances import (
    load_noncommuting_fixture,
    build_permutation_system,
    build_variable_system,
    dump_system,
    load_dimacs,
    load_perm_instance,
    parse_system,
)
from .oracle import (
    OracleSystem,
    check_dependency_soundness,
    check_t_commutative,
    is_injective_flaw,
    is_regenerating,
)
from .search import (
    Trajectory,
    appearance_frequency,
    parse_strategy,
    replay_problems,
    resample_count_stats,
    adversary_ratio_table,
    run_parallel_rounds,
    run_sequential,
)
from .space import format_fraction
from .wdag import PropertyViolation, Rule, Wdag, appearance_bound, canonicalize, enumerate_wdags, weight


class Loaded:
    def __init__(self, system: OracleSystem, kind: str, extra=None):
        self.system = system
        self.kind = kind
        self.extra = extra  # CnfInstance, PermSystem or NoncommutingFixture


def load_instance(path: str) -> Loaded:
    if path == "appendix-a":
        fx = load_noncommuting_fixture()
        return Loaded(fx.system, "fixture", fx)
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".cnf":
        cnf = load_dimacs(p)
        return Loaded(build_variable_system(cnf), "cnf", cnf)
    if suffix == ".json":
        system, doc = parse_system(p.read_text())
        return Loaded(system, "explicit", doc)
    if suffix in (".perm", ".txt"):
        ps = build_permutation_system(load_perm_instance(p))
        return Loaded(ps.system, "perm", ps)
    raise ValueError(f"cannot tell the format of {path!r} (expected .cnf, .json or .perm)")


# output ---------------------------------------------------------------------------


def frac(x) -> str:
    if x is None:
        return ""
    return format_fraction(Fraction(x))


def dec(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.6g}"


def emit(header: list, rows: list, out: str | None) -> None:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    if out:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(cells)
        Path(out).write_text(buf.getvalue())


def parse_event(spec: str, loaded: Loaded) -> tuple:
    """NAME=KIND:ARGS or KIND:ARGS; returns (name, set of states)."""
    name, eq, body = spec.partition("=")
    if not eq:
        name, body = spec, spec
    kind, _, args = body.partition(":")
    system = loaded.system
    if kind == "flaw":
        names = {fl.name: fl.id for fl in system.flaws}
        fid = names[args] if args in names else int(args)
        return name, frozenset(system.flaws[fid].support)
    if kind == "states":
        return name, frozenset(system.space.index(s) for s in args.split(","))
    if kind == "lits":
        if loaded.kind != "cnf":
            raise ValueError("lits: events need a CNF instance")
        lits = [int(t) for t in args.split(",")]
        return name, frozenset(
            s
            for s in range(system.n_states)
            if all(((s >> (abs(l) - 1)) & 1) == (l > 0) for l in lits)
        )
    if kind == "atoms":
        if loaded.kind != "perm":
            raise ValueError("atoms: events need a permutation instance")
        return name, loaded.extra.event_states(_atom_list(args))
    raise ValueError(f"unknown event kind {kind!r} in {spec!r}")


def default_events(loaded: Loaded) -> list:
    if loaded.kind == "perm":
        ps = loaded.extra
        return [(k, ps.event_states(v), v) for k, v in ps.instance.events.items()]
    return [(fl.name, frozenset(fl.support), None) for fl in loaded.system.flaws]


# commands ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    loaded = load_instance(args.instance)
    system = loaded.system
    checks = {
        "sound": [f"{system.flaws[f].name} -> {system.flaws[g].name}" for f, g in check_dependency_soundness(system)],
        "t_commutative": [f"{system.flaws[f].name} x {system.flaws[g].name}" for f, g in check_t_commutative(system)],
        "regenerating": [fl.name for fl in system.flaws if not is_regenerating(system, fl.id)],
        "injective": [fl.name for fl in system.flaws if not is_injective_flaw(system, fl.id)],
    }
    if loaded.kind == "perm":
        checks["oblivious"] = [f"{f},{g},seed {r}" for f, g, r in check_oblivious(loaded.extra.atoms)]
    declared = {k: v for k, v in system.declared.items() if isinstance(v, bool)}
    rows = []
    failed = False
    for prop, bad in checks.items():
        claim = declared.get(prop)
        if claim and bad:
            failed = True
        rows.append([prop, "yes" if not bad else "no", "" if claim is None else str(claim).lower(), "; ".join(bad[:5])])
    emit(["property", "holds", "declared", "violations"], rows, args.out)
    return 1 if failed else 0


def _witness_reports(system, path: str | None) -> list:
    p, d = crit.symmetric_parameters(system)
    reports = [crit.check_symmetric(system, p, d), crit.check_neighborhood(system)]
    if path:
        doc = json.loads(Path(path).read_text())
        if "asymmetric" in doc:
            reports.append(crit.check_asymmetric(system, doc["asymmetric"]))
        if "cluster" in doc:
            reports.append(crit.check_cluster_expansion(system, doc["cluster"]))
        if "clique" in doc:
            reports.append(crit.check_clique_bound(system, doc["clique"]["cliques"], doc["clique"]["zeta"]))
    return reports


def cmd_criteria(args) -> int:
    system = load_instance(args.instance).system
    reports = _witness_reports(system, args.witness)
    rows = []
    for r in reports:
        bound = crit.runtime_bound(r) if r.satisfied else None
        failing = "; ".join(
            (system.flaws[f].name if 0 <= f < system.n_flaws else "global") + ": " + msg for f, msg in r.failures[:5]
        )
        rows.append([r.criterion, "satisfied" if r.satisfied else "fails", frac(bound), dec(bound), failing])
    emit(["criterion", "verdict", "runtime_bound", "decimal", "failures"], rows, args.out)
    return 0


def cmd_run(args) -> int:
    loaded = load_instance(args.instance)
    system = loaded.system
    strategy = parse_strategy(args.strategy)
    if args.trials < 1 and not args.replay:
        raise ValueError("run needs at least one trial")
    if args.replay:
        traj = Trajectory.loads(Path(args.replay).read_text())
        rerun = run_sequential(system, strategy, traj.seed, max(len(traj), 1), traj.trial)
        problems = replay_problems(system, traj)
        same = rerun.trajectory.steps == traj.steps
        print(f"replay: {len(traj)} steps, {'identical' if same else 'differs'}, {len(problems)} invalid steps")
        return 0 if same and not problems else 1
    if args.dump:
        first = run_sequential(system, strategy, args.seed, args.max_steps, 0)
        Path(args.dump).write_text(first.trajectory.dumps())
    if args.parallel:
        return _run_parallel(args, system, strategy)
    stats = resample_count_stats(system, strategy, args.trials, args.seed, args.max_steps, args.jobs)
    rule = Rule.parse(args.rule)
    rows = []
    for f, est in enumerate(stats.per_flaw):
        ph = crit.phi(system, rule, f, args.max_nodes, tighten=True, decay=args.decay)
        rows.append(
            [system.flaws[f].name, f"{est.mean:.6g}", f"{est.halfwidth:.3g}", frac(ph.value), frac(ph.upper), dec(ph.upper)]
        )
    rows.append(["total", f"{stats.total_steps.mean:.6g}", f"{stats.total_steps.halfwidth:.3g}", "", "", ""])
    emit(["flaw", "mean_resamples", "ci_halfwidth", "phi_truncated", "phi_upper", "decimal"], rows, args.out)
    print(f"trials {stats.trials}, timeouts {stats.timeouts}")
    return 0


def _run_parallel(args, system, strategy) -> int:
    hist = {}
    timeouts = 0
    for trial in range(args.trials):
        run = run_parallel_rounds(system, strategy, args.seed, args.max_steps, trial)
        timeouts += not run.terminated
        hist[run.n_rounds] = hist.get(run.n_rounds, 0) + 1
    rb = None
    try:
        rb = crit.round_bound(system, Fraction(args.eps), Fraction(args.delta), args.max_nodes, args.decay)
    except crit.NonconvergentError as exc:
        print(f"round bound unavailable: {exc}")
    rows = [[k, v, f"{v / args.trials:.6g}"] for k, v in sorted(hist.items())]
    emit(["rounds", "runs", "fraction"], rows, args.out)
    if rb is not None:
        over = sum(v for k, v in hist.items() if k > rb.rounds)
        print(f"t = {rb.t}, rounds bound 2t = {rb.rounds}, runs above: {over}/{args.trials}")
    print(f"timeouts {timeouts}")
    return 0


def cmd_bounds(args) -> int:
    loaded = load_instance(args.instance)
    system = loaded.system
    events = [parse_event(s, loaded) + (None,) for s in args.event] if args.event else default_events(loaded)
    if loaded.kind == "perm" and args.event:
        events = [
            (n, E, _atoms_of(s)) for (n, E, _), s in zip(events, args.event)
        ]
    calc = crit.PsiCalculator(system, args.max_nodes, decay=args.decay)
    strategy = parse_strategy(args.strategy)
    freqs = {}
    if args.trials:
        got = dist.empirical_events(system, strategy, [E for _, E, _ in events], args.trials, args.max_steps, args.seed, args.jobs)
        freqs = {name: fr for (name, _, _), fr in zip(events, got)}
    rows = []
    status = 0
    for name, E, atoms in events:
        if not E:
            rows.append([name, "mu(E)", "0", "0", "", "", "", ""])
            continue
        try:
            rep = dist.event_report(system, E, name, args.max_nodes, calc)
        except PropertyViolation as exc:
            print(f"{name}: chain assertion failed: {exc}", file=_sys.stderr)
            status = 1
            continue
        bounds = dict(rep.bounds())
        if atoms is not None:
            bounds["perm_product"] = permlll.perm_product_bound(loaded.extra, atoms, args.max_nodes, calc).bound
        fr = freqs.get(name)
        emp = f"{fr.ever.value:.6g}" if fr else ""
        hw = f"{fr.ever.halfwidth:.3g}" if fr else ""
        rows.append([name, "mu(E)", frac(rep.mu_E), dec(rep.mu_E), "", "", emp, hw])
        for key, b in bounds.items():
            rows.append([name, key, frac(b.value), dec(b.value), frac(b.upper), dec(b.upper), emp, hw])
    emit(["event", "bound", "truncated", "decimal", "upper", "upper_decimal", "empirical", "ci_halfwidth"], rows, args.out)
    return status


def _atom_list(text: str) -> list:
    out = []
    for tok in text.split(","):
        x, sep, y = tok.partition(":")
        if not sep:
            raise ValueError(f"expected x:y, got {tok!r}")
        out.append((int(x), int(y)))
    return out


def _atoms_of(spec: str):
    body = spec.partition("=")[2] or spec
    kind, _, args = body.partition(":")
    return _atom_list(args) if kind == "atoms" else None


def cmd_wdag(args) -> int:
    loaded = load_instance(args.instance)
    system = loaded.system
    calc = crit.PsiCalculator(system, args.max_nodes, decay=args.decay)
    rows = []
    sinks = [int(x) for x in args.sinks.split(",")] if args.sinks else []
    est = calc.psi(sinks)
    rows.append([f"psi({args.sinks or ''})", frac(est.value), dec(est.value), frac(est.upper), dec(est.last_ratio)])
    bar = calc.psi_bar(sinks)
    rows.append([f"psi_bar({args.sinks or ''})", frac(bar.value), dec(bar.value), frac(bar.upper), dec(bar.last_ratio)])
    if args.phi:
        rule = Rule.parse(args.rule)
        for f in range(system.n_flaws):
            ph = crit.phi(system, rule, f, args.max_nodes, tighten=True, decay=args.decay)
            rows.append([f"phi_{args.rule}({system.flaws[f].name})", frac(ph.value), dec(ph.value), frac(ph.upper), dec(ph.last_ratio)])
    if args.eps is not None:
        inflated = crit.PsiCalculator(system, args.max_nodes, crit.inflated_weights(system, Fraction(args.eps)), args.decay)
        w = inflated.psi_bar(range(system.n_flaws))
        rows.append([f"W_{args.eps}", frac(w.value), dec(w.value), frac(w.upper), dec(w.last_ratio)])
    emit(["quantity", "truncated", "decimal", "upper", "last_ratio"], rows, args.out)
    for label, e in [("psi", est), ("psi_bar", bar)]:
        if not e.converged:
            print(f"{label}: tail not certified, last level ratio {dec(e.last_ratio)}")
    targets = []
    if args.wdag:
        targets.append(Wdag.loads(Path(args.wdag).read_text()))
    if args.random:
        pool = [H for f in range(system.n_flaws) for H in enumerate_wdags(system.dep, (f,), min(args.max_nodes, 4))]
        rng = random.Random(args.seed)
        targets += rng.sample(pool, min(args.random, len(pool)))
    if targets:
        strategy = parse_strategy(args.strategy)
        rule = Rule.parse(args.rule)
        rep = appearance_frequency(system, strategy, rule, targets, args.trials, args.max_steps, args.seed, args.jobs)
        rows = []
        for H, fr in zip(targets, rep.frequencies):
            exact = appearance_bound(system, H)
            rows.append(["-".join(map(str, canonicalize(H).labels)), H.size, frac(exact), dec(exact), dec(weight(system, H)), f"{fr.value:.6g}", f"{fr.halfwidth:.3g}", "yes" if fr.below(exact) else "NO"])
        print()
        emit(["wdag", "nodes", "mu_A_H_1", "decimal", "w(H)", "frequency", "ci_halfwidth", "within"], rows, None)
    return 0


def cmd_compose(args) -> int:
    loaded = load_instance(args.instance)
    if loaded.kind != "perm":
        raise ValueError("compose needs a permutation instance")
    ps = loaded.extra
    rows = []
    oblivious = check_oblivious(ps.atoms)
    rows.append(["oblivious pre-flaws", "yes" if not oblivious else "no", len(oblivious)])
    tcomm = check_t_commutative(ps.system)
    for part in ps.composed.parts:
        diffs = enumeration_differences(ps.atoms, part.enumeration)
        rows.append([f"<{part.enumeration}> constant", frac(part.constant), "enumeration-invariant" if not diffs else f"{len(diffs)} orders differ"])
    rows.append(["composed T-commutative", "yes" if not tcomm else "no", len(tcomm)])
    emit(["check", "result", "detail"], rows, None)
    if args.out:
        Path(args.out).write_text(dump_system(ps.system))
    return 0 if not oblivious and not tcomm else 1


def cmd_perm(args) -> int:
    rows = []
    status = 0
    for n in args.n:
        res = permlll.closed_form_sweep(n, args.max_set, args.max_set)
        status |= not res.ok
        rows.append([n, res.sets_I, res.sets_C, res.entries, len(res.mismatches)])
    emit(["n", "stable_I", "stable_C", "entries", "mismatches"], rows, args.out)
    if args.instance:
        loaded = load_instance(args.instance)
        ps = loaded.extra
        calc = crit.PsiCalculator(ps.system, args.max_nodes, decay=args.decay)
        rows = []
        for name, atoms in ps.instance.events.items():
            b = permlll.perm_product_bound(ps, atoms, args.max_nodes, calc)
            rows.append([name, frac(b.mu_E), frac(b.bound.value), dec(b.bound.value), frac(b.bound.upper), frac(b.orderable_psi.upper)])
        print()
        emit(["event", "mu(E)", "perm_product_truncated", "decimal", "perm_product_upper", "orderable_psi_upper"], rows, None)
    return int(status)


def cmd_adversary(args) -> int:
    fx = load_noncommuting_fixture(args.fixture)
    rows = []
    for r in adversary_ratio_table(fx, args.repeats, args.seed, args.trials, args.jobs):
        f = r.frequency
        rows.append(
            [r.repeats, r.witness.size, frac(r.exact), dec(r.exact), frac(r.weight), frac(r.ratio), dec(r.ratio),
             f"{f.value:.6g}" if f else "", f"{f.halfwidth:.3g}" if f else ""]
        )
    emit(["n", "nodes", "exact", "decimal", "w(H)", "ratio", "ratio_decimal", "frequency", "ci_halfwidth"], rows, args.out)
    return 0


# parser ----------------------------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonnegative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="base seed; runs never read the clock")
    common.add_argument("--trials", type=_nonnegative, default=1000)
    common.add_argument("--max-steps", type=_positive, default=10_000)
    common.add_argument("--max-nodes", type=_positive, default=6)
    common.add_argument("--rule", choices=["q0", "q1", "q2"], default="q0")
    common.add_argument("--strategy", default="least-id")
    common.add_argument("--jobs", type=_positive, default=1)
    common.add_argument("--decay", type=Fraction, default=crit.HALF, help="tail ratio threshold")
    common.add_argument("--out", help="CSV output path")

    parser = argparse.ArgumentParser(prog="lllab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="structural property matrix")
    p.add_argument("instance")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("criteria", parents=[common], help="LLL-type criteria and runtime bounds")
    p.add_argument("instance")
    p.add_argument("--witness", help="JSON with asymmetric / cluster / clique entries")
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("run", parents=[common], help="simulate and compare resampling counts")
    p.add_argument("instance")
    p.add_argument("--parallel", action="store_true", help="count parallel rounds instead")
    p.add_argument("--eps", default="1/4")
    p.add_argument("--delta", default="1/10")
    p.add_argument("--dump", help="write the trajectory of trial 0 here")
    p.add_argument("--replay", help="re-run a dumped trajectory and compare")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", parents=[common], help="bounds on P(E) and empirical frequencies")
    p.add_argument("instance")
    p.add_argument("--event", action="append", help="NAME=flaw:ID | states:a,b | lits:1,-2 | atoms:0:1,2:3")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("wdag", parents=[common], help="Ψ, Φ, W_ε and wdag appearance frequencies")
    p.add_argument("instance")
    p.add_argument("--sinks", default="", help="comma-separated flaw ids")
    p.add_argument("--phi", action="store_true")
    p.add_argument("--eps")
    p.add_argument("--wdag", help="serialized wdag to test")
    p.add_argument("--random", type=_nonnegative, default=0, help="also test this many enumerated wdags")
    p.set_defaults(func=cmd_wdag)

    p = sub.add_parser("compose", parents=[common], help="composition checks on a permutation instance")
    p.add_argument("instance")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("perm", parents=[common], help="closed-form sweep and permutation event bounds")
    p.add_argument("instance", nargs="?")
    p.add_argument("--n", type=_positive, action="append", help="sizes to sweep (default 3 4)")
    p.add_argument("--max-set", type=_nonnegative, default=3)
    p.set_defaults(func=cmd_perm)

    p = sub.add_parser("appendix-a", parents=[common], help="witness ratios for the non-commuting fixture")
    p.add_argument("--fixture", help="fixture JSON (default: the packaged one)")
    p.add_argument("--repeats", type=_positive, default=4)
    p.set_defaults(func=cmd_adversary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n", None) is None and args.command == "perm":
        args.n = [3, 4]
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
