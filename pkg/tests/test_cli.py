import csv
import json
from fractions import Fraction as F
from pathlib import Path

import pytest

from helpers import dense_system
from lllab import cli
from lllab.instances import dump_system
from lllab.wdag import PropertyViolation

ROOT = Path(__file__).resolve().parent.parent
CNF = str(ROOT / "instances" / "sparse4sat.cnf")
PERM = str(ROOT / "instances" / "perm4.perm")


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows_of(text):
    return [line.split() for line in text.splitlines() if line.strip()]


def write_system(tmp_path, sys, name="sys.json"):
    path = tmp_path / name
    path.write_text(dump_system(sys))
    return str(path)


def test_verify_cnf(capsys):
    code, out, _ = run(capsys, "verify", CNF, "--seed", "1")
    assert code == 0
    table = {r[0]: r[1] for r in rows_of(out)[1:]}
    assert table == {"sound": "yes", "t_commutative": "yes", "regenerating": "yes", "injective": "yes"}


def test_verify_fixture_names_only_the_planted_pair(capsys):
    code, out, _ = run(capsys, "verify", "appendix-a", "--seed", "1")
    assert code == 0
    lines = [l for l in out.splitlines()[1:] if " no " in l]
    assert len(lines) == 1 and lines[0].startswith("t_commutative") and lines[0].rstrip().endswith("f x g")


def test_verify_empty_flaw_list(capsys, tmp_path):
    path = write_system(tmp_path, dense_system([F(1, 2)] * 2, []))
    code, out, _ = run(capsys, "verify", path, "--seed", "1")
    assert code == 0 and " no " not in out


def test_verify_fails_on_false_declaration(capsys, tmp_path):
    sys = dense_system([F(1, 3)] * 3, [({0}, {0: [0, 0, 1]})])
    doc = json.loads(dump_system(sys))
    doc.setdefault("declared", {})["regenerating"] = True
    path = tmp_path / "lie.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "verify", str(path), "--seed", "1")
    assert code == 1 and ["regenerating", "no", "true", "f0"] in rows_of(out)


def test_verify_perm_reports_obliviousness(capsys):
    code, out, _ = run(capsys, "verify", PERM, "--seed", "1")
    assert code == 0
    assert any(r[:2] == ["oblivious", "yes"] for r in rows_of(out))


def test_criteria_without_witness(capsys):
    code, out, _ = run(capsys, "criteria", CNF, "--seed", "1")
    assert code == 0
    rows = rows_of(out)[1:]
    assert [r[0] for r in rows] == ["symmetric", "neighborhood"]
    assert all(r[1] == "satisfied" for r in rows)


def test_criteria_witness_feasible_and_infeasible(capsys, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"asymmetric": ["1/8"] * 4, "cluster": ["1/5"] * 4}))
    code, out, _ = run(capsys, "criteria", CNF, "--witness", str(good), "--seed", "1")
    table = {r[0]: r for r in rows_of(out)[1:]}
    assert table["asymmetric"][1:3] == ["satisfied", "4/7"]
    assert table["cluster-expansion"][1:3] == ["satisfied", "4/5"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"asymmetric": ["1/100", "1/8", "1/8", "1/8"]}))
    code, out, _ = run(capsys, "criteria", CNF, "--witness", str(bad), "--seed", "1")
    line = next(l for l in out.splitlines() if l.startswith("asymmetric"))
    assert "fails" in line and "C0(1 2 3 4)" in line
    assert "C1" not in line


def test_run_reports_phi_and_writes_csv(capsys, tmp_path):
    out_csv = tmp_path / "run.csv"
    code, out, _ = run(capsys, "run", CNF, "--seed", "2", "--trials", "300", "--out", str(out_csv))
    assert code == 0 and "trials 300, timeouts 0" in out
    with out_csv.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["flaw", "mean_resamples", "ci_halfwidth"]
    assert [r[0] for r in rows[1:]][-1] == "total" and len(rows) == 6
    for r in rows[1:-1]:
        assert float(r[1]) <= float(F(r[4])) + 3 * float(r[2]) + 1e-12


def test_run_dump_and_replay(capsys, tmp_path):
    dump = tmp_path / "traj.txt"
    run(capsys, "run", CNF, "--seed", "4", "--trials", "5", "--dump", str(dump))
    text = dump.read_text()
    assert text.startswith("# seed 4")
    code, out, _ = run(capsys, "run", CNF, "--seed", "0", "--replay", str(dump))
    assert code == 0 and "identical, 0 invalid steps" in out
    tampered = tmp_path / "bad.txt"
    lines = text.splitlines()
    body = [i for i, l in enumerate(lines) if not l.startswith("#")]
    if body:
        t, f, pre, post = lines[body[0]].split()
        lines[body[0]] = f"{t} {f} {pre} {(int(post) + 1) % 256}"
        tampered.write_text("\n".join(lines) + "\n")
        code, out, _ = run(capsys, "run", CNF, "--seed", "0", "--replay", str(tampered))
        assert code == 1 and "differs" in out


def test_run_timeout_accounting(capsys, tmp_path):
    # a flaw that always maps back onto itself never terminates
    path = write_system(tmp_path, dense_system([1, 0], [({0}, {0: [1, 0]})]))
    code, out, _ = run(capsys, "run", path, "--seed", "1", "--trials", "7", "--max-steps", "5")
    assert code == 0 and "trials 7, timeouts 7" in out


def test_run_parallel_histogram(capsys):
    code, out, _ = run(capsys, "run", CNF, "--seed", "3", "--trials", "400", "--parallel", "--eps", "1/5")
    assert code == 0
    rows = rows_of(out.split("t = ")[0])[1:]
    assert sum(int(r[1]) for r in rows) == 400
    assert "t = 3, rounds bound 2t = 6" in out and "timeouts 0" in out


def test_bounds_rows_per_event(capsys, tmp_path):
    out_csv = tmp_path / "b.csv"
    code, out, _ = run(
        capsys, "bounds", CNF, "--seed", "1", "--trials", "200",
        "--event", "low=lits:1,2", "--event", "c0=flaw:0", "--out", str(out_csv),
    )
    assert code == 0
    with out_csv.open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["event"] for r in rows} == {"low", "c0"}
    low = {r["bound"]: r for r in rows if r["event"] == "low"}
    assert low["mu(E)"]["truncated"] == "1/4"
    assert {"orderable_exact", "orderable_psi", "cause_psi_bar", "minimal_exact"} <= set(low)
    assert F(low["orderable_exact"]["truncated"]) <= F(low["orderable_psi"]["truncated"]) <= F(low["cause_psi_bar"]["truncated"])
    for r in rows:
        if r["upper"]:
            assert float(r["empirical"]) <= float(F(r["upper"])) + 3 * float(r["ci_halfwidth"])


def test_perm_events_get_product_bound(capsys):
    code, out, _ = run(capsys, "bounds", PERM, "--seed", "1", "--trials", "0")
    assert code == 0
    names = {r[0] for r in rows_of(out)[1:]}
    assert {"fixed0", "pair", "swap", "last", "mid"} <= names
    for name in names:
        assert any(r[0] == name and r[1] == "perm_product" for r in rows_of(out)[1:])


def test_bounds_chain_failure_exits_nonzero(capsys, monkeypatch):
    def broken(*a, **k):
        raise PropertyViolation("orderable_exact > orderable_psi")

    monkeypatch.setattr(cli.dist, "event_report", broken)
    code, _, err = run(capsys, "bounds", CNF, "--seed", "1", "--trials", "0", "--event", "e=lits:1")
    assert code == 1 and "chain assertion failed" in err


def test_wdag_empty_sink_set(capsys):
    code, out, _ = run(capsys, "wdag", CNF, "--seed", "1")
    assert code == 0
    table = {r[0]: r for r in rows_of(out)[1:]}
    assert table["psi()"][1] == "1/1" and table["psi()"][3] == "1/1"


def test_wdag_random_appearance(capsys):
    code, out, _ = run(capsys, "wdag", CNF, "--seed", "5", "--random", "20", "--trials", "300", "--max-nodes", "4")
    assert code == 0
    table = out.split("\n\n")[1]
    rows = rows_of(table)[1:]
    assert len(rows) == 20 and all(r[-1] == "yes" for r in rows)


def test_wdag_flags_nonconvergence(capsys, tmp_path):
    path = write_system(tmp_path, dense_system([F(1, 2)] * 2, [({0}, {0: [F(1, 2), F(1, 2)]})]))
    code, out, _ = run(capsys, "wdag", path, "--seed", "1", "--sinks", "0", "--decay", "1/4")
    assert code == 0
    assert "psi: tail not certified, last level ratio 0.5" in out


def test_compose_perm(capsys):
    code, out, _ = run(capsys, "compose", PERM, "--seed", "1")
    assert code == 0
    rows = rows_of(out)[1:]
    assert ["oblivious", "pre-flaws", "yes", "0"] == rows[0]
    assert rows[-1][-2:] == ["yes", "0"]
    assert all(r[-1] == "enumeration-invariant" for r in rows[1:-1])


def test_perm_sweep(capsys):
    code, out, _ = run(capsys, "perm", "--n", "3", "--seed", "1")
    assert code == 0
    assert rows_of(out)[1] == ["3", "34", "34", "6936", "0"]


def test_adversary_ratios(capsys):
    code, out, _ = run(capsys, "appendix-a", "--repeats", "3", "--trials", "200", "--seed", "1")
    assert code == 0
    ratios = [F(r[5]) for r in rows_of(out)[1:]]
    assert ratios == [2, 4, 8]


@pytest.mark.parametrize(
    "argv",
    [
        ["criteria", CNF, "--seed", "9"],
        ["run", CNF, "--seed", "9", "--trials", "50"],
        ["bounds", PERM, "--seed", "9", "--trials", "50"],
    ],
)
def test_output_is_byte_identical(capsys, argv):
    first = run(capsys, *argv)
    second = run(capsys, *argv)
    assert first == second


def test_errors(capsys, tmp_path):
    assert cli.main(["verify", str(tmp_path / "missing.cnf"), "--seed", "1"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", CNF])
    assert exc.value.code == 2
    assert cli.main(["run", CNF, "--seed", "1", "--trials", "0"]) == 2
    bad = tmp_path / "bad.cnf"
    bad.write_text("p cnf 2 1\n1 x 0\n")
    assert cli.main(["verify", str(bad), "--seed", "1"]) == 2
