import csv
import io
import json
import subprocess
import sys

import pytest

import oracles
from lqkd.cli import COMPARE_COLUMNS, parse_grid, run_command
from lqkd.keystructure import dump_structure, example_structure
from lqkd.plan import dump_plan, plan_from_json
from lqkd.planner import tradeoff_chain_plan
from lqkd.protocol import KeyRing, ProtocolConfig, read_transcript
from lqkd.quantum import build_from_plan, load_state
from lqkd.rates import RateReport


@pytest.fixture
def s442(tmp_path):
    path = tmp_path / "442.json"
    dump_structure(example_structure("442"), path)
    return str(path)


def run(capsys, *argv):
    rc = run_command([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def test_validate(capsys, s442):
    rc, out, _ = run(capsys, "validate", "-f", s442)
    assert rc == 0
    assert out.splitlines() == ["K=2, ℓ=(2,2,1), connected, ghz_rate1=false",
                                "layers: {1,2,3} {1,2}", "epr_rate1=false"]


def test_validate_components(capsys, tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"users": ["1", "2", "3", "4"], "layers": [["1", "2"], ["3", "4"]]}))
    rc, out, _ = run(capsys, "validate", "-f", path)
    assert rc == 0 and out.splitlines()[0] == "K=2, ℓ=(1,1,1,1), 2 components, ghz_rate1=[true,true]"


def test_error_codes(capsys, tmp_path):
    rc, _, err = run(capsys, "validate", "-f", tmp_path / "missing.json")
    assert rc == 2 and err.startswith("error:")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"users": ["1", "2"], "layers": [["1", "9"]]}))
    rc, _, err = run(capsys, "validate", "-f", bad)
    assert rc == 1 and len(err.strip().splitlines()) == 1
    assert run(capsys, "validate")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "compare", "--grid", "1:0:0.1")[0] == 1


def test_compare_matches_reference(capsys, tmp_path):
    out_file = tmp_path / "cmp.csv"
    rc, out, _ = run(capsys, "compare", "--grid", "0:1:0.05", "--out", out_file)
    assert rc == 0 and out_file.read_text() == out
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == COMPARE_COLUMNS and len(rows) == 21
    for row in rows:
        want = oracles.comparison_rates(row["p"])
        got = {impl: (float(row[f"{impl}_r123"]), float(row[f"{impl}_r12"])) for impl in want}
        for impl, pair in want.items():
            assert got[impl] == pytest.approx([float(x) for x in pair], abs=1e-12)


def test_parse_grid():
    assert parse_grid("0:1:0.25") == [0, 0.25, 0.5, 0.75, 1]
    assert parse_grid("0.1:0.3:0.1") == [0.1, 0.2, 0.3]


def test_simulate_is_byte_identical(capsys, tmp_path, s442):
    outs = []
    for name in ("a", "b"):
        rc, out, _ = run(capsys, "simulate", "-f", s442, "--rounds", 1000, "--seed", 7,
                         "--out", tmp_path / name)
        assert rc == 0
        outs.append(out)
    assert outs[0] == outs[1]
    for f in ("transcript.csv", "keyring.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_outputs_reload(capsys, tmp_path, s442):
    plan_file = tmp_path / "plan.json"
    plan = tradeoff_chain_plan(example_structure("442"))
    dump_plan(plan, plan_file)
    rc, out, _ = run(capsys, "simulate", "-f", s442, "--plan", plan_file, "--rounds", 500,
                     "--seed", 3, "--noise", 0.9, "--out", tmp_path / "run")
    assert rc == 0 and out.splitlines()[0].split()[:2] == ["layer", "raw_len"]
    ring = KeyRing.from_json(json.loads((tmp_path / "run" / "keyring.json").read_text()))
    assert ring.dumps() + "\n" == (tmp_path / "run" / "keyring.json").read_text()
    cfg = ProtocolConfig(rounds=500, seed=3, noise_v=0.9)
    tr = read_transcript(tmp_path / "run" / "transcript.csv", build_from_plan(plan), cfg)
    assert tr.rounds == 500


def test_build_round_trip(capsys, tmp_path, s442):
    rc, out, _ = run(capsys, "build", "-f", s442, "--out", tmp_path / "state.json")
    assert rc == 0 and out == ""
    state = load_state(tmp_path / "state.json")
    assert state.dims == (4, 4, 2) and len(state.amplitudes) == 4


def test_plan_round_trip(capsys, tmp_path, s442):
    rc, out, _ = run(capsys, "plan", "-f", s442, "--out", tmp_path / "plans.json")
    assert rc == 0 and out.splitlines()[-1] == "2 plans, 2 on the Pareto front"
    doc = json.loads((tmp_path / "plans.json").read_text())
    plans = [plan_from_json(d["plan"]) for d in doc]
    assert [p.is_flat() for p in plans] == [True, False]
    assert doc[1]["dims"] == {"1": 3, "2": 3, "3": 2} and doc[1]["support"] == 3


def test_rates_round_trip(capsys, tmp_path):
    path = tmp_path / "k4.json"
    dump_structure(example_structure("k4"), path)
    for impl in ("ghz", "epr", "layered"):
        rc, _, err = run(capsys, "rates", "-f", path, "--impl", impl, "--out", tmp_path / "r.json")
        assert rc == 0
        report = RateReport.from_json(json.loads((tmp_path / "r.json").read_text()))
        assert report.implementation == impl and set(report.rates.values()) == {1.0}
        assert ("partition schedule" in err) == (impl != "layered")
    rc, out, _ = run(capsys, "rates", "-f", path, "--csv")
    assert out.splitlines()[0] == "layer,rate" and len(out.splitlines()) == 7


def test_rates_without_partition(capsys, s442):
    rc, _, err = run(capsys, "rates", "-f", s442, "--impl", "ghz")
    assert rc == 1 and "no partition" in err


def test_report_aggregates(capsys, tmp_path, s442):
    run(capsys, "compare", "--grid", "0:1:0.5", "--out", tmp_path / "c.csv")
    run(capsys, "rates", "-f", s442, "--out", tmp_path / "r.json")
    rc, out, _ = run(capsys, "report", tmp_path / "c.csv", tmp_path / "r.json")
    doc = json.loads(out)
    assert rc == 0 and [d["kind"] for d in doc["inputs"]] == ["csv", "json"]
    assert len(doc["inputs"][0]["rows"]) == 3
    assert doc["inputs"][1]["content"]["implementation"] == "layered"


def test_module_entry_point(s442):
    proc = subprocess.run([sys.executable, "-m", "lqkd", "validate", "-f", s442],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("K=2,")
