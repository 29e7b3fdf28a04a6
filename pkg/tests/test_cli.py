import json
import subprocess
import sys

import pytest

from sentinel import cli
from sentinel.events import parse_event


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    assert run_cli("simulate", "--config", "demo", "--out", d / "data.csv") == 0
    assert run_cli("pipeline", "--config", "demo", "--out", d / "events.ndjson") == 0
    assert run_cli("eval", "--events", d / "events.ndjson", "--truth", d / "data.truth.csv", "--out", d / "eval.json") == 0
    return d


def test_demo_chain_detects(demo):
    summary = json.loads((demo / "eval.json").read_text())
    assert summary["truth_windows"] == 4
    assert summary["detected"] >= 3


def test_headers_report_seed(demo):
    assert (demo / "data.csv").read_text().startswith("# seed=7\n")
    assert (demo / "data.truth.csv").read_text().startswith("# seed=7\n")
    doc = json.loads((demo / "events.ndjson.summary.json").read_text())
    assert doc["seed"] == 7 and doc["config"]["order"] == [2, 0]


def test_byte_identical_reruns(demo, tmp_path):
    assert run_cli("simulate", "--config", "demo", "--out", tmp_path / "data.csv") == 0
    assert run_cli("pipeline", "--config", "demo", "--out", tmp_path / "events.ndjson") == 0
    for name in ("data.csv", "data.truth.csv", "events.ndjson", "events.ndjson.summary.json"):
        assert (tmp_path / name).read_bytes() == (demo / name).read_bytes()


def test_csv_pipeline_matches_scenario_pipeline(demo, tmp_path):
    assert run_cli("pipeline", demo / "data.csv", "--order", "2,0", "--out", tmp_path / "ev.ndjson") == 0
    assert (tmp_path / "ev.ndjson").read_bytes() == (demo / "events.ndjson").read_bytes()


def test_fit_and_detect(demo, tmp_path):
    assert run_cli("fit", demo / "data.csv", "--order", "2,0", "--out", tmp_path / "m.txt") == 0
    assert run_cli("detect", demo / "data.csv", "--model", tmp_path / "m.txt", "--out", tmp_path / "d.ndjson") == 0
    events = [parse_event(l) for l in (tmp_path / "d.ndjson").read_text().splitlines()]
    assert any(e.kind == "ged" for e in events)
    assert {e.kind for e in events} <= {"ged", "episode"}


def test_seed_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SENTINEL_SEED", "11")
    assert run_cli("simulate", "--config", "demo", "--seed", "3", "--out", tmp_path / "x.csv") == 0
    assert (tmp_path / "x.csv").read_text().startswith("# seed=11\n")


def test_short_fit_exits_one(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("t,sensor_id,value\n0,a,1\n1,a,2\n2,a,1.5\n")
    assert run_cli("fit", p, "--order", "2,2") == 1
    assert "SeriesTooShort" in capsys.readouterr().err


def test_bad_confidence_exits_one(demo, tmp_path, capsys):
    assert run_cli("detect", demo / "data.csv", "--model", "x", "--confidence", "1.5") == 1
    assert "BadConfidence" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [["pipeline", "--bogus"], ["fit"], ["nope"], ["fit", "missing.csv"], ["pipeline"], ["simulate", "--config", "missing.ini", "--out", "x.csv"]],
)
def test_input_errors_exit_one(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_cli(*argv) == 1


def test_malformed_row_has_line(tmp_path, capsys):
    p = tmp_path / "b.csv"
    p.write_text("t,sensor_id,value\n0,a,1\n1,a,zz\n")
    (tmp_path / "m.txt").write_text("version = 1\nn = 1\nm = 0\nexog = false\nalpha = -0.5\nbeta = 1\nsigma = 1\nstable = true\nfitted_on = 10\n")
    assert run_cli("detect", p, "--model", tmp_path / "m.txt") == 1
    assert "line 3" in capsys.readouterr().err


def test_internal_error_exits_two(monkeypatch):
    def boom(args):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "eval", boom)
    assert run_cli("eval", "--events", "a", "--truth", "b") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sentinel", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "pipeline" in out.stdout
