import json

from click.testing import CliRunner

from vmcsim.cli import main


def test_run_then_replay_roundtrip(tmp_path):
    runner = CliRunner()
    r = runner.invoke(main, ["run", "--preset", "crossing",
                             "--out", str(tmp_path), "--name", "cx"])
    assert r.exit_code == 0, r.output
    assert "status=completed" in r.output
    trace = tmp_path / "cx.trace.ndjson"
    metrics = tmp_path / "cx.metrics.json"
    assert trace.exists() and metrics.exists()

    r = runner.invoke(main, ["replay", str(trace), "--compare", str(metrics)])
    assert r.exit_code == 0, r.output
    assert "matches stored metrics" in r.output


def test_replay_flags_tampered_trace(tmp_path):
    runner = CliRunner()
    runner.invoke(main, ["run", "--preset", "crossing",
                         "--out", str(tmp_path), "--name", "cx"])
    trace = tmp_path / "cx.trace.ndjson"
    text = trace.read_text().splitlines()
    text[5] = text[5].replace("0", "1", 1)
    trace.write_text("\n".join(text) + "\n")
    r = runner.invoke(main, ["replay", str(trace)])
    assert r.exit_code != 0


def test_enumerate_conflicts_output():
    runner = CliRunner()
    r = runner.invoke(main, ["enumerate-conflicts", "--robots", "1,2"])
    assert r.exit_code == 0, r.output
    lines = r.output.strip().splitlines()
    assert lines[0].startswith("1 robots: 0.000000")
    assert "31/120" in lines[1]


def test_sweep_writes_table(tmp_path):
    runner = CliRunner()
    r = runner.invoke(main, [
        "sweep", "--preset", "crossing",
        "--axis", "robots.filter_speed=0.4,1.0",
        "--seeds", "2", "--out", str(tmp_path), "--name", "sw"])
    assert r.exit_code == 0, r.output
    data = json.loads((tmp_path / "sw.json").read_text())
    assert data["axis"] == "robots.filter_speed"
    assert len(data["rows"]) == 2
    assert all(row["completed"] == 2 for row in data["rows"])
    assert (tmp_path / "sw.csv").exists()


def test_config_error_has_field_path(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: A\nn_robots: 2\nrobots:\n  goal:\n"
                   "    stiffness: -5\n    f_max: 20\n")
    runner = CliRunner()
    r = runner.invoke(main, ["run", "--config", str(bad)])
    assert r.exit_code != 0
    assert "robots.goal.stiffness" in r.output


def test_exactly_one_config_source_required():
    runner = CliRunner()
    r = runner.invoke(main, ["run"])
    assert r.exit_code != 0
    r = runner.invoke(main, ["run", "--preset", "crossing",
                             "--config", "pyproject.toml"])
    assert r.exit_code != 0
