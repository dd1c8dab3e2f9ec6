import json

import pytest

from conftest import CASES, data_path
from minerail import cli
from minerail.lpfile import parse_lp

NET = data_path("sample-network.json")


def fleet(case):
    return data_path(f"case{case}.json")


def run(*argv):
    return cli.main(list(argv))


def test_solve_writes_schedule(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert run("solve", "--network", NET, "--fleet", fleet(2), "--out", str(out)) == cli.EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["status"] == "optimal" and doc["objective"] == 7
    assert "objective=7" in capsys.readouterr().err


@pytest.mark.parametrize("case", CASES)
def test_every_command_is_byte_identical(tmp_path, case):
    outs = []
    for rep in range(2):
        d = tmp_path / str(rep)
        d.mkdir()
        sched = d / "s.json"
        assert run("solve", "--network", NET, "--fleet", fleet(case), "--out", str(sched)) == 0
        assert run("render", "--network", NET, "--schedule", str(sched), "--out", str(d / "s.svg")) == 0
        assert run("expand", "--network", NET, "--fleet", fleet(case), "--out", str(d / "n.dot")) == 0
        assert run("export-lp", "--network", NET, "--fleet", fleet(case), "--out", str(d / "m.lp"),
                   "--warm-out", str(d / "m.warm")) == 0
        assert run("simulate", "--network", NET, "--fleet", fleet(case), "--out", str(d / "sim")) == 0
        outs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    assert outs[0] == outs[1]
    assert len(outs[0]) >= 7


def test_export_lp_parses(tmp_path):
    out = tmp_path / "m.lp"
    assert run("export-lp", "--network", NET, "--fleet", fleet(3), "--out", str(out), "--no-prune") == 0
    assert parse_lp(out.read_text()).binaries


def test_simulate_single_file(tmp_path, capsys):
    out = tmp_path / "sim.json"
    assert run("simulate", "--network", NET, "--fleet", fleet(2), "--out", str(out)) == 0
    doc = json.loads(out.read_text())
    assert len(doc["plans"]) >= 2
    assert sorted(doc["final_state"]["completed"]) == ["Mtest01#1", "Mtest02#1"]
    assert "pending=0" in capsys.readouterr().err


def test_simulate_directory(tmp_path):
    out = tmp_path / "run"
    assert run("simulate", "--network", NET, "--fleet", fleet(1), "--out", str(out), "--cycles", "2") == 0
    assert sorted(p.name for p in out.iterdir()) == ["final-state.json", "plan-000.json", "plan-001.json"]


def test_expand_to_stdout(capsys):
    assert run("expand", "--network", NET) == 0
    cap = capsys.readouterr()
    assert cap.out.startswith("digraph")
    assert "transit=" in cap.err


def test_missing_file_is_validation_error(capsys):
    assert run("solve", "--network", "/nonexistent.json", "--fleet", fleet(1)) == cli.EXIT_VALIDATION
    assert "error" in capsys.readouterr().err


def test_bad_cycle_length(tmp_path):
    assert run("simulate", "--network", NET, "--fleet", fleet(1), "--cycle-min", "7",
               "--out", str(tmp_path / "x.json")) == cli.EXIT_VALIDATION


def test_bad_penalty(tmp_path):
    assert run("solve", "--network", NET, "--fleet", fleet(1), "--rho", "-1",
               "--out", str(tmp_path / "x.json")) == cli.EXIT_VALIDATION


def test_timeout_exit_code(tmp_path):
    code = run("solve", "--network", NET, "--fleet", fleet(4), "--time-limit", "1e-9",
               "--out", str(tmp_path / "x.json"))
    assert code == cli.EXIT_TIMEOUT


def test_infeasible_exit_code(monkeypatch, tmp_path):
    def boom(model):
        raise cli.InfeasibleTrain("Mtest01#1", "no starting arc left")
    monkeypatch.setattr(cli, "preprocess", boom)
    assert run("solve", "--network", NET, "--fleet", fleet(1), "--out", str(tmp_path / "x")) == cli.EXIT_INFEASIBLE


def test_internal_exit_code(monkeypatch, tmp_path):
    from minerail.replay import Violation

    def broken(*a, **k):
        return [Violation("track", "A-B", 1, ("X", "Y"))]
    monkeypatch.setattr(cli, "replay", broken)
    assert run("solve", "--network", NET, "--fleet", fleet(1), "--out", str(tmp_path / "x")) == cli.EXIT_INTERNAL


def test_config_env_supplies_defaults(monkeypatch, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"beta": 0, "grid-g": 5}))
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    out = tmp_path / "s.json"
    assert run("solve", "--network", NET, "--fleet", fleet(4), "--out", str(out)) == 0
    cheap = json.loads(out.read_text())["objective"]
    monkeypatch.delenv(cli.CONFIG_ENV)
    assert run("solve", "--network", NET, "--fleet", fleet(4), "--out", str(out)) == 0
    assert cheap < json.loads(out.read_text())["objective"]


def test_flag_beats_config(monkeypatch, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"beta": 0}))
    out = tmp_path / "s.json"
    assert run("--config", str(cfg), "solve", "--network", NET, "--fleet", fleet(4), "--beta", "10",
               "--out", str(out)) == 0
    assert json.loads(out.read_text())["objective"] == 428


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run("--config", str(cfg), "expand", "--network", NET) == cli.EXIT_VALIDATION


def test_horizon_in_minutes(capsys):
    assert run("expand", "--network", NET, "--horizon", "40") == 0
    err = capsys.readouterr().err
    assert err  # counts reported
    short = err
    assert run("expand", "--network", NET) == 0
    assert capsys.readouterr().err != short


def test_render_rejects_bad_schedule(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run("render", "--network", NET, "--schedule", str(bad)) == cli.EXIT_VALIDATION
