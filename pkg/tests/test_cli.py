import json
from pathlib import Path

import pytest

from ota_fedavg.cli import main
from ota_fedavg.config import build_experiment, load_config, resolve_seed
from ota_fedavg.errors import ValidationError
from ota_fedavg.privacy import phi

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def reference_doc(**system):
    doc = json.loads((CONFIGS / "reference.json").read_text())
    doc["system"].update(system)
    return doc


def run(*argv):
    return main([str(a) for a in argv])


def test_schedule_reference(tmp_path):
    out = tmp_path / "plan.json"
    assert run("schedule", "--config", CONFIGS / "reference.json", "--out", out) == 0
    plan = json.loads(out.read_text())["plan"]
    assert sorted(plan["schedule"]) == [2, 3]
    assert plan["theta"] == pytest.approx(0.5, rel=1e-15)
    assert plan["candidates"]


def test_schedule_tiny_epsilon_is_capped(tmp_path):
    doc = reference_doc()
    doc["privacy"]["epsilon"] = 1e-4
    out = tmp_path / "plan.json"
    assert run("schedule", "--config", write(tmp_path, "c.json", doc), "--out", out) == 0
    plan = json.loads(out.read_text())["plan"]
    assert plan["theta"] == pytest.approx(1e-4 * 1.0 / (2 * phi(1e-5)), rel=1e-12)


def test_malformed_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("schedule", "--config", bad) == 2
    assert run("schedule", "--config", tmp_path / "missing.json") == 2
    doc = reference_doc()
    doc["fleet"][1]["channel_gain"] = -1
    assert run("schedule", "--config", write(tmp_path, "neg.json", doc)) == 2
    assert "fleet[1]" in capsys.readouterr().err


def test_config_field_paths():
    doc = reference_doc()
    del doc["privacy"]["epsilon"]
    with pytest.raises(ValidationError, match="privacy.epsilon"):
        build_experiment(doc)
    doc = reference_doc(noise_std="loud")
    with pytest.raises(ValidationError, match="system.noise_std"):
        build_experiment(doc)
    with pytest.raises(ValidationError, match="unknown section"):
        build_experiment({**reference_doc(), "extra": {}})


def test_config_defaults():
    doc = reference_doc()
    del doc["system"]["total_rounds"]
    assert build_experiment(doc).params.total_rounds == 200
    exp = load_config(CONFIGS / "quadratic.json")
    assert all(d.peak_power == 1.0 for d in exp.devices)
    assert exp.params.learning_rate == pytest.approx(1 / exp.params.smoothness)


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("OTA_FEDAVG_SEED", raising=False)
    assert resolve_seed(None, 3) == 3
    assert resolve_seed(5, 3) == 5
    monkeypatch.setenv("OTA_FEDAVG_SEED", "11")
    assert resolve_seed(5, 3) == 11
    monkeypatch.setenv("OTA_FEDAVG_SEED", "x")
    with pytest.raises(ValidationError):
        resolve_seed(5, 3)


def test_simulate_deterministic(tmp_path):
    cfg = CONFIGS / "quadratic.json"
    plan = tmp_path / "plan.json"
    assert run("schedule", "--config", cfg, "--out", plan) == 0
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("simulate", "--config", cfg, "--plan", plan, "--seed", 7, "--out", a) == 0
    assert run("simulate", "--config", cfg, "--plan", plan, "--seed", 7, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    j = tmp_path / "a.json"
    assert run("simulate", "--config", cfg, "--plan", plan, "--seed", 7, "--out", j, "--format", "json") == 0
    assert len(json.loads(j.read_text())) == len(a.read_text().splitlines()) - 1


def test_simulate_errors(tmp_path):
    cfg = CONFIGS / "quadratic.json"
    assert run("simulate", "--config", cfg, "--plan", tmp_path / "nope.json") == 2
    assert run("simulate", "--config", CONFIGS / "reference.json", "--plan", tmp_path / "nope.json") == 2
    plan = tmp_path / "plan.json"
    run("schedule", "--config", cfg, "--out", plan)
    doc = json.loads(plan.read_text())
    doc["plan"]["rounds"] = 10**6
    plan.write_text(json.dumps(doc))
    assert run("simulate", "--config", cfg, "--plan", plan) == 3


def test_bounds_reference(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    run("schedule", "--config", CONFIGS / "reference.json", "--out", plan)
    capsys.readouterr()
    assert run("bounds", "--config", CONFIGS / "reference.json", "--plan", plan) == 0
    report = json.loads(capsys.readouterr().out)
    kinds = {b["bound_kind"]: b["value"] for b in report["bounds"]}
    assert set(kinds) == {"convex-gap", "noiseless-gap", "nonconvex-avg-grad"}
    assert report["privacy"]["epsilon_per_round"] == pytest.approx(2 * 0.5 * phi(1e-5), rel=1e-12)
    assert kinds["convex-gap"] == pytest.approx(json.loads(plan.read_text())["plan"]["predicted_objective"], rel=1e-12)


def test_bounds_nonconvex_marks_gap_unavailable(tmp_path, capsys):
    doc = reference_doc(strong_convexity=0.0)
    doc["solver"]["rounds"] = 10
    cfg = write(tmp_path, "nc.json", doc)
    plan = tmp_path / "plan.json"
    assert run("schedule", "--config", cfg, "--out", plan) == 0
    capsys.readouterr()
    assert run("bounds", "--config", cfg, "--plan", plan) == 0
    report = json.loads(capsys.readouterr().out)
    assert [b["bound_kind"] for b in report["bounds"]] == ["nonconvex-avg-grad"]
    assert {u["bound_kind"] for u in report["unavailable"]} == {"convex-gap", "noiseless-gap"}


def test_bounds_noiseless_full_participation(tmp_path, capsys):
    doc = reference_doc(noise_std=0.0, total_rounds=20)
    cfg = write(tmp_path, "quiet.json", doc)
    plan = {"schedule": [1, 2, 3], "theta": 0.1, "nu": 0.1, "rounds": 20, "local_steps": 1,
            "power_scaling": {"1": 1.0, "2": 0.04, "3": 0.01}, "predicted_objective": 0.0}
    path = write(tmp_path, "plan.json", plan)
    assert run("bounds", "--config", cfg, "--plan", path) == 0
    report = json.loads(capsys.readouterr().out)
    gap = next(b for b in report["bounds"] if b["bound_kind"] == "convex-gap")
    assert gap["value"] == pytest.approx(0.5**20 * 1.0, rel=1e-12)


def test_verify(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--config", CONFIGS / "reference.json", "--instances", 30, "--seed", 1, "--out", out) == 0
    assert json.loads(out.read_text())["passed"]
    assert run("verify", "--instances", 5, "--inject-fault", "--out", out) == 4
    assert not json.loads(out.read_text())["passed"]


def test_verify_refuses_large_fleet(tmp_path):
    doc = reference_doc()
    doc["fleet"] = [{"id": i, "channel_gain": 0.1 + 0.01 * i} for i in range(1, 26)]
    assert run("verify", "--config", write(tmp_path, "big.json", doc)) == 2


def test_schedule_output_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("schedule", "--config", CONFIGS / "logistic.json", "--out", a)
    run("schedule", "--config", CONFIGS / "logistic.json", "--out", b)
    assert a.read_bytes() == b.read_bytes()
