import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from bflow.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_MODULE, EXIT_PASS, SUBCOMMANDS, execute, load_schema, main


def run(tmp_path, subcommand, config, *extra):
    cfg = tmp_path / f"{subcommand}.config.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main([subcommand, "--config", str(cfg), "--out", str(out), *extra])
    return code, json.loads((out / f"{subcommand}.json").read_text()), out


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "runtime_ms"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj if not (isinstance(v, dict) and v.get("name", "").endswith("runtime_ms"))]
    return obj


def test_flow_example(tmp_path):
    code, rep, _ = run(tmp_path, "flow", {"model": "interval", "field": "sin_pi", "t": 1, "x": 0.5})
    assert code == EXIT_PASS and rep["passed"]
    (entry,) = rep["results"]["times"]
    assert entry["value"][0] == pytest.approx(0.97250, abs=1e-5)
    assert entry["oracle_error"] <= 1e-8
    assert {c["name"] for c in rep["checks"]} == {"oracle_error[t=1.0]", "boundary_drift[t=1.0]"}


def test_heisenberg_example_csv(tmp_path):
    code, rep, out = run(tmp_path, "heisenberg-rank", {"n": 1, "samples": 1000, "seed": 7})
    assert code == EXIT_PASS and rep["seed"] == 7
    raw = (out / "heisenberg-rank.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert len(rows) == 1000
    assert all(r["rank"] == "1" for r in rows)


def test_section_example(tmp_path):
    code, rep, _ = run(tmp_path, "section", {"psi": "theta + 0.1*sin(theta)"})
    assert code == EXIT_PASS
    assert rep["results"]["sup_restriction_error"] <= 1e-6
    assert rep["results"]["input_psi"] == "theta + 0.1*sin(theta)"


def test_report_matches_published_schema(tmp_path):
    _, rep, _ = run(tmp_path, "condition2", {"model": "halfspace", "field": ["0", "x2"], "x": [0, 0], "expect": True})
    jsonschema.validate(rep, load_schema("report"))
    assert all("tolerance" in c for c in rep["checks"])


def test_failed_check_exits_one(tmp_path):
    code, rep, _ = run(tmp_path, "condition2", {"model": "halfspace", "field": ["x2", "0"], "x": [0, 0], "expect": True})
    assert code == EXIT_FAIL and not rep["passed"] and rep["error"] is None


@pytest.mark.parametrize(
    "config",
    [
        {"model": "interval", "field": "sin_pi", "t": 1, "extra": 1},
        {"model": "interval", "field": "sin_pi", "t": 1, "tolerance": 0},
        {"model": "interval", "field": "sin_pi", "t": 1, "tolerance": -1e-3},
        {"model": "interval", "field": "nope", "t": 1},
        {"model": "disk", "field": "sin_pi", "t": 1},
        {"model": "interval", "field": {"components": ["import os"]}, "t": 1},
        {"model": "interval", "field": "sin_pi"},
    ],
)
def test_config_errors_exit_two(tmp_path, config):
    code, rep, _ = run(tmp_path, "flow", config)
    assert code == EXIT_CONFIG
    assert rep["error"]["code"] == "config_invalid" and not rep["passed"]


def test_unreadable_config_is_reported(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["flow", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert json.loads((tmp_path / "flow.json").read_text())["error"]["code"] == "config_invalid"


def test_module_error_exits_three(tmp_path):
    code, rep, _ = run(tmp_path, "condition2", {"model": "halfspace", "field": ["1", "x2"], "x": [0, 0]})
    assert code == EXIT_MODULE
    assert rep["error"]["code"] == "precondition_violated"


def test_seed_flag_overrides_config(tmp_path):
    cfg = {"b": "x*(1-x)", "random_recipes": {"count": 3}, "seed": 1}
    _, a, _ = run(tmp_path, "counterexample", cfg, "--seed", "18446744073709551615")
    assert a["seed"] == 2**64 - 1
    _, b, _ = run(tmp_path, "counterexample", cfg)
    assert a["results"]["recipes"] != b["results"]["recipes"]


def test_seed_must_fit_u64(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    with pytest.raises(SystemExit):
        main(["suite", "--config", str(cfg), "--seed", str(2**64)])


@pytest.mark.parametrize(
    "subcommand, config",
    [
        ("counterexample", {"random_recipes": {"count": 5}, "expect_obstruction": True}),
        ("factorize", {"variant": "boundary_fixing", "dim": 2, "target": {"random": {"count": 1}}}),
        ("heisenberg-rank", {"n": 2, "samples": 200, "pole_samples": 5, "bracket_samples": 3}),
        ("condition2", {"model": "disk", "field": ["x1*(1-x1^2-x2^2)", "x2*(1-x1^2-x2^2)"], "x": [1, 0]}),
    ],
)
def test_identical_seed_gives_identical_report(tmp_path, subcommand, config):
    first, _ = execute(subcommand, config, seed=11)[:2]
    second, _ = execute(subcommand, config, seed=11)[:2]
    assert json.dumps(strip_timing(first), sort_keys=True) == json.dumps(strip_timing(second), sort_keys=True)


def test_output_written_atomically(tmp_path):
    run(tmp_path, "epsilon", {"phi": "theta + 0.1*cos(theta)", "psi": "theta + 0.1*sin(theta)"})
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["epsilon.json"]


def test_factorize_explicit_target(tmp_path):
    cfg = {"variant": "interior", "dim": 2, "target": {"components": ["x1 + 0.1*sin(x2)", "x2"]}}
    code, rep, _ = run(tmp_path, "factorize", cfg)
    assert code == EXIT_PASS
    (r,) = rep["results"]["runs"]
    assert r["recheck_residual"] <= 1e-9
    assert len(r["factorization"]["factors"]) == 2


def test_suite_subset(tmp_path):
    code, rep, _ = run(tmp_path, "suite", {"criteria": [1, 6]})
    assert code == EXIT_PASS
    assert [c["number"] for c in rep["results"]["criteria"]] == [1, 6]
    assert all(c["name"].startswith(("c1.", "c6.")) for c in rep["checks"])


def test_every_subcommand_has_a_schema():
    for name in SUBCOMMANDS:
        schema = load_schema(name)
        assert schema["additionalProperties"] is False
        jsonschema.Draft202012Validator.check_schema(schema)


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "f.json"
    cfg.write_text(json.dumps({"model": "disk", "field": "rotation", "t": [0.5, -1.0]}))
    proc = subprocess.run(
        [sys.executable, "-m", "bflow", "flow", "--config", str(cfg), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout


def test_parallel_runner_matches_serial(monkeypatch):
    from bflow import acceptance

    serial = acceptance.run_criteria([1, 6, 10], seed=5)
    monkeypatch.setenv("BFLOW_THREADS", "3")
    monkeypatch.setattr(acceptance.os, "cpu_count", lambda: 3)
    assert acceptance.thread_count() == 3
    parallel = acceptance.run_criteria([1, 6, 10], seed=5)
    strip = lambda rs: [strip_timing(r.to_json()) for r in rs]  # noqa: E731
    assert json.dumps(strip(serial), default=str) == json.dumps(strip(parallel), default=str)
