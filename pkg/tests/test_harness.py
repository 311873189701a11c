"""Tests for experiment orchestration: config parsing, seed streams,
privacy resolution, deterministic runs, sweeps, persistence, and the CLI."""
from __future__ import annotations

import csv
import math

import numpy as np
import pytest
import yaml

from privarx import cli, estimator
from privarx.design import NoiseDesignProblem, optimize
from privarx.harness import (
    EXAMPLE1_MODEL,
    ConfigError,
    ExperimentConfig,
    InputLaw,
    NoiseLaw,
    PrivacyPolicy,
    TRACE_COLUMNS,
    _checkpoints,
    config_from_dict,
    reproduce_example1,
    reproduce_example2,
    resolve_privacy,
    run,
    seed_streams,
    sweep,
    write_run_csv,
    write_summary_csv,
    write_sweep_csv,
)
from privarx.model import ArxModel
from privarx.privacy import (
    CalibrationError,
    CoefficientBounds,
    calibrate_all,
    calibrate_b0,
    constants,
)
from privarx.stability import certify


@pytest.fixture(autouse=True)
def _serial(monkeypatch):
    """Force serial execution: process-pool startup dominates at the tiny
    horizons used here, and determinism must not depend on the backend."""
    monkeypatch.setenv("PRIVARX_WORKERS", "1")


def small_doc(**overrides) -> dict:
    doc = {
        "model": {"a": [0.5], "b": [[1.0]]},
        "inputs": {"sigma2": 1.0},
        "noise": {"sigma2": 0.0},
        "privacy": {"mode": "explicit", "b": [1.0, 1.0]},
        "horizon": 200,
        "seeds": [0, 1],
    }
    doc.update(overrides)
    return doc


# --------------------------------------------------------------------------
# Configuration parsing
# --------------------------------------------------------------------------


def test_config_parses_and_expands():
    cfg = config_from_dict(small_doc(seeds=3))
    assert cfg.seeds == (0, 1, 2)              # int expands to a range
    assert cfg.horizon == 200
    assert len(cfg.inputs) == 1                # single mapping replicated
    assert cfg.alpha == 1.0 and cfg.kappa == 1.1 and cfg.trace_points == 400

    cfg3 = config_from_dict({
        "model": {"a": [-0.25, 0.375], "b": [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]},
        "inputs": {"sigma2": 4.0, "cutoff": 10},
        "noise": {"sigma2": 2.0},
        "privacy": {"mode": "calibrate", "epsilon": 0.5, "delta_adj": 1.0},
        "horizon": 50,
        "seeds": [7],
        "alpha": 2.0,
        "trace_points": 17,
    })
    assert len(cfg3.inputs) == 3
    assert all(law.sigma2 == 4.0 and law.cutoff == 10 for law in cfg3.inputs)
    assert cfg3.alpha == 2.0 and cfg3.trace_points == 17


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d.update(horizont=5), "config"),
    (lambda d: d["model"].update(c=[1.0]), "model"),
    (lambda d: d["inputs"].update(sigma=1.0), "inputs[0]"),
    (lambda d: d["noise"].update(var=1.0), "noise"),
    (lambda d: d["privacy"].update(eps=0.5), "privacy"),
])
def test_unknown_keys_rejected_with_path(mutate, fragment):
    doc = small_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert fragment in str(exc.value)


def test_config_required_fields_and_ranges():
    doc = small_doc()
    del doc["horizon"]
    with pytest.raises(ConfigError, match="horizon"):
        config_from_dict(doc)
    doc = small_doc()
    del doc["seeds"]
    with pytest.raises(ConfigError, match="seeds"):
        config_from_dict(doc)
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(horizon=0))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(seeds=[]))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(alpha=0.0))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(trace_points=1))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(inputs=[{"sigma2": 1.0}, {"sigma2": 1.0}]))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(noise={"sigma2": -1.0}))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(inputs={"sigma2": 1.0, "cutoff": -3}))
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(model={"a": [0.5], "b": []}))


def test_privacy_policy_validation():
    with pytest.raises(ConfigError, match="mode"):
        PrivacyPolicy(mode="still")
    with pytest.raises(ConfigError):
        PrivacyPolicy(mode="explicit")                     # scales missing
    with pytest.raises(ConfigError):
        PrivacyPolicy(mode="calibrate", epsilon=1.0)       # delta missing
    with pytest.raises(ConfigError):
        PrivacyPolicy(mode="optimize", epsilon=1.0, delta_adj=1.0)


# --------------------------------------------------------------------------
# Seed streams
# --------------------------------------------------------------------------


def test_seed_streams_layout_and_independence():
    streams = seed_streams(42, 3)
    assert set(streams) == {"system", "output", "input_noise", "input_signal"}
    assert len(streams["input_noise"]) == 3
    assert len(streams["input_signal"]) == 3

    draws = [g.random(50) for g in
             [streams["system"], streams["output"]]
             + streams["input_noise"] + streams["input_signal"]]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.allclose(draws[i], draws[j]), (i, j)

    again = seed_streams(42, 3)
    np.testing.assert_array_equal(again["system"].random(50), draws[0])
    other = seed_streams(43, 3)
    assert not np.allclose(other["system"].random(50), draws[0])


# --------------------------------------------------------------------------
# Privacy resolution
# --------------------------------------------------------------------------


def test_resolve_explicit_passthrough():
    cfg = config_from_dict(small_doc())
    resolved = resolve_privacy(cfg)
    assert resolved.spec.b == (1.0, 1.0)
    assert resolved.consts is None and resolved.cert is None

    with pytest.raises(ConfigError):
        resolve_privacy(config_from_dict(small_doc(
            privacy={"mode": "explicit", "b": [1.0, 1.0, 1.0]})))


def test_resolve_calibrate_matches_direct_route():
    doc = {
        "model": {"a": [-0.25, 0.375],
                  "b": [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]},
        "inputs": {"sigma2": 1.0},
        "noise": {},
        "privacy": {"mode": "calibrate", "epsilon": 0.5, "delta_adj": 1.0,
                    "rho": 0.5},
        "horizon": 10,
        "seeds": [0],
    }
    resolved = resolve_privacy(config_from_dict(doc))
    model = EXAMPLE1_MODEL
    consts = constants(certify(model), model.p, CoefficientBounds((3.0, 7.0, 11.0)))
    direct = calibrate_all(consts, 0.5, 1.0, 0.5)
    np.testing.assert_allclose(resolved.spec.b, direct.b, rtol=1e-12)
    np.testing.assert_allclose(resolved.consts.c1, consts.c1, rtol=1e-12)


def test_resolve_output_only():
    doc = small_doc(privacy={"mode": "calibrate", "epsilon": 1.0,
                             "delta_adj": 1.0, "output_only": True})
    resolved = resolve_privacy(config_from_dict(doc))
    model = ArxModel(a=(0.5,), b=((1.0,),))
    consts = constants(certify(model), model.p, CoefficientBounds((1.0,)))
    assert resolved.spec.b == (calibrate_b0(consts, 1.0, 1.0), 0.0)


def test_resolve_optimize_matches_solver():
    doc = small_doc(privacy={"mode": "optimize", "epsilon": 1.0,
                             "delta_adj": 1.0, "gamma3": 100.0})
    resolved = resolve_privacy(config_from_dict(doc))
    model = ArxModel(a=(0.5,), b=((1.0,),))
    consts = constants(certify(model), model.p, CoefficientBounds((1.0,)))
    problem = NoiseDesignProblem(p=1, q=(1,), gamma3=100.0, epsilon=1.0,
                                 delta_adj=1.0, consts=consts)
    np.testing.assert_allclose(resolved.spec.b, optimize(problem).b_star,
                               rtol=1e-12)
    resolved.spec.check(consts)                    # scales meet the target


def test_resolve_unstable_calibration_fails():
    doc = small_doc(model={"a": [2.0], "b": [[1.0]]},
                    privacy={"mode": "calibrate", "epsilon": 1.0,
                             "delta_adj": 1.0})
    with pytest.raises(CalibrationError, match="attack-demo"):
        resolve_privacy(config_from_dict(doc))


def test_resolve_bounds_mismatch():
    doc = small_doc(privacy={"mode": "calibrate", "epsilon": 1.0,
                             "delta_adj": 1.0, "bounds": [1.0, 2.0]})
    with pytest.raises(ConfigError, match="bound"):
        resolve_privacy(config_from_dict(doc))


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------


def test_checkpoints_shape():
    ks = _checkpoints(1000, 50)
    assert ks[0] == 1 and ks[-1] == 1000
    assert len(ks) <= 50
    assert np.all(np.diff(ks) > 0)
    ks5 = _checkpoints(5, 400)
    assert ks5[0] == 1 and ks5[-1] == 5 and np.all(np.diff(ks5) > 0)
    np.testing.assert_array_equal(_checkpoints(2, 400), [1, 2])


def test_run_is_deterministic(tmp_path):
    cfg = config_from_dict(small_doc())
    first = run(cfg)
    second = run(cfg)
    assert [r.seed for r in first] == [0, 1]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.rows, b.rows)
        assert a.summary["final_err"] == b.summary["final_err"]
    assert not np.array_equal(first[0].rows, first[1].rows)  # seeds differ

    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_run_csv(first[0], p1)
    write_run_csv(second[0], p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_run_trace_contract():
    cfg = config_from_dict(small_doc(seeds=[3], trace_points=25))
    rec = run(cfg)[0]
    marks = _checkpoints(200, 25)
    assert rec.rows.shape == (len(marks), len(TRACE_COLUMNS))
    np.testing.assert_array_equal(rec.rows[:, 0], marks)
    assert rec.summary["failed"] is None
    assert rec.summary["final_k"] == 200
    assert rec.summary["b"] == (1.0, 1.0)
    assert rec.summary["error_bound"] > 0
    # the trace's last row agrees with the summary
    assert rec.rows[-1, 1] == rec.summary["final_err"]
    assert rec.rows[-1, 5] == rec.summary["gamma1_hat"]


def test_near_noiseless_run_converges():
    """With vanishing release scales and no system noise the estimator
    recovers the parameters: the error falls by orders of magnitude."""
    doc = small_doc(privacy={"mode": "explicit", "b": [1e-9, 1e-9]},
                    horizon=2000, seeds=[0])
    rec = run(config_from_dict(doc))[0]
    errs = rec.rows[:, 1]
    assert rec.summary["final_err"] < 1e-2
    assert errs[-1] < errs[2] / 10.0
    assert rec.rows[-1, 4] < 1e-10                 # injected deviation energy
    assert rec.summary["gamma1_hat"] > 0


def test_breakdown_records_partial_trace():
    """An unexcited unstable loop overflows; the run keeps the completed
    prefix and flags the failure instead of raising."""
    doc = small_doc(model={"a": [2.0], "b": [[1.0]]}, horizon=3000, seeds=[0])
    with np.errstate(over="ignore", invalid="ignore"):
        rec = run(config_from_dict(doc))[0]
    assert rec.summary["failed"] is not None
    assert 0 < rec.summary["final_k"] < 3000
    assert rec.rows.shape[0] > 0
    assert np.all(rec.rows[:, 0] <= rec.summary["final_k"])


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def test_sweep_single_value_matches_run():
    cfg = config_from_dict(small_doc())
    result = sweep(cfg, "sigma2", [1.0])
    direct = run(cfg)
    assert result.values == (1.0,)
    for a, b in zip(result.records[0], direct):
        np.testing.assert_array_equal(a.rows, b.rows)
    np.testing.assert_allclose(
        result.mean_final_err[0],
        np.mean([r.summary["final_err"] for r in direct]), rtol=1e-15)


def test_sweep_bookkeeping_consistency():
    cfg = config_from_dict(small_doc(horizon=100))
    result = sweep(cfg, "sigma2", [0.25, 1.0, 4.0])
    assert len(result.records) == 3 and all(len(g) == 2 for g in result.records)
    means = [float(np.mean([r.summary["final_err"] for r in g]))
             for g in result.records]
    np.testing.assert_allclose(result.mean_final_err, means, rtol=1e-15)
    # larger excitation may only help; recount inversions independently
    manual = sum(1 for lo, hi in zip(means, means[1:]) if hi > lo)
    assert result.inversions == manual


def test_sweep_validation():
    cfg = config_from_dict(small_doc())
    with pytest.raises(ConfigError):
        sweep(cfg, "sigma2", [])
    with pytest.raises(ConfigError):
        sweep(cfg, "b0", [1.0])


def test_sweep_epsilon_axis_recalibrates():
    doc = small_doc(model={"a": [0.5], "b": [[1.0]]},
                    privacy={"mode": "calibrate", "epsilon": 1.0,
                             "delta_adj": 1.0},
                    horizon=50, seeds=[0])
    cfg = config_from_dict(doc)
    result = sweep(cfg, "epsilon", [0.5, 2.0])
    b_tight = result.records[0][0].summary["b"]
    b_loose = result.records[1][0].summary["b"]
    assert b_tight[0] > b_loose[0]                 # stricter target, more noise


# --------------------------------------------------------------------------
# Reference benchmarks
# --------------------------------------------------------------------------


def test_reproduce_example1_agrees():
    rows = reproduce_example1()
    names = {r["name"] for r in rows}
    assert {"c1", "c12", "c22", "c32", "c0", "decay"} <= names
    for r in rows:
        assert r["rel_dev"] <= 1e-2, r


def test_reproduce_example2_smoke():
    result = reproduce_example2(horizon=300, seeds=(0, 1),
                                epsilons=(0.5, 8.0))
    assert result.axis == "epsilon" and len(result.mean_final_err) == 2
    assert all(m > 0 for m in result.mean_final_err)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    cfg = config_from_dict(small_doc(seeds=[0], trace_points=10))
    records = run(cfg)
    run_path = tmp_path / "run.csv"
    write_run_csv(records[0], run_path)
    with open(run_path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    parsed = np.array([[float(x) for x in row] for row in rows[1:]])
    np.testing.assert_array_equal(parsed, records[0].rows)  # repr round-trips

    sum_path = tmp_path / "summary.csv"
    write_summary_csv(records, sum_path)
    with open(sum_path) as fh:
        srows = list(csv.reader(fh))
    header = srows[0]
    assert header[0] == "seed" and "failed" in header
    row = dict(zip(header, srows[1]))
    assert row["failed"] == ""                     # None renders empty
    assert [float(v) for v in row["b"].split()] == [1.0, 1.0]
    assert float(row["final_err"]) == records[0].summary["final_err"]


def test_sweep_csv_layout(tmp_path):
    cfg = config_from_dict(small_doc(horizon=60))
    result = sweep(cfg, "sigma2", [1.0, 4.0])
    path = tmp_path / "sweep.csv"
    write_sweep_csv(result, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sigma2", "seed", "final_err"]
    assert len(rows) == 1 + 2 * (len(cfg.seeds) + 1)
    mean_rows = [r for r in rows if r[1] == "mean"]
    np.testing.assert_allclose([float(r[2]) for r in mean_rows],
                               result.mean_final_err, rtol=1e-15)


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------


def _write_cfg(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_cli_stability_and_calibrate(tmp_path, capsys):
    doc = {"model": {"a": [-0.25, 0.375],
                     "b": [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]},
           "privacy": {"epsilon": 0.5, "delta_adj": 1.0}}
    cfg = _write_cfg(tmp_path, doc)
    assert cli.main(["stability", "--config", cfg]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "stable: True" in out and "root:" in out

    assert cli.main(["calibrate", "--config", cfg]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "b0: 346.048" in out


def test_cli_simulate_writes_artifacts(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, small_doc(seeds=[0, 1], horizon=120))
    outdir = tmp_path / "out"
    code = cli.main(["simulate", "--config", cfg, "--outdir", str(outdir)])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "mean_final_err" in out
    assert (outdir / "run_seed0.csv").exists()
    assert (outdir / "run_seed1.csv").exists()
    assert (outdir / "summary.csv").exists()
    png = outdir / "error_curves.png"
    assert png.exists() and png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_sweep_writes_artifacts(tmp_path, capsys):
    doc = small_doc(horizon=80)
    doc["sweep"] = {"axis": "sigma2", "values": [1.0, 4.0]}
    cfg = _write_cfg(tmp_path, doc)
    outdir = tmp_path / "out"
    assert cli.main(["sweep", "--config", cfg, "--outdir", str(outdir)]) \
        == cli.EXIT_OK
    assert "inversions:" in capsys.readouterr().out
    assert (outdir / "sweep_sigma2.csv").exists()
    png = outdir / "sweep_sigma2.png"
    assert png.exists() and png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_optimize(tmp_path, capsys):
    doc = {"model": {"a": [-0.25, 0.375],
                     "b": [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]},
           "privacy": {"mode": "optimize", "epsilon": 1.0, "delta_adj": 1.0,
                       "gamma3": 1000.0}}
    cfg = _write_cfg(tmp_path, doc)
    assert cli.main(["optimize", "--config", cfg]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "b_star:" in out and "f_star:" in out and "error_bound:" in out


def test_cli_attack_demo_default(capsys):
    assert cli.main(["attack-demo"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "T2=7" in out and ">= epsilon" in out
    assert "certifies epsilon on its own at T2=8" in out
    assert "index: 8" in out and "log_ratio: 12.8" in out


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write_cfg(tmp_path, small_doc(extra_key=1), "bad.yaml")
    assert cli.main(["simulate", "--config", bad]) == cli.EXIT_INVALID
    assert "unknown keys" in capsys.readouterr().err

    unstable = _write_cfg(tmp_path, {
        "model": {"a": [2.0], "b": [[1.0]]},
        "privacy": {"epsilon": 1.0, "delta_adj": 1.0}}, "unstable.yaml")
    assert cli.main(["calibrate", "--config", unstable]) == cli.EXIT_INVALID
    assert "not asymptotically stable" in capsys.readouterr().err

    assert cli.main(["stability", "--config", str(tmp_path / "absent.yaml")]) \
        == cli.EXIT_INVALID
    capsys.readouterr()

    blowup = _write_cfg(tmp_path, small_doc(
        model={"a": [2.0], "b": [[1.0]]}, horizon=3000, seeds=[0]),
        "blowup.yaml")
    with np.errstate(over="ignore", invalid="ignore"):
        assert cli.main(["simulate", "--config", blowup]) == cli.EXIT_BREAKDOWN
    assert "breakdown" in capsys.readouterr().err


def test_cli_reproduce_example1(capsys):
    assert cli.main(["reproduce-example1"]) == cli.EXIT_OK
    assert "all within tolerance" in capsys.readouterr().out
