import json
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from dgecn.bench import ResultRow, read_results, run_benchmark, thread_limit, trend_table, write_results
from dgecn.cli import cmd_eval, cmd_report, cmd_synth_gen, cmd_train, run
from dgecn.config import ExperimentConfig, SweepConfig, load_config, save_config
from dgecn.errors import CountMismatch, InvalidRate, InvalidSigma, IoError, ParseError, ValidationError
from dgecn.geometry import Pose
from dgecn.io import load_dataset, load_mesh, load_weights, save_poses
from dgecn.metrics import auc_add_s
from dgecn.synth import SynthConfig
from conftest import random_pose

TINY = {
    "dataset": {"n_train": 200, "n_test": 20},
    "sweep": {"sigmas": [0, 5, 10, 15], "outlier_rates": [0.1, 0.3], "samples": 4},
    "model": {"dims": [6, 16, 16, 32], "hidden": 64},
    "train": {"epochs": 3, "learning_rate": 0.003},
}


def _tiny(tmp, **over):
    data = json.loads(json.dumps(TINY))
    data.update(over)
    data["output_dir"] = str(tmp)
    return ExperimentConfig.from_dict(data)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = _tiny(out)
    manifest = cmd_synth_gen(cfg)
    model, history = cmd_train(cfg, out)
    return cfg, out, manifest, model, history


# ---------------------------------------------------------------- config

def test_config_defaults_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.dataset.n_train == 20000 and cfg.dataset.n_test == 2000
    save_config(tmp_path / "c.json", cfg)
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_sigma_out_of_range_names_bound():
    with pytest.raises(InvalidSigma, match=r"\[0, 15\]"):
        ExperimentConfig.from_dict({"sweep": {"sigmas": [0, 16]}})
    with pytest.raises(InvalidSigma, match=r"\[0, 15\]"):
        SynthConfig(sigma_range=(0, 16))


@pytest.mark.parametrize(
    "data,exc",
    [
        ({"sweep": {"outlier_rates": [1.0]}}, InvalidRate),
        ({"sweep": {"outlier_rates": [-0.1]}}, InvalidRate),
        ({"solvers": []}, ValidationError),
        ({"solvers": ["epnp", "epnp"]}, ValidationError),
        ({"solvers": ["dlt"]}, ValidationError),
        ({"seed": -1}, ValidationError),
        ({"seed": 2**64}, ValidationError),
        ({"bogus": 1}, ValidationError),
        ({"model": {"depth": 3}}, ValidationError),
        ({"train": {"learning_rate": 0}}, ValidationError),
        ({"train": {"loss_weights": [1, 1, -1, 1]}}, ValidationError),
        ({"dataset": "big"}, ValidationError),
    ],
)
def test_config_rejections(data, exc):
    with pytest.raises(exc):
        ExperimentConfig.from_dict(data)


def test_config_load_errors(tmp_path):
    with pytest.raises(IoError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text('{"seed": 1,\n "solvers": [}\n')
    with pytest.raises(ParseError, match="line 2"):
        load_config(tmp_path / "bad.json")


def _perturb(cfg, rng):
    choice = rng.integers(14)
    u = float(rng.uniform(0.01, 0.99))
    if choice == 0:
        return replace(cfg, seed=int(rng.integers(2**63)))
    if choice == 1:
        return replace(cfg, output_dir=f"out{rng.integers(10**9)}")
    if choice == 2:
        return replace(cfg, dataset=replace(cfg.dataset, n_train=int(rng.integers(1, 10**6))))
    if choice == 3:
        return replace(cfg, dataset=replace(cfg.dataset, sphere_radius=0.05 + u))
    if choice == 4:
        return replace(cfg, dataset=replace(cfg.dataset, sigma_range=(0.0, 15.0 * u)))
    if choice == 5:
        return replace(cfg, dataset=replace(cfg.dataset, outlier_range=(0.0, u)))
    if choice == 6:
        return replace(cfg, dataset=replace(cfg.dataset, hypotheses=int(rng.integers(2, 10**4))))
    if choice == 7:
        return replace(cfg, sweep=SweepConfig(sigmas=(15.0 * u,), samples=int(rng.integers(1, 10**6))))
    if choice == 8:
        return replace(cfg, sweep=replace(cfg.sweep, outlier_rates=(u,)))
    if choice == 9:
        return replace(cfg, model=replace(cfg.model, hidden=int(rng.integers(1, 10**6))))
    if choice == 10:
        return replace(cfg, model=replace(cfg.model, dynamic=not cfg.model.dynamic, k=int(rng.integers(1, 10**4))))
    if choice == 11:
        return replace(cfg, train=replace(cfg.train, learning_rate=u * 1e-2))
    if choice == 12:
        return replace(cfg, train=replace(cfg.train, epochs=int(rng.integers(1, 10**6))))
    return replace(cfg, ransac=replace(cfg.ransac, inlier_threshold=10 * u))


def test_config_hash_detects_every_perturbation():
    rng = np.random.default_rng(0)
    base = ExperimentConfig()
    seen = {json.dumps(base.to_dict(), sort_keys=True): base.config_hash()}
    for _ in range(1000):
        cfg = _perturb(base, rng)
        text = json.dumps(cfg.to_dict(), sort_keys=True)
        if text in seen:
            assert seen[text] == cfg.config_hash()
            continue
        h = cfg.config_hash()
        assert h != base.config_hash()
        seen[text] = h
    assert len(set(seen.values())) == len(seen) > 900


# ---------------------------------------------------------------- synth-gen / train

def test_synth_gen_outputs(trained):
    cfg, out, manifest, _, _ = trained
    assert manifest["splits"]["train"]["records"] == 200
    assert manifest["splits"]["test"]["records"] == 20
    assert manifest["config_hash"] == cfg.config_hash()
    assert manifest["seed"] == cfg.seed
    assert json.loads((out / "manifest.json").read_text()) == manifest
    assert len(load_dataset(out / "train.dgpb")) == 200
    assert len(load_mesh(out / "mesh.obj").vertices) == cfg.dataset.sphere_points


def test_synth_gen_deterministic(tmp_path, trained):
    _, out, manifest, _, _ = trained
    again = cmd_synth_gen(_tiny(tmp_path))
    for name in ("train.dgpb", "test.dgpb", "mesh.obj"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()
    # the output directory is part of the hashed config; the splits are not affected by it
    assert again["splits"] == manifest["splits"]
    assert again["config_hash"] == _tiny(tmp_path).config_hash() != manifest["config_hash"]
    other = cmd_synth_gen(_tiny(tmp_path / "s1", seed=1))
    assert other["splits"]["train"]["sha256"] != manifest["splits"]["train"]["sha256"]


def test_default_config_sizes(tmp_path):
    manifest = cmd_synth_gen(replace(ExperimentConfig(), output_dir=str(tmp_path)))
    assert manifest["splits"]["train"]["records"] == 20000
    assert manifest["splits"]["test"]["records"] == 2000


def test_train_outputs(trained):
    cfg, out, _, model, history = trained
    assert len(history) == 3
    assert history[-1] < history[0]
    lines = (out / "loss_history.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss"
    assert [float(l.split(",")[1]) for l in lines[1:]] == history
    back = load_weights(out / "weights.dgpw")
    assert set(back.parameters()) == set(model.parameters())


def test_train_deterministic(tmp_path, trained):
    cfg, out, _, _, _ = trained
    cmd_train(replace(cfg, output_dir=str(tmp_path)), out)
    assert (tmp_path / "weights.dgpw").read_bytes() == (out / "weights.dgpw").read_bytes()


def test_train_missing_dataset(tmp_path):
    missing = tmp_path / "nowhere"
    with pytest.raises(IoError, match="nowhere"):
        cmd_train(_tiny(tmp_path), missing)


# ---------------------------------------------------------------- bench / report

@pytest.fixture(scope="module")
def bench_rows(trained):
    cfg, out, _, model, _ = trained
    return run_benchmark(cfg.dataset, cfg.sweep.sigmas, cfg.sweep.outlier_rates, ["epnp", "dgpnp"], 4, 0, model)


def test_bench_rows_complete_and_sorted(bench_rows):
    assert len(bench_rows) == 16
    keys = [r.key for r in bench_rows]
    assert len(set(keys)) == 16
    assert keys == sorted(keys)
    for r in bench_rows:
        assert 0 <= r.add_accuracy <= 1 and 0 <= r.rep_accuracy <= 1 and r.ms_per_solve > 0


def test_bench_exact_epnp():
    rows = run_benchmark(SynthConfig(n_train=1, n_test=1), [0.0], [0.0], ["epnp"], 20, 3)
    assert rows[0].mean_add < 1e-6
    assert rows[0].add_accuracy == 1.0


def test_bench_order_independent_of_threads(trained):
    cfg, _, _, model, _ = trained
    a = run_benchmark(cfg.dataset, [0.0, 10.0], [0.1], ["epnp", "dgpnp"], 3, 0, model, threads=1)
    b = run_benchmark(cfg.dataset, [0.0, 10.0], [0.1], ["epnp", "dgpnp"], 3, 0, model, threads=3)
    strip = lambda rows: [replace(r, ms_per_solve=0.0) for r in rows]
    assert strip(a) == strip(b)


def test_results_csv_round_trip(tmp_path, bench_rows):
    write_results(tmp_path / "r.csv", bench_rows)
    assert read_results(tmp_path / "r.csv") == bench_rows


def test_results_csv_errors(tmp_path, bench_rows):
    write_results(tmp_path / "r.csv", bench_rows[:2])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    (tmp_path / "bad.csv").write_text("\n".join(lines + ["epnp,0.0,0.1,x"]) + "\n")
    with pytest.raises(ParseError, match="line 4"):
        read_results(tmp_path / "bad.csv")
    with pytest.raises(ValidationError):
        ResultRow("epnp", 0.0, 0.1, 0, 0, 0, 1.5, 0, 0, 1.0)


def test_trend_table_shape(bench_rows):
    header, table = trend_table(bench_rows, "mean_add")
    assert header == ["outlier_rate", "sigma", "dgpnp", "epnp"]
    assert len(table) == 8
    assert [row[:2] for row in table] == sorted(row[:2] for row in table)


def test_report(tmp_path, bench_rows):
    write_results(tmp_path / "results.csv", bench_rows)
    rep = cmd_report(tmp_path)
    assert rep["rows"] == 16
    assert set(rep["trend"]) >= {"epnp_better_at_low_noise", "dgpnp_better_at_high_noise"}
    assert json.loads((tmp_path / "report.json").read_text()) == rep
    for name in rep["files"]:
        assert (tmp_path / name).exists()
    lines = (tmp_path / "trend_mean_add.csv").read_text().splitlines()
    assert lines[0] == "outlier_rate,sigma,dgpnp,epnp"
    assert len(lines) == 9


def test_thread_limit(monkeypatch):
    monkeypatch.setenv("DGECN_THREADS", "3")
    assert thread_limit() == 3
    monkeypatch.setenv("DGECN_THREADS", "0")
    with pytest.raises(ValidationError):
        thread_limit()
    monkeypatch.delenv("DGECN_THREADS")
    assert thread_limit() >= 1


# ---------------------------------------------------------------- eval

@pytest.fixture()
def pose_files(tmp_path, trained):
    _, out, _, _, _ = trained
    rng = np.random.default_rng(9)
    gts = [random_pose(rng, z=(1.0, 2.0)) for _ in range(6)]
    save_poses(tmp_path / "gt.csv", gts)
    return tmp_path, out / "mesh.obj", gts


def test_eval_identity(pose_files):
    tmp, mesh, gts = pose_files
    s = cmd_eval(tmp / "gt.csv", tmp / "gt.csv", mesh, tmp / "ev")
    assert s["count"] == 6
    assert s["add_accuracy"] == 1.0 and s["rep_accuracy"] == 1.0 and s["auc"] == 1.0
    data = json.loads((tmp / "ev" / "metrics.json").read_text())
    assert data["summary"] == s and len(data["samples"]) == 6


def test_eval_auc_recomputed(pose_files):
    tmp, mesh, gts = pose_files
    rng = np.random.default_rng(1)
    preds = [Pose(g.rotation, g.translation + rng.normal(0, 0.03, 3)) for g in gts]
    save_poses(tmp / "pred.csv", preds)
    s = cmd_eval(tmp / "pred.csv", tmp / "gt.csv", mesh, tmp / "ev")
    lines = (tmp / "ev" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "id,add,add_s,rep,add_correct,rep_correct"
    adds_s = [float(l.split(",")[2]) for l in lines[1:]]
    assert s["auc"] == auc_add_s(adds_s)
    assert s["mean_add_s"] == pytest.approx(np.mean(adds_s), abs=1e-15)


def test_eval_count_mismatch(pose_files):
    tmp, mesh, gts = pose_files
    save_poses(tmp / "empty.csv", [])
    with pytest.raises(CountMismatch):
        cmd_eval(tmp / "empty.csv", tmp / "gt.csv", mesh, tmp / "ev")
    save_poses(tmp / "short.csv", gts[:3])
    with pytest.raises(CountMismatch):
        cmd_eval(tmp / "short.csv", tmp / "gt.csv", mesh, tmp / "ev")
    save_poses(tmp / "ids.csv", gts, ids=list(range(1, 7)))
    with pytest.raises(ValidationError, match="record 0"):
        cmd_eval(tmp / "ids.csv", tmp / "gt.csv", mesh, tmp / "ev")


# ---------------------------------------------------------------- exit codes

def test_run_exit_codes(tmp_path, trained, capsys):
    _, out, _, _, _ = trained
    assert run(["report", "--out", str(tmp_path), "--results", str(tmp_path / "none.csv")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sweep": {"sigmas": [16]}}))
    assert run(["synth-gen", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "[0, 15]" in capsys.readouterr().err
    assert run(["train", "--out", str(tmp_path), "--dataset", str(tmp_path / "missing")]) == 2
    assert run(["synth-gen", "--config", str(tmp_path / "missing.json")]) == 2
    assert run(["eval", "--pred", str(out / "mesh.obj"), "--gt", str(out / "mesh.obj"),
                "--mesh", str(out / "mesh.obj"), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        run(["synth-gen", "--seed", "-5"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 1


def test_cli_end_to_end_subprocess(tmp_path):
    cfg = dict(TINY)
    cfg["dataset"] = {"n_train": 40, "n_test": 4}
    cfg["sweep"] = {"sigmas": [0, 15], "outlier_rates": [0.3], "samples": 3}
    cfg["train"] = {"epochs": 1}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    out = tmp_path / "o"
    env = dict(os.environ, DGECN_THREADS="1")

    def cli(*args):
        return subprocess.run([sys.executable, "-m", "dgecn", *args], capture_output=True, text=True, env=env)

    common = ["--config", str(tmp_path / "c.json"), "--out", str(out), "--seed", "7"]
    for cmd in ("synth-gen", "train"):
        res = cli(cmd, *common)
        assert res.returncode == 0, res.stderr
    res = cli("bench-noise", *common, "--solver", "epnp", "--solver", "dgpnp")
    assert res.returncode == 0, res.stderr
    assert "rows=4" in res.stdout
    assert cli("report", "--out", str(out)).returncode == 0
    assert (out / "report.json").exists()
    assert json.loads((out / "manifest.json").read_text())["seed"] == 7
    res = cli("bench-noise", *common, "--weights", str(tmp_path / "none.dgpw"))
    assert res.returncode == 2
    assert cli("synth-gen", "--solver", "magic").returncode == 1
