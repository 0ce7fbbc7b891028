"""Command-line harness.

Subcommands::

    dgecn synth-gen   --config C --seed S --out DIR
    dgecn train       --config C --seed S --out DIR [--dataset DIR|FILE]
    dgecn bench-noise --config C --seed S --out DIR [--weights FILE] [--solver NAME ...]
    dgecn eval        --pred FILE --gt FILE --mesh FILE --out DIR
    dgecn report      --out DIR [--results FILE]

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .bench import read_results, run_benchmark, trend_table, write_results
from .config import ExperimentConfig, load_config
from .errors import CountMismatch, DgecnError, IoError, ValidationError
from .metrics import MeshModel, auc_add_s, evaluate_pose, model_diameter
from .synth import benchmark_object, default_camera, generate_dataset

log = logging.getLogger("dgecn")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
MANIFEST = "manifest.json"
TRAIN_FILE, TEST_FILE, MESH_FILE = "train.dgpb", "test.dgpb", "mesh.obj"
WEIGHTS_FILE, HISTORY_FILE, RESULTS_FILE = "weights.dgpw", "loss_history.csv", "results.csv"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- commands

def cmd_synth_gen(config: ExperimentConfig) -> dict:
    """Write train/test splits, the object mesh and a manifest; returns the manifest."""
    out = _out_dir(config)
    train, test = generate_dataset(config.dataset, config.seed)
    mesh, _ = benchmark_object(config.dataset.sphere_radius, config.dataset.sphere_points,
                               config.dataset.num_keypoints, config.seed)
    dio.save_dataset(out / TRAIN_FILE, train)
    dio.save_dataset(out / TEST_FILE, test)
    dio.save_obj(out / MESH_FILE, mesh)
    manifest = {
        "format": "DGPB",
        "version": dio.DATASET_VERSION,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "mesh": MESH_FILE,
        "splits": {
            "train": {"file": TRAIN_FILE, "records": len(train), "sha256": _sha256(out / TRAIN_FILE)},
            "test": {"file": TEST_FILE, "records": len(test), "sha256": _sha256(out / TEST_FILE)},
        },
    }
    _write_text(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d train / %d test records to %s", len(train), len(test), out)
    return manifest


def _resolve_split(path: Path, split: str) -> tuple[Path, MeshModel | None]:
    """Dataset file for ``split``: ``path`` is a .dgpb file or a synth-gen directory."""
    if path.is_dir():
        mesh_path = path / MESH_FILE
        name = TRAIN_FILE if split == "train" else TEST_FILE
        mpath = path / MANIFEST
        if mpath.exists():
            try:
                manifest = json.loads(mpath.read_text())
                name = manifest["splits"][split]["file"]
                mesh_path = path / manifest.get("mesh", MESH_FILE)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"malformed manifest {mpath}") from exc
        mesh = dio.load_mesh(mesh_path) if mesh_path.exists() else None
        return path / name, mesh
    if not path.exists():
        raise IoError(f"dataset not found: {path}")
    return path, None


def cmd_train(config: ExperimentConfig, dataset_path) -> tuple:
    """Train DG-PnP on a dataset split; writes weights and a loss-history CSV."""
    from .dgpnp import DgPnpModel, LossWeights, TrainConfig, train

    dataset_path = Path(dataset_path)
    if not dataset_path.exists():
        raise IoError(f"dataset not found: {dataset_path}")
    split_path, mesh = _resolve_split(dataset_path, "train")
    samples = dio.load_dataset(split_path, mesh)
    if not samples:
        raise ValidationError(f"dataset {split_path} has no records")
    out = _out_dir(config)
    first = samples[0].correspondences
    mc, tc = config.model, config.train
    model = DgPnpModel.init(n_keypoints=first.n, k=mc.k, dims=mc.dims, hidden=mc.hidden, dynamic=mc.dynamic,
                            seed=config.seed, kfa_k=0 if first.kfa is None else first.kfa.shape[-1],
                            kfa_dim=mc.kfa_dim, kfa_hidden=mc.kfa_hidden, bandwidth_mode=mc.bandwidth_mode)
    tcfg = TrainConfig(learning_rate=tc.learning_rate, batch_size=tc.batch_size, epochs=tc.epochs,
                       rng_seed=config.seed, weights=LossWeights(*tc.loss_weights), lr_decay=tc.lr_decay)
    model, history = train(model, samples, tcfg, progress=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    dio.save_weights(out / WEIGHTS_FILE, model)
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
    _write_text(out / HISTORY_FILE, "\n".join(lines) + "\n")
    return model, history


def cmd_bench_noise(config: ExperimentConfig, weights_path=None) -> list:
    """Sweep sigma x outlier rate for every configured solver; writes results.csv."""
    from .pnp import RansacConfig

    out = _out_dir(config)
    model = None
    if "dgpnp" in config.solvers:
        wpath = Path(weights_path) if weights_path is not None else out / WEIGHTS_FILE
        if not wpath.exists():
            raise IoError(f"weights not found: {wpath}")
        model = dio.load_weights(wpath)
    rc = config.ransac
    rows = run_benchmark(config.dataset, config.sweep.sigmas, config.sweep.outlier_rates, config.solvers,
                         config.sweep.samples, config.seed, model,
                         RansacConfig(rc.max_iterations, rc.inlier_threshold, 4, rc.confidence, config.seed))
    write_results(out / RESULTS_FILE, rows)
    return rows


def cmd_eval(pred_path, gt_path, mesh_path, out_dir, intr=None) -> dict:
    """Score predicted poses against ground truth; writes metrics.json and metrics.csv."""
    intr = default_camera() if intr is None else intr
    pred_ids, preds = dio.load_poses(pred_path)
    gt_ids, gts = dio.load_poses(gt_path)
    mesh = dio.load_mesh(mesh_path)
    if len(preds) != len(gts) or not preds:
        raise CountMismatch(f"{len(preds)} predictions for {len(gts)} ground-truth poses")
    if pred_ids != gt_ids:
        bad = next(i for i, (a, b) in enumerate(zip(pred_ids, gt_ids)) if a != b)
        raise ValidationError(f"record {bad}: prediction id {pred_ids[bad]!r} != ground-truth id {gt_ids[bad]!r}")
    diameter = model_diameter(mesh)
    reports = [evaluate_pose(p, g, mesh, intr, diameter) for p, g in zip(preds, gts)]
    adds_s = [r.add_s for r in reports]
    summary = {
        "count": len(reports),
        "diameter": diameter,
        "mean_add": float(np.mean([r.add for r in reports])),
        "mean_add_s": float(np.mean(adds_s)),
        "mean_rep": float(np.mean([r.rep for r in reports])),
        "add_accuracy": float(np.mean([r.add_correct for r in reports])),
        "rep_accuracy": float(np.mean([r.rep_correct for r in reports])),
        "auc": auc_add_s(adds_s),
    }
    per_sample = [{"id": i, "add": r.add, "add_s": r.add_s, "rep": r.rep,
                   "add_correct": bool(r.add_correct), "rep_correct": bool(r.rep_correct)}
                  for i, r in zip(gt_ids, reports)]
    out = Path(out_dir)
    _write_text(out / "metrics.json", json.dumps({"summary": summary, "samples": per_sample}, indent=2) + "\n")
    lines = ["id,add,add_s,rep,add_correct,rep_correct"]
    lines += [f"{s['id']},{s['add']!r},{s['add_s']!r},{s['rep']!r},{int(s['add_correct'])},{int(s['rep_correct'])}"
              for s in per_sample]
    _write_text(out / "metrics.csv", "\n".join(lines) + "\n")
    return summary


def cmd_report(out_dir, results_path=None) -> dict:
    """Pivot bench results into plot-ready CSVs and a trend summary."""
    out = Path(out_dir)
    rows = read_results(Path(results_path) if results_path else out / RESULTS_FILE)
    if not rows:
        raise ValidationError("results file has no rows")
    written = []
    for metric in ("mean_add", "mean_add_s", "mean_rep", "add_accuracy", "auc"):
        header, table = trend_table(rows, metric)
        path = out / f"trend_{metric}.csv"
        _write_text(path, "\n".join([",".join(header)] + [",".join(repr(float(v)) for v in r) for r in table]) + "\n")
        written.append(path.name)
    report = {"rows": len(rows), "files": written}
    cells = {(r.solver, r.outlier_rate, r.sigma): r.mean_add for r in rows}
    grid = sorted({(r.outlier_rate, r.sigma) for r in rows})
    if any(r.solver == "epnp" for r in rows) and any(r.solver == "dgpnp" for r in rows):
        lo, hi = grid[0], grid[-1]
        report["trend"] = {
            "low_noise_cell": {"outlier_rate": lo[0], "sigma": lo[1]},
            "high_noise_cell": {"outlier_rate": hi[0], "sigma": hi[1]},
            "epnp_better_at_low_noise": bool(cells[("epnp",) + lo] < cells[("dgpnp",) + lo]),
            "dgpnp_better_at_high_noise": bool(cells[("dgpnp",) + hi] < cells[("epnp",) + hi]),
        }
    _write_text(out / "report.json", json.dumps(report, indent=2) + "\n")
    return report


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from exc
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=_seed, help="override the config seed (u64)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--solver", action="append", help="solver name; repeat for several")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dgecn", description="Synthetic PnP benchmark harness.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth-gen", parents=[common], help="generate train/test datasets")
    p = sub.add_parser("train", parents=[common], help="train DG-PnP weights")
    p.add_argument("--dataset", type=Path, help="synth-gen directory or .dgpb file (default: --out)")
    p = sub.add_parser("bench-noise", parents=[common], help="noise/outlier sweep over solvers")
    p.add_argument("--weights", type=Path, help="DG-PnP weights (default: <out>/weights.dgpw)")
    p = sub.add_parser("eval", parents=[common], help="score predicted poses")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--mesh", type=Path, required=True)
    p = sub.add_parser("report", parents=[common], help="summarize bench results")
    p.add_argument("--results", type=Path)
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(seed=args.seed, output_dir=args.out, solvers=args.solver)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _load(args)
        out = Path(config.output_dir)
        if args.command == "synth-gen":
            m = cmd_synth_gen(config)
            print(f"train={m['splits']['train']['records']} test={m['splits']['test']['records']} "
                  f"hash={m['config_hash'][:12]}")
        elif args.command == "train":
            _, history = cmd_train(config, args.dataset or out)
            print(f"epochs={len(history)} first_loss={history[0]:.6g} final_loss={history[-1]:.6g}")
        elif args.command == "bench-noise":
            rows = cmd_bench_noise(config, args.weights)
            print(f"rows={len(rows)} -> {out / RESULTS_FILE}")
        elif args.command == "eval":
            s = cmd_eval(args.pred, args.gt, args.mesh, out)
            print(" ".join(f"{k}={v:.6g}" for k, v in s.items()))
        elif args.command == "report":
            rep = cmd_report(out, args.results)
            print(json.dumps(rep, indent=2))
    except (IoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DgecnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
