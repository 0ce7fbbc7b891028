"""Noise-sweep benchmark: solvers x sigma x outlier rate, one row per cell."""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DgecnError, IoError, ParseError, ValidationError
from .geometry import Pose
from .metrics import auc_add_s, evaluate_pose, model_diameter
from .pnp import RansacConfig, epnp_solve, ransac_pnp
from .synth import SynthConfig, benchmark_object, default_camera, make_sample, sample_seed

BENCH_SPLIT = 2


@dataclass(frozen=True)
class ResultRow:
    solver: str
    sigma: float
    outlier_rate: float
    mean_add: float
    mean_add_s: float
    mean_rep: float
    add_accuracy: float
    rep_accuracy: float
    auc: float
    ms_per_solve: float
    failures: int = 0

    def __post_init__(self):
        for name in ("add_accuracy", "rep_accuracy", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")

    @property
    def key(self):
        return (self.solver, self.outlier_rate, self.sigma)


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]


def thread_limit() -> int:
    """Worker count: ``DGECN_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("DGECN_THREADS")
    if raw is None or raw.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"DGECN_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValidationError(f"DGECN_THREADS must be a positive integer, got {raw!r}")
    return n


def fallback_pose(z_range) -> Pose:
    """Pose reported when a solver raises: identity rotation at mid depth."""
    return Pose(np.eye(3), np.array([0.0, 0.0, 0.5 * (z_range[0] + z_range[1])]))


def solve(solver: str, samples, model=None, ransac: RansacConfig = RansacConfig(), z_range=(1.0, 2.0)):
    """Run one solver over samples; returns (poses, seconds per solve, failure count)."""
    corrs = [s.correspondences for s in samples]
    start = time.perf_counter()
    failures = 0
    if solver == "dgpnp":
        if model is None:
            raise ValidationError("the dgpnp solver needs trained weights")
        from .dgpnp import predict_poses

        poses = predict_poses(model, corrs, check=False)
    elif solver in ("epnp", "ransac"):
        poses = []
        for c in corrs:
            try:
                if solver == "epnp":
                    pts3d, pts2d = c.flat()
                    poses.append(epnp_solve(pts3d, pts2d, c.intrinsics))
                else:
                    poses.append(ransac_pnp(c, ransac).pose)
            except DgecnError:
                failures += 1
                poses.append(fallback_pose(z_range))
    else:
        raise ValidationError(f"unknown solver {solver!r}")
    elapsed = time.perf_counter() - start
    return poses, elapsed / max(len(corrs), 1), failures


def summarize(solver: str, sigma: float, rate: float, samples, poses, seconds: float, failures: int = 0) -> ResultRow:
    mesh = samples[0].model
    diameter = model_diameter(mesh)
    reports = [evaluate_pose(p, s.gt_pose, mesh, s.correspondences.intrinsics, diameter)
               for s, p in zip(samples, poses)]
    adds_s = np.array([r.add_s for r in reports])
    return ResultRow(
        solver=solver,
        sigma=float(sigma),
        outlier_rate=float(rate),
        mean_add=float(np.mean([r.add for r in reports])),
        mean_add_s=float(np.mean(adds_s)),
        mean_rep=float(np.mean([r.rep for r in reports])),
        add_accuracy=float(np.mean([r.add_correct for r in reports])),
        rep_accuracy=float(np.mean([r.rep_correct for r in reports])),
        auc=auc_add_s(adds_s),
        ms_per_solve=1000.0 * seconds,
        failures=int(failures),
    )


def bench_samples(dataset: SynthConfig, seed: int, sigma: float, rate: float, count: int):
    """Test samples for one cell. Poses depend only on (seed, index), so every
    cell sees the same object placements and only the noise differs."""
    mesh, kps = benchmark_object(dataset.sphere_radius, dataset.sphere_points, dataset.num_keypoints, seed)
    intr = default_camera()
    return [make_sample(dataset, sample_seed(seed, BENCH_SPLIT, i), mesh, kps, intr, sigma=sigma, outlier_rate=rate)
            for i in range(count)]


def run_benchmark(dataset: SynthConfig, sigmas, rates, solvers, samples: int, seed: int = 0, model=None,
                  ransac: RansacConfig = RansacConfig(), threads: int | None = None) -> list:
    """Evaluate every (sigma, rate, solver) cell; rows come back sorted."""
    threads = thread_limit() if threads is None else threads
    if "dgpnp" in solvers and model is None:
        raise ValidationError("the dgpnp solver needs trained weights")
    cells = [(s, r) for s in sigmas for r in rates]

    def run_cell(cell):
        sigma, rate = cell
        data = bench_samples(dataset, seed, sigma, rate, samples)
        rows = []
        for name in solvers:
            poses, sec, fails = solve(name, data, model, ransac, dataset.z_range)
            rows.append(summarize(name, sigma, rate, data, poses, sec, fails))
        return rows

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(run_cell, cells))
    else:
        batches = [run_cell(c) for c in cells]
    rows = [row for batch in batches for row in batch]
    keys = [r.key for r in rows]
    if len(set(keys)) != len(keys):
        raise ValidationError("duplicate benchmark cells")
    return sorted(rows, key=lambda r: r.key)


def write_results(path, rows) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow([v if isinstance(v, str) else repr(v) for v in astuple(r)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_results(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].split(",") != RESULT_COLUMNS:
        raise ParseError(f"expected header {','.join(RESULT_COLUMNS)}", 1)
    rows = []
    for lineno, cells in enumerate(csv.reader(lines[1:]), 2):
        if not cells:
            continue
        if len(cells) != len(RESULT_COLUMNS):
            raise ParseError(f"expected {len(RESULT_COLUMNS)} fields, got {len(cells)}", lineno)
        try:
            vals = [cells[0]] + [float(c) for c in cells[1:-1]] + [int(cells[-1])]
            rows.append(ResultRow(*vals))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    return rows


def trend_table(rows, metric: str = "mean_add") -> tuple[list, list]:
    """Pivot rows into (header, table) with one line per (rate, sigma) and a
    column per solver; ready for plotting."""
    solvers = sorted({r.solver for r in rows})
    grid = sorted({(r.outlier_rate, r.sigma) for r in rows})
    lookup = {(r.solver, r.outlier_rate, r.sigma): getattr(r, metric) for r in rows}
    header = ["outlier_rate", "sigma"] + solvers
    table = [[rate, sigma] + [lookup.get((s, rate, sigma), float("nan")) for s in solvers] for rate, sigma in grid]
    return header, table
