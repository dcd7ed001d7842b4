"""Train/evaluate pipelines shared by the command line and the test-suite."""
from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .checkpoint import Checkpoint, PgnnivConfig, provenance_timestamp
from .constitutive import export_constitutive_curve
from .datagen import Dataset, ProblemSpec, generate
from .trainer import TrainTrace, TrainingDiverged, train

log = logging.getLogger(__name__)

SWEEP_AXES = ("dataset_size", "noise_p", "hidden_width_m", "grid_n")
SWEEP_DEFAULTS = {
    "dataset_size": (100, 1000, 10_000),
    "noise_p": (0.0, 0.01, 0.05, 0.10),
    "hidden_width_m": (2, 5, 10),
    "grid_n": (5, 10, 20, 40),
}
EVAL_SAMPLES = 2000
EVAL_SEED_OFFSET = 1_000_003  # keeps the scoring set disjoint from any training seed


def train_checkpoint(config: PgnnivConfig, dataset: Dataset, out_dir=None) -> tuple[Checkpoint, TrainTrace]:
    """Train fresh networks on ``dataset``; with ``out_dir`` write checkpoints and the trace.

    Intermediate checkpoints land in ``checkpoint_<iter>.json`` and the final
    one in ``checkpoint.json``.  On divergence the partial trace is still
    written before :class:`TrainingDiverged` propagates.
    """
    if dataset.spec.n != config.n:
        raise ValueError(f"dataset grid n={dataset.spec.n} does not match config n={config.n}")
    ck = Checkpoint.fresh(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def on_checkpoint(it: int, trace: TrainTrace) -> None:
        if out is None:
            return
        ck.provenance = _provenance(config, it, trace)
        name = "checkpoint.json" if it == config.max_iters else f"checkpoint_{it}.json"
        ck.save(out / name)

    try:
        trace = train(ck.rom, ck.model, dataset, config.weights(), config.train_config(), on_checkpoint=on_checkpoint)
    except TrainingDiverged as err:
        if out is not None:
            err.trace.to_csv(out / "trace.csv")
        raise
    ck.provenance = _provenance(config, config.max_iters, trace)
    if out is not None:
        trace.to_csv(out / "trace.csv")
    return ck, trace


def _provenance(config: PgnnivConfig, it: int, trace: TrainTrace) -> dict:
    return {
        "iterations": int(it),
        "final_cf": trace.final_cf,
        "seed": config.seed,
        "timestamp": provenance_timestamp(),
    }


def evaluation_set(variant: str, n: int, samples: int = EVAL_SAMPLES, seed: int = 0) -> Dataset:
    """Clean, independently seeded samples used to score sweep points on equal footing."""
    return generate(ProblemSpec(variant, n=n, N=samples, noise_p=0.0, seed=seed + EVAL_SEED_OFFSET))


def select_split(dataset: Dataset, which: str):
    if which == "test":
        return dataset.test
    if which == "train":
        return dataset.train
    if which == "all":
        return dataset.samples
    raise ValueError(f"split must be test, train or all, got {which!r}")


def score(ck: Checkpoint, dataset: Dataset, split: str = "test", band: float = ev.DIAGONAL_BAND) -> ev.Evaluation:
    if dataset.spec.n != ck.config.n:
        raise ValueError(f"dataset grid n={dataset.spec.n} does not match checkpoint n={ck.config.n}")
    part = select_split(dataset, split)
    if len(part) == 0:
        raise ValueError(f"the {split} split is empty")
    return ev.evaluate_split(ck.rom, ck.model, dataset.spec.variant, part, ck.grid, band)


def write_evaluation(
    ck: Checkpoint,
    result: ev.Evaluation,
    out_dir,
    map_resolution: int = 100,
    curve: tuple[float, float, int] | None = None,
    meta: dict | None = None,
) -> dict[str, Path]:
    """Quantile table, per-sample errors, spatial profiles, BC maps and (optionally) the k curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "stats": ev.write_stats_table(result.summary, out / "stats.csv"),
        "per_sample": ev.write_per_sample(result, out / "per_sample.csv"),
    }
    for name in ev.FIELDS:
        try:
            files[f"profile_{name}"] = ev.write_profile(result.profile(name), out / f"profile_{name}.csv")
        except ev.EvaluationError as err:
            log.warning("no spatial profile for %s: %s", name, err)
    if map_resolution:
        m = ev.bc_error_map(ck.rom, ck.model, result.variant, ck.grid, map_resolution)
        for name in ev.FIELDS:
            files[f"bc_map_{name}"] = ev.write_bc_map(m, name, out / f"bc_map_{name}.csv")
    if curve is not None:
        lo, hi, points = curve
        if ck.model.u_dependent:
            pts = export_constitutive_curve(ck.model, np.linspace(lo, hi, points))
            header = ("u", "k")
        else:
            pts = export_constitutive_curve(ck.model, grid=ck.grid)
            header = ("x", "k")
        files["constitutive"] = ev.write_curve(pts, out / "constitutive.csv", header)
    files["metadata"] = out / "metadata.json"
    files["metadata"].write_text(json.dumps({
        "config": ck.config.to_dict(),
        "provenance": ck.provenance,
        "exclusion_band": result.band,
        "n_samples": len(result.g1),
        **(meta or {}),
    }, indent=2, sort_keys=True) + "\n")
    return files


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepSpec:
    axis: str
    values: list
    base: PgnnivConfig
    dataset_size: int = 10_000
    noise_p: float = 0.0
    eval_samples: int = EVAL_SAMPLES

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(SWEEP_AXES)}")
        if not self.values:
            raise ValueError("a sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"sweep values must be strictly increasing, got {self.values}")
        if self.axis in ("dataset_size", "hidden_width_m", "grid_n"):
            if any(int(v) != v for v in self.values):
                raise ValueError(f"{self.axis} values must be integers")
            self.values = [int(v) for v in self.values]
        if self.axis == "hidden_width_m" and self.base.model != "cnn3l":
            raise ValueError("hidden_width_m only applies to the cnn3l model")

    def point(self, value) -> tuple[PgnnivConfig, ProblemSpec]:
        cfg, size, noise = self.base, self.dataset_size, self.noise_p
        if self.axis == "dataset_size":
            size = value
        elif self.axis == "noise_p":
            noise = float(value)
        elif self.axis == "hidden_width_m":
            cfg = cfg.updated(m=value)
        else:
            cfg = cfg.updated(n=value)
        return cfg, ProblemSpec(cfg.variant, n=cfg.n, N=size, noise_p=noise, seed=cfg.seed)


@dataclass
class PointResult:
    value: float
    status: str
    mean: dict[str, float] = field(default_factory=dict)
    stderr: dict[str, float] = field(default_factory=dict)
    count: dict[str, int] = field(default_factory=dict)
    median: dict[str, float] = field(default_factory=dict)
    error: str = ""


def _mean_se(values: np.ndarray) -> tuple[float, float, int]:
    v = values[np.isfinite(values)]
    if v.size == 0:
        return math.nan, math.nan, 0
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else math.nan
    return float(np.mean(v)), se, int(v.size)


def run_point(spec: SweepSpec, value, out_dir) -> PointResult:
    """One train + evaluate cycle; failures are captured, never raised."""
    out = Path(out_dir)
    try:
        cfg, pspec = spec.point(value)
        data = generate(pspec)
        ck, _ = train_checkpoint(cfg, data, out)
        result = ev.evaluate_split(
            ck.rom, ck.model, cfg.variant, evaluation_set(cfg.variant, cfg.n, spec.eval_samples, cfg.seed).samples,
            ck.grid,
        )
        write_evaluation(ck, result, out / "eval", map_resolution=0,
                         meta={"sweep_axis": spec.axis, "sweep_value": value, "dataset": _spec_dict(pspec)})
        res = PointResult(value, "ok")
        for name in ev.FIELDS:
            fe = result.errors[name]
            res.mean[name], res.stderr[name], res.count[name] = _mean_se(fe.e2r[~fe.excluded])
            res.median[name] = result.summary[name].Q2 if name in result.summary else math.nan
        return res
    except Exception as err:  # a failed point must not sink the sweep
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.txt").write_text(traceback.format_exc())
        return PointResult(value, "failed", error=f"{type(err).__name__}: {err}")


def _spec_dict(p: ProblemSpec) -> dict:
    return {"variant": p.variant, "n": p.n, "N": p.N, "noise_p": p.noise_p, "seed": p.seed}


def _point_dir(root: Path, axis: str, value) -> Path:
    return root / f"{axis}={value}"


def run_sweep(spec: SweepSpec, out_dir, jobs: int = 1) -> list[PointResult]:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    dirs = [_point_dir(root, spec.axis, v) for v in spec.values]
    if jobs > 1 and len(spec.values) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_point, [spec] * len(dirs), spec.values, dirs))
    else:
        results = [run_point(spec, v, d) for v, d in zip(spec.values, dirs)]
    write_aggregate(spec, results, root / "aggregate.csv")
    return results


def write_aggregate(spec: SweepSpec, results: Sequence[PointResult], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [spec.axis, "status"]
        for name in ev.FIELDS:
            cols += [f"mean_e2r_{name}", f"stderr_e2r_{name}", f"median_e2r_{name}", f"count_{name}"]
        w.writerow(cols + ["error"])
        for r in results:
            row = [r.value, r.status]
            for name in ev.FIELDS:
                row += [repr(r.mean.get(name, math.nan)), repr(r.stderr.get(name, math.nan)),
                        repr(r.median.get(name, math.nan)), r.count.get(name, 0)]
            w.writerow(row + [r.error])
    return path
