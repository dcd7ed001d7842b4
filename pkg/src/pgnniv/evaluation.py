"""Error metrics against the closed-form solutions.

Per-sample relative squared L2 errors of u (nodes) and of q, k (element
midpoints), their quantile summaries, per-node relative error profiles and
error maps over the (g1, g2) plane.  Everything here is read-only on the
trained networks.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import analytic_solution, bc_domain, canonical_variant
from .network import predict
from .operators import Grid1D

FIELDS = ("u", "q", "k")
DENOM_FLOOR = 1e-12
DIAGONAL_BAND = 0.02
QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


class EvaluationError(ValueError):
    pass


def _trapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    integrate = getattr(np, "trapezoid", None) or np.trapz  # numpy < 2 only has trapz
    return integrate(y, x, axis=-1)


def e2r_batch(predicted, truth, x) -> np.ndarray:
    """Row-wise ``int (p - t)^2 / int t^2`` by the trapezoid rule over ``x``.

    Rows whose denominator is below ``DENOM_FLOOR`` come back as ``inf``.
    """
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    t = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    if p.shape != t.shape:
        raise EvaluationError(f"predicted {p.shape} and truth {t.shape} differ")
    if p.shape[-1] != x.size:
        raise EvaluationError(f"fields have {p.shape[-1]} points but the grid has {x.size}")
    num = _trapz((p - t) ** 2, x)
    den = _trapz(t**2, x)
    out = np.full(num.shape, np.inf)
    ok = den >= DENOM_FLOOR
    out[ok] = num[ok] / den[ok]
    return out


def e2r(predicted, truth, grid: Grid1D | np.ndarray) -> float:
    """Relative squared L2 error of one field.

    ``grid`` is either a :class:`Grid1D` (nodal fields, or element fields when
    the width is ``n-1``) or explicit sample coordinates.
    """
    p = np.asarray(predicted, dtype=np.float64)
    if p.ndim != 1:
        raise EvaluationError(f"e2r takes one field, got shape {p.shape}")
    return float(e2r_batch(p, truth, _coords(grid, p.size))[0])


def _coords(grid, width: int) -> np.ndarray:
    if not isinstance(grid, Grid1D):
        return np.asarray(grid, dtype=np.float64)
    if width == grid.n:
        return grid.nodes
    if width == grid.n - 1:
        return grid.midpoints
    raise EvaluationError(f"a width-{width} field fits neither the nodes nor the elements of n={grid.n}")


@dataclass
class FieldError:
    """Per-sample errors of one field; ``inf`` marks an undefined (zero-norm) truth."""

    field: str
    e2r: np.ndarray
    excluded: np.ndarray | None = None  # samples left out of the statistics

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ValueError(f"field must be one of {FIELDS}, got {self.field!r}")
        self.e2r = np.asarray(self.e2r, dtype=np.float64)
        if self.excluded is None:
            self.excluded = np.zeros(self.e2r.shape, dtype=bool)

    @property
    def flagged(self) -> np.ndarray:
        return ~np.isfinite(self.e2r)

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flagged & ~self.excluded))

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(self.excluded))

    def stats(self) -> ErrorStats:
        s = stats(self.e2r[~self.excluded])
        s.n_excluded = self.n_excluded
        return s


@dataclass
class ErrorStats:
    min: float
    Q1: float
    Q2: float
    Q3: float
    max: float
    n_finite: int = 0
    n_flagged: int = 0
    n_excluded: int = 0

    def as_row(self) -> list[float]:
        return [self.min, self.Q1, self.Q2, self.Q3, self.max]


def stats(errors: Sequence[float]) -> ErrorStats:
    """Five-number summary with linear interpolation between order statistics.

    Non-finite entries are left out and counted in ``n_flagged``.
    """
    a = np.asarray(errors, dtype=np.float64).ravel()
    finite = a[np.isfinite(a)]
    if finite.size == 0:
        raise EvaluationError(f"no finite errors to summarise ({a.size} flagged)")
    q = np.quantile(finite, QUANTILES, method="linear")
    return ErrorStats(*map(float, q), n_finite=int(finite.size), n_flagged=int(a.size - finite.size))


def spatial_error(predicted, truth) -> np.ndarray:
    """``|p - t| / |t|`` pointwise; ``inf`` where the truth is (numerically) zero."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise EvaluationError(f"predicted {p.shape} and truth {t.shape} differ")
    out = np.full(p.shape, np.inf)
    ok = np.abs(t) >= DENOM_FLOOR
    out[ok] = np.abs(p[ok] - t[ok]) / np.abs(t[ok])
    return out


@dataclass
class SpatialProfile:
    x: np.ndarray
    median: np.ndarray
    lower: np.ndarray  # 2.5 %
    upper: np.ndarray  # 97.5 %
    n_flagged: np.ndarray


def spatial_profile(errors: np.ndarray, x) -> SpatialProfile:
    """Median and central 95% band of per-node errors across samples (rows)."""
    errs = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    masked = np.where(np.isfinite(errs), errs, np.nan)
    if np.all(np.isnan(masked), axis=0).any():
        raise EvaluationError("some position has no finite error in any sample")
    lo, med, hi = np.nanquantile(masked, [0.025, 0.5, 0.975], axis=0)
    return SpatialProfile(np.asarray(x, dtype=np.float64), med, lo, hi, np.count_nonzero(np.isnan(masked), axis=0))


# ---------------------------------------------------------------------------
# ground truth and network evaluation
# ---------------------------------------------------------------------------

def truth_fields(variant: str, g1, g2, grid: Grid1D) -> dict[str, np.ndarray]:
    """Exact u at nodes, q and k at element midpoints, one row per (g1, g2)."""
    g1 = np.asarray(g1, dtype=np.float64).reshape(-1, 1)
    g2 = np.asarray(g2, dtype=np.float64).reshape(-1, 1)
    u, _, _ = analytic_solution(variant, g1, g2, grid.nodes[None, :])
    _, q, k = analytic_solution(variant, g1, g2, grid.midpoints[None, :])
    return {"u": u, "q": q, "k": k}


def bc_inputs(variant: str, g1, g2) -> np.ndarray:
    """Network inputs ``[g1, g2, q1, q2]`` with the exact boundary flux."""
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    _, q, _ = analytic_solution(variant, g1[:, None], g2[:, None], np.array([[0.0, 1.0]]))
    return np.column_stack([g1, g2, q[:, 0], q[:, 1]])


@dataclass
class Evaluation:
    variant: str
    g1: np.ndarray
    g2: np.ndarray
    predicted: dict[str, np.ndarray]
    truth: dict[str, np.ndarray]
    errors: dict[str, FieldError]
    grid: Grid1D
    band: float = DIAGONAL_BAND
    summary: dict[str, ErrorStats] = field(default_factory=dict)

    def profile(self, name: str) -> SpatialProfile:
        err = spatial_error(self.predicted[name], self.truth[name])
        keep = ~self.errors[name].excluded
        x = self.grid.nodes if name == "u" else self.grid.midpoints
        return spatial_profile(err[keep], x)


def evaluate_predictions(
    variant: str, g1, g2, predicted: dict[str, np.ndarray], grid: Grid1D, band: float = DIAGONAL_BAND
) -> Evaluation:
    """Score already-computed network outputs against the exact solutions."""
    variant = canonical_variant(variant)
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    truth = truth_fields(variant, g1, g2, grid)
    near_diag = np.abs(g1 - g2) < band
    errors = {}
    for name in FIELDS:
        x = grid.nodes if name == "u" else grid.midpoints
        excluded = np.zeros(g1.shape, dtype=bool) if name == "u" else near_diag
        errors[name] = FieldError(name, e2r_batch(predicted[name], truth[name], x), excluded)
    ev = Evaluation(variant, g1, g2, predicted, truth, errors, grid, band)
    for name, fe in errors.items():
        try:
            ev.summary[name] = fe.stats()
        except EvaluationError:
            pass  # e.g. every sample sits in the exclusion band
    return ev


def evaluate(rom, model, variant: str, g1, g2, grid: Grid1D, band: float = DIAGONAL_BAND) -> Evaluation:
    """Run the networks on exact boundary data for each (g1, g2) and score them."""
    inputs = bc_inputs(variant, g1, g2)
    pred = predict(rom, model, inputs, grid)
    return evaluate_predictions(variant, inputs[:, 0], inputs[:, 1], pred, grid, band)


def evaluate_split(rom, model, variant: str, split, grid: Grid1D, band: float = DIAGONAL_BAND) -> Evaluation:
    """Score a dataset split, feeding the networks the split's own inputs."""
    pred = predict(rom, model, split.inputs, grid)
    return evaluate_predictions(variant, split.g1, split.g2, pred, grid, band)


@dataclass
class BcErrorMap:
    g1: np.ndarray  # row coordinates
    g2: np.ndarray  # column coordinates
    e2r: dict[str, np.ndarray]  # [len(g1), len(g2)] per field


def bc_error_map(rom, model, variant: str, grid: Grid1D, resolution: int = 100) -> BcErrorMap:
    """e2r of u, q, k on a uniform ``resolution x resolution`` grid of boundary values.

    All cells go through the networks in a single batch.
    """
    if resolution < 2:
        raise EvaluationError(f"map resolution must be at least 2, got {resolution}")
    lo, hi = bc_domain(variant)
    axis = np.linspace(lo, hi, resolution)
    G1, G2 = np.meshgrid(axis, axis, indexing="ij")
    ev = evaluate(rom, model, variant, G1.ravel(), G2.ravel(), grid, band=0.0)
    maps = {name: ev.errors[name].e2r.reshape(resolution, resolution) for name in FIELDS}
    return BcErrorMap(axis, axis.copy(), maps)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_stats_table(summary: dict[str, ErrorStats], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "min", "Q1", "Q2", "Q3", "max", "n_finite", "n_flagged", "n_excluded"])
        for name, s in summary.items():
            w.writerow([name, *map(_fmt, s.as_row()), s.n_finite, s.n_flagged, s.n_excluded])
    return path


def write_per_sample(ev: Evaluation, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g1", "g2", *(f"e2r_{f}" for f in FIELDS), "excluded_qk"])
        for i in range(len(ev.g1)):
            w.writerow([_fmt(ev.g1[i]), _fmt(ev.g2[i]), *(_fmt(ev.errors[f].e2r[i]) for f in FIELDS),
                        int(ev.errors["q"].excluded[i])])
    return path


def write_profile(profile: SpatialProfile, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "median", "lower_2.5", "upper_97.5", "n_flagged"])
        for row in zip(profile.x, profile.median, profile.lower, profile.upper, profile.n_flagged):
            w.writerow([*map(_fmt, row[:4]), int(row[4])])
    return path


def write_bc_map(m: BcErrorMap, name: str, path) -> Path:
    """Matrix CSV: first column g1, header row the g2 values."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g1\\g2", *map(_fmt, m.g2)])
        for g, row in zip(m.g1, m.e2r[name]):
            w.writerow([_fmt(g), *map(_fmt, row)])
    return path


def write_curve(points: Sequence[tuple[float, float]], path, header=("u", "k")) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in points:
            w.writerow([_fmt(a), _fmt(b)])
    return path
