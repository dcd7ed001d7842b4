"""Synthetic datasets from closed-form solutions of ``(k u')' = 0`` on [0, 1].

Each sample draws boundary values ``g1 = u(0)``, ``g2 = u(1)`` uniformly,
evaluates the exact solution at the grid nodes and records the (constant)
boundary flux.  Flux is signed, ``q = -k du/dx``, everywhere in this package.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .operators import Grid1D

VARIANTS = ("homogeneous", "heterogeneous", "constant", "linear", "exponential")
ALIASES = {
    "p1": "homogeneous",
    "p2": "heterogeneous",
    "heterogeneous-linear-k": "heterogeneous",
    "constant-diff": "constant",
    "linear-diff": "linear",
    "exp": "exponential",
    "exponential-diff": "exponential",
}
U_DEPENDENT = {"constant", "linear", "exponential"}
TRAIN_FRACTION = 0.8
FORMAT_VERSION = 1
LN2 = np.log(2.0)


def canonical_variant(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    key = ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown problem variant {name!r}; choose from {', '.join(VARIANTS)}")
    return key


def bc_domain(variant: str) -> tuple[float, float]:
    """Sampling interval for g1, g2; the singular u=0 boundary is kept away from k(u)=u and e^u."""
    return (0.05, 1.0) if canonical_variant(variant) in ("linear", "exponential") else (0.0, 1.0)


def k_of_u(variant: str, u):
    """True diffusivity as a function of the field, for the u-dependent problems."""
    variant = canonical_variant(variant)
    u = np.asarray(u, dtype=np.float64)
    if variant == "constant":
        return np.ones_like(u)
    if variant == "linear":
        return u.copy()
    if variant == "exponential":
        return np.exp(u)
    raise ValueError(f"{variant} diffusivity depends on position, not on u")


def analytic_solution(variant: str, g1, g2, x):
    """Exact ``(u, q, k)`` at ``x``; arguments broadcast against each other.

    ``q`` is signed (``-k u'``) and constant in ``x``.
    """
    variant = canonical_variant(variant)
    g1, g2, x = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (g1, g2, x)))
    if variant in ("homogeneous", "constant"):
        u = (g2 - g1) * x + g1
        q = -(g2 - g1)
        k = np.ones_like(u)
    elif variant == "heterogeneous":
        u = (g2 - g1) / LN2 * np.log(x + 1.0) + g1
        q = -(g2 - g1) / LN2
        k = x + 1.0
    elif variant == "linear":
        rad = (g2**2 - g1**2) * x + g1**2
        if np.any(rad <= 0):
            raise ValueError("non-positive radicand for the linear-diffusivity solution")
        u = np.sqrt(rad)
        q = -(g2**2 - g1**2) / 2.0
        k = u
    else:
        lin = (np.exp(g2) - np.exp(g1)) * x + np.exp(g1)
        u = np.log(lin)
        q = -(np.exp(g2) - np.exp(g1))
        k = lin
    # the formulas reproduce the boundary values only up to rounding; pin them
    u = np.where(x == 0.0, g1, np.where(x == 1.0, g2, u))
    return u, np.broadcast_to(q, u.shape).copy(), k


def add_noise(u_clean, p: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise per node with scale ``p * std(u_clean)`` (population std)."""
    u_clean = np.asarray(u_clean, dtype=np.float64)
    if p < 0:
        raise ValueError(f"noise level must be non-negative, got {p}")
    if u_clean.size < 2:
        raise ValueError("noise scale needs at least two nodes")
    s = p * np.std(u_clean)
    if s == 0.0:
        return u_clean.copy()
    return u_clean + s * rng.standard_normal(u_clean.shape)


@dataclass(frozen=True)
class ProblemSpec:
    variant: str
    n: int = 10
    N: int = 10_000
    noise_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.N < 1:
            raise ValueError(f"sample count must be positive, got {self.N}")
        if self.noise_p < 0:
            raise ValueError(f"noise level must be non-negative, got {self.noise_p}")
        Grid1D(self.n)

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.n)


@dataclass
class DataSplit:
    g1: np.ndarray
    g2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    u: np.ndarray
    u_clean: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        return np.stack([self.g1, self.g2, self.q1, self.q2], axis=1)

    def __len__(self) -> int:
        return len(self.g1)

    def subset(self, idx) -> DataSplit:
        return DataSplit(*(np.asarray(a)[idx] for a in (self.g1, self.g2, self.q1, self.q2, self.u, self.u_clean)))


@dataclass
class Dataset:
    spec: ProblemSpec
    samples: DataSplit
    n_train: int
    extra: dict = field(default_factory=dict)

    @property
    def train(self) -> DataSplit:
        return self.samples.subset(slice(0, self.n_train))

    @property
    def test(self) -> DataSplit:
        return self.samples.subset(slice(self.n_train, None))

    @property
    def grid(self) -> Grid1D:
        return self.spec.grid

    def __len__(self) -> int:
        return len(self.samples)


def _draw_sample(spec: ProblemSpec, index: int, x: np.ndarray):
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = bc_domain(spec.variant)
    while True:
        g1, g2 = rng.uniform(lo, hi, 2)
        try:
            u, q, _ = analytic_solution(spec.variant, g1, g2, x)
        except ValueError:
            continue
        break
    u_noisy = add_noise(u, spec.noise_p, rng) if spec.noise_p > 0 else u.copy()
    return g1, g2, q[0], q[-1], u_noisy, u


def generate(spec: ProblemSpec) -> Dataset:
    """``spec.N`` samples; the first 80% form the training split."""
    x = spec.grid.nodes
    rows = [_draw_sample(spec, i, x) for i in range(spec.N)]
    cols = list(zip(*rows))
    samples = DataSplit(
        g1=np.array(cols[0]),
        g2=np.array(cols[1]),
        q1=np.array(cols[2]),
        q2=np.array(cols[3]),
        u=np.array(cols[4]).reshape(spec.N, spec.n),
        u_clean=np.array(cols[5]).reshape(spec.N, spec.n),
    )
    return Dataset(spec=spec, samples=samples, n_train=int(np.floor(TRAIN_FRACTION * spec.N)))


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def csv_header(n: int) -> list[str]:
    return ["g1", "g2", "q1", "q2", *(f"u{i}" for i in range(1, n + 1)), *(f"uc{i}" for i in range(1, n + 1))]


def _write_split(path: Path, split: DataSplit, abs_flux: bool) -> None:
    q1, q2 = (np.abs(split.q1), np.abs(split.q2)) if abs_flux else (split.q1, split.q2)
    table = np.column_stack([split.g1, split.g2, q1, q2, split.u, split.u_clean])
    n = split.u.shape[1]
    # %.17g round-trips float64 exactly
    np.savetxt(path, table, delimiter=",", header=",".join(csv_header(n)), comments="", fmt="%.17g")


def _read_split(path: Path, n: int, abs_flux: bool) -> DataSplit:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != csv_header(n):
        raise ValueError(f"{path}: header does not match a {n}-node dataset")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.size == 0:
        table = table.reshape(0, 4 + 2 * n)
    g1, g2, q1, q2 = (table[:, j] for j in range(4))
    if abs_flux:
        # q = -k u' with k > 0, so the sign follows g2 - g1
        sign = -np.sign(g2 - g1)
        q1, q2 = sign * q1, sign * q2
    return DataSplit(g1=g1, g2=g2, q1=q1, q2=q2, u=table[:, 4 : 4 + n], u_clean=table[:, 4 + n :])


def save_dataset(ds: Dataset, directory, abs_flux: bool = False) -> dict[str, Path]:
    """Write ``train.csv``, ``test.csv`` and ``metadata.json`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "metadata": out / "metadata.json"}
    _write_split(paths["train"], ds.train, abs_flux)
    _write_split(paths["test"], ds.test, abs_flux)
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": asdict(ds.spec),
        "n_train": ds.n_train,
        "n_test": len(ds) - ds.n_train,
        "flux": "absolute" if abs_flux else "signed",
        **ds.extra,
    }
    paths["metadata"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def load_dataset(directory) -> Dataset:
    src = Path(directory)
    meta_path = src / "metadata.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{src}: dataset format {meta.get('format_version')} != {FORMAT_VERSION}")
    spec = ProblemSpec(**meta["spec"])
    abs_flux = meta.get("flux") == "absolute"
    train = _read_split(src / "train.csv", spec.n, abs_flux)
    test = _read_split(src / "test.csv", spec.n, abs_flux)
    samples = DataSplit(*(np.concatenate([a, b]) for a, b in zip(
        (train.g1, train.g2, train.q1, train.q2, train.u, train.u_clean),
        (test.g1, test.g2, test.q1, test.q2, test.u, test.u_clean),
    )))
    extra = {k: v for k, v in meta.items() if k not in ("format_version", "spec", "n_train", "n_test", "flux")}
    return Dataset(spec=spec, samples=samples, n_train=len(train), extra=extra)
