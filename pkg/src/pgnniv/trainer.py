"""Full-batch Adam training of the ROM and constitutive parameters."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .constitutive import ConstitutiveModel
from .network import NonFiniteError, PenaltyWeights, forward, parameter_list
from .operators import Grid1D

log = logging.getLogger(__name__)

_ALLOCATOR_TUNED = False


def tune_allocator() -> None:
    """Keep glibc from mmap-ing and trimming every ~1 MB temporary.

    Full-batch iterations allocate the same large arrays thousands of times;
    with the default dynamic thresholds each one page-faults afresh, which
    roughly triples elementwise cost.  No-op off glibc.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return
    _ALLOCATOR_TUNED = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    m_trim_threshold, m_top_pad, m_mmap_threshold = -1, -2, -3
    libc.mallopt(m_mmap_threshold, 256 * 1024 * 1024)
    libc.mallopt(m_trim_threshold, 512 * 1024 * 1024)
    libc.mallopt(m_top_pad, 64 * 1024 * 1024)

TERMS = ("e", "pi1", "pi2", "pi3")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    max_iters: int = 20_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100
    checkpoint_every: int = 5_000
    seed: int = 0
    log_test: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")


LONG_PRESET = TrainConfig(max_iters=100_000)  # five times the desk preset


class Adam:
    """Adam with bias-corrected moments, updating tensors in place."""

    def __init__(self, params: Sequence[T.Tensor], lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainTrace:
    model_param_names: list[str]
    iterations: list[int] = field(default_factory=list)
    cf: list[float] = field(default_factory=list)
    terms: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TERMS})
    test_cf: list[float] = field(default_factory=list)
    test_terms: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TERMS})
    model_params: list[np.ndarray] = field(default_factory=list)

    def record(self, it: int, cf: float, terms: dict, params: np.ndarray, test=None) -> None:
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError(f"trace iterations must increase: {it} after {self.iterations[-1]}")
        self.iterations.append(it)
        self.cf.append(cf)
        for t in TERMS:
            self.terms[t].append(terms[t])
        if test is not None:
            self.test_cf.append(test[0])
            for t in TERMS:
                self.test_terms[t].append(test[1][t])
        self.model_params.append(params)

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def final_cf(self) -> float:
        return self.cf[-1] if self.cf else float("nan")

    def to_csv(self, path) -> None:
        cols = ["iteration", "cf", *(f"mse_{t}" for t in TERMS)]
        has_test = len(self.test_cf) == len(self.iterations) and self.test_cf
        if has_test:
            cols += ["test_cf", *(f"test_mse_{t}" for t in TERMS)]
        cols += self.model_param_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i, it in enumerate(self.iterations):
                row = [it, repr(self.cf[i]), *(repr(self.terms[t][i]) for t in TERMS)]
                if has_test:
                    row += [repr(self.test_cf[i]), *(repr(self.test_terms[t][i]) for t in TERMS)]
                row += [repr(float(v)) for v in self.model_params[i]]
                w.writerow(row)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: TrainTrace, iteration: int):
        super().__init__(message)
        self.trace = trace
        self.iteration = iteration


def flat_model_params(model: ConstitutiveModel) -> tuple[list[str], np.ndarray]:
    names, values = [], []
    for name, p in model.named_parameters().items():
        flat = p.data.ravel()
        if flat.size == 1:
            names.append(name)
        else:
            names.extend(f"{name}[{i}]" for i in range(flat.size))
        values.append(flat)
    return names, np.concatenate(values) if values else np.zeros(0)


def train(
    rom,
    model: ConstitutiveModel,
    dataset,
    weights: PenaltyWeights,
    cfg: TrainConfig,
    grid: Grid1D | None = None,
    on_checkpoint: Callable[[int, TrainTrace], None] | None = None,
) -> TrainTrace:
    """Optimise ``rom`` and ``model`` in place for ``cfg.max_iters`` full-batch steps.

    The trace holds the cost, its four MSE terms and the constitutive
    parameters every ``cfg.log_every`` iterations, plus the initial and final
    states.  ``on_checkpoint`` fires every ``cfg.checkpoint_every`` iterations
    and once at the end.
    """
    tune_allocator()
    grid = grid or dataset.grid
    train_split = dataset.train
    test_split = dataset.test if cfg.log_test and len(dataset.test) else None
    params = parameter_list(rom, model)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    names, _ = flat_model_params(model)
    trace = TrainTrace(model_param_names=names)

    def log_state(it: int, bundle) -> None:
        test = None
        if test_split is not None:
            tb = forward(rom, model, test_split, weights, grid, iteration=it)
            test = (tb.cf.item(), tb.terms)
        trace.record(it, bundle.cf.item(), bundle.terms, flat_model_params(model)[1], test)

    it = 0
    try:
        for it in range(cfg.max_iters):
            T.zero_grad(params)
            bundle = forward(rom, model, train_split, weights, grid, iteration=it)
            if it % cfg.log_every == 0:
                log_state(it, bundle)
                log.debug("iter %d cf %.6g", it, bundle.cf.item())
            bundle.cf.backward()
            opt.step()
            done = it + 1
            if on_checkpoint and cfg.checkpoint_every and done < cfg.max_iters and done % cfg.checkpoint_every == 0:
                on_checkpoint(done, trace)
        it = cfg.max_iters
        final = forward(rom, model, train_split, weights, grid, iteration=it)
        if not trace.iterations or trace.iterations[-1] != it:
            log_state(it, final)
    except NonFiniteError as err:
        raise TrainingDiverged(str(err), trace, it) from err
    if on_checkpoint:
        on_checkpoint(it, trace)
    return trace


def smooth_curve(values: Sequence[float], w: int) -> list[float]:
    """Centered moving average of width ``w``; windows shrink at the edges."""
    if w < 1:
        raise ValueError(f"window must be at least 1, got {w}")
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    w = min(w, x.size)
    lo_off = (w - 1) // 2
    hi_off = w - 1 - lo_off
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.clip(idx - lo_off, 0, x.size)
    hi = np.clip(idx + hi_off + 1, 0, x.size)
    return list((csum[hi] - csum[lo]) / (hi - lo))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def write_trace(trace: TrainTrace, path) -> Path:
    path = Path(path)
    trace.to_csv(path)
    return path
