"""Constitutive subnetworks mapping element values of ``u`` to diffusivities ``k``.

Two position-dependent models (one scalar for the whole bar, or one value per
element) and three pointwise ``k(u)`` models (a linear 1x1 convolution, a
two-layer 1x1 convolution with a sigmoid hidden layer, and the closed form
``alpha + beta * u**gamma``).  All of them produce an ``[N, n-1]`` tensor of
element diffusivities.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .operators import Grid1D, element_average, forward_diff
from .tensor import Tensor

KINDS = ("scalar-k", "diagonal-k", "cnn2l", "cnn3l", "parametric")

# fractional powers need u > 0; anything below is clamped and counted
POWER_FLOOR = 1e-6
KERNEL_INIT_RANGE = 0.3
DIFFUSIVITY_INIT = 0.5


class ConstitutiveModel:
    kind: str = ""
    u_dependent: bool = False

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _add(self, name: str, value) -> Tensor:
        t = T.parameter(value, name=f"{self.kind}.{name}")
        self._params[name] = t
        return t

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def config(self) -> dict:
        return {"kind": self.kind}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{self.kind}.{name}: stored shape {value.shape} != {p.shape}")
            p.data[...] = value

    def eval_k(self, u_m: Tensor) -> Tensor:
        raise NotImplementedError


class ScalarK(ConstitutiveModel):
    """Homogeneous material: one diffusivity for every element."""

    kind = "scalar-k"

    def __init__(self, k: float = DIFFUSIVITY_INIT):
        super().__init__()
        self.k = self._add("k", k)

    def eval_k(self, u_m):
        u_m = T.as_tensor(u_m)
        return T.mul(self.k, T.constant(np.ones(u_m.shape)))


class DiagonalK(ConstitutiveModel):
    """Heterogeneous material: an independent diffusivity per element."""

    kind = "diagonal-k"

    def __init__(self, n_elements: int, k: float | Sequence[float] = DIFFUSIVITY_INIT):
        super().__init__()
        self.n_elements = int(n_elements)
        self.k = self._add("k", np.broadcast_to(np.asarray(k, dtype=float), (self.n_elements,)))

    def config(self):
        return {"kind": self.kind, "n_elements": self.n_elements}

    def eval_k(self, u_m):
        u_m = T.as_tensor(u_m)
        return T.broadcast_along(self.k, u_m.shape, axis=1)


class Cnn2L(ConstitutiveModel):
    """Linear pointwise law ``k = w*u + b_pre + b_post``."""

    kind = "cnn2l"
    u_dependent = True

    def __init__(self, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = self._add("weight", rng.uniform(-KERNEL_INIT_RANGE, KERNEL_INIT_RANGE, (1, 1, 1)))
        self.bias_pre = self._add("bias_pre", np.zeros(1))
        self.bias_post = self._add("bias_post", np.full(1, DIFFUSIVITY_INIT))

    def eval_k(self, u_m):
        u_m = T.as_tensor(u_m)
        nb, w = u_m.shape
        x = T.reshape(u_m, (nb, 1, w))
        k = T.conv1d(x, self.weight, self.bias_pre, self.bias_post, "identity")
        return T.reshape(k, (nb, w))


class Cnn3L(ConstitutiveModel):
    """Pointwise law with one sigmoid hidden layer of ``m`` channels."""

    kind = "cnn3l"
    u_dependent = True

    def __init__(self, m: int = 5, rng: np.random.Generator | None = None):
        super().__init__()
        if m < 1:
            raise ValueError(f"hidden width must be positive, got {m}")
        self.m = int(m)
        rng = rng or np.random.default_rng(0)
        r = KERNEL_INIT_RANGE
        self.kernel1 = self._add("kernel1", rng.uniform(-r, r, (1, self.m, 1)))
        self.bias1_pre = self._add("bias1_pre", np.zeros(self.m))
        self.bias1_post = self._add("bias1_post", np.zeros(self.m))
        self.kernel2 = self._add("kernel2", rng.uniform(-r, r, (self.m, 1, 1)))
        self.bias2_pre = self._add("bias2_pre", np.zeros(1))
        self.bias2_post = self._add("bias2_post", np.full(1, DIFFUSIVITY_INIT))

    def config(self):
        return {"kind": self.kind, "m": self.m}

    def eval_k(self, u_m):
        u_m = T.as_tensor(u_m)
        nb, w = u_m.shape
        x = T.reshape(u_m, (nb, 1, w))
        h = T.conv1d(x, self.kernel1, self.bias1_pre, self.bias1_post, "sigmoid")
        k = T.conv1d(h, self.kernel2, self.bias2_pre, self.bias2_post, "identity")
        return T.reshape(k, (nb, w))


class Parametric(ConstitutiveModel):
    """``k(u) = alpha + beta * u**gamma``, evaluated as ``exp(gamma * ln u)``."""

    kind = "parametric"
    u_dependent = True

    def __init__(self, alpha: float = 0.5, beta: float = 0.5, gamma: float = 1.0):
        super().__init__()
        self.alpha = self._add("alpha", alpha)
        self.beta = self._add("beta", beta)
        self.gamma = self._add("gamma", gamma)
        self.clamp_events = 0

    def eval_k(self, u_m):
        u_safe, moved = T.clamp_min(T.as_tensor(u_m), POWER_FLOOR)
        self.clamp_events += moved
        power = T.exp(T.mul(self.gamma, T.log(u_safe)))
        return T.add(self.alpha, T.mul(self.beta, power))


def build_model(kind: str, grid: Grid1D, m: int = 5, seed: int = 0) -> ConstitutiveModel:
    rng = np.random.default_rng([seed, 1])
    if kind == "scalar-k":
        return ScalarK()
    if kind == "diagonal-k":
        return DiagonalK(grid.n - 1)
    if kind == "cnn2l":
        return Cnn2L(rng)
    if kind == "cnn3l":
        return Cnn3L(m, rng)
    if kind == "parametric":
        return Parametric()
    raise ValueError(f"unknown constitutive model {kind!r}; choose from {', '.join(KINDS)}")


def model_from_config(cfg: dict) -> ConstitutiveModel:
    kind = cfg["kind"]
    if kind == "scalar-k":
        return ScalarK()
    if kind == "diagonal-k":
        return DiagonalK(cfg["n_elements"])
    if kind == "cnn2l":
        return Cnn2L()
    if kind == "cnn3l":
        return Cnn3L(cfg["m"])
    if kind == "parametric":
        return Parametric()
    raise ValueError(f"unknown constitutive model {kind!r}")


def eval_k(model: ConstitutiveModel, u_m) -> Tensor:
    return model.eval_k(T.as_tensor(u_m))


def flux(model: ConstitutiveModel, u, grid: Grid1D) -> Tensor:
    """Element flux ``q = -k(u_m) * du/dx`` with ``u_m`` the element average."""
    u = T.as_tensor(u)
    if u.ndim != 2 or u.shape[1] != grid.n:
        raise T.ShapeError(f"flux: expected [N, {grid.n}] nodal field, got {u.shape}")
    k = model.eval_k(element_average(u))
    return T.neg(T.mul(k, forward_diff(u, grid)))


def export_constitutive_curve(
    model: ConstitutiveModel, u_samples: Sequence[float] | None = None, grid: Grid1D | None = None
) -> list[tuple[float, float]]:
    """Tabulate the learned law.

    Pointwise models give ``(u, k(u))`` at each sample.  Position-dependent
    models have no ``u`` argument, so they give ``(x, k)`` at element midpoints.
    """
    if not model.u_dependent:
        if grid is None:
            n_el = getattr(model, "n_elements", None)
            if n_el is None:
                raise ValueError("position-dependent model needs a grid to place its elements")
            grid = Grid1D(n_el + 1)
        x = grid.midpoints
        k = model.eval_k(T.constant(np.zeros((1, x.size)))).data[0]
        return [(float(a), float(b)) for a, b in zip(x, k)]
    if u_samples is None:
        u_samples = np.linspace(0.0, 1.0, 101)
    u = np.asarray(u_samples, dtype=np.float64)
    k = model.eval_k(T.constant(u.reshape(1, -1))).data[0]
    return [(float(a), float(b)) for a, b in zip(u, k)]
