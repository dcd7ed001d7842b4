"""Fixed finite-difference operators on a uniform 1-D grid.

Each operator is a short convolution stencil over the node axis, applied as a
product with the equivalent banded matrix so it composes with the tensor graph.  Their kernels are constants:
they never carry gradients and never show up in a parameter list.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class Grid1D:
    """``n`` equispaced nodes on [0, 1]; element size ``L = 1/(n-1)``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got n={self.n}")

    @property
    def L(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) / (self.n - 1)

    @property
    def midpoints(self) -> np.ndarray:
        x = self.nodes
        return 0.5 * (x[:-1] + x[1:])


@dataclass(frozen=True)
class StencilOp:
    """A constant convolution stencil ``scale * kernel`` applied along the last axis."""

    kernel: tuple[float, ...]
    scale: float = 1.0
    name: str = "stencil"
    trainable: bool = field(default=False, init=False)

    @property
    def width(self) -> int:
        return len(self.kernel)

    def weights(self) -> np.ndarray:
        return self.scale * np.asarray(self.kernel, dtype=np.float64)

    def matrix(self, width: int) -> np.ndarray:
        """Banded ``[width, width-K+1]`` matrix with ``field @ matrix == conv(field, kernel)``."""
        return _stencil_matrix(self.kernel, self.scale, width)

    def __call__(self, field: Tensor) -> Tensor:
        field = T.as_tensor(field)
        if field.ndim != 2:
            raise ShapeError(f"{self.name}: expected [N, width] field, got {field.shape}")
        width = field.shape[1]
        if width < self.width:
            raise ShapeError(f"{self.name}: needs at least {self.width} entries per sample, got {width}")
        # dense banded product: same result as conv1d, far cheaper for small widths.
        # The scale goes on afterwards so integer kernels annihilate constants exactly.
        out = T.matmul(field, T.constant(_stencil_matrix(self.kernel, 1.0, width)))
        return out if self.scale == 1.0 else T.mul(self.scale, out)


@lru_cache(maxsize=64)
def _stencil_matrix_cached(kernel: tuple[float, ...], scale: float, width: int) -> np.ndarray:
    k = len(kernel)
    out = np.zeros((width, width - k + 1))
    for i in range(width - k + 1):
        out[i : i + k, i] = scale * np.asarray(kernel)
    out.setflags(write=False)
    return out


def _stencil_matrix(kernel, scale, width) -> np.ndarray:
    return _stencil_matrix_cached(tuple(float(c) for c in kernel), float(scale), int(width))


AVERAGE_STENCIL = StencilOp(kernel=(0.5, 0.5), name="element_average")


def forward_diff(field, grid: Grid1D | float) -> Tensor:
    """``(f[i+1] - f[i]) / L`` along the last axis: ``[N, w] -> [N, w-1]``.

    ``grid`` may be a :class:`Grid1D` or a bare spacing ``L``; the flux
    residual uses the same spacing on the ``n+1`` extended flux.
    """
    spacing = grid.L if isinstance(grid, Grid1D) else float(grid)
    op = StencilOp(kernel=(-1.0, 1.0), scale=1.0 / spacing, name="forward_diff")
    return op(field)


def element_average(field) -> Tensor:
    """Mean of the two nodal values of each element: ``[N, n] -> [N, n-1]``."""
    return AVERAGE_STENCIL(field)


def concat_boundary_flows(q_elem, q1, q2) -> Tensor:
    """``[q1, q_elem..., q2]`` per sample: ``[N, n-1] -> [N, n+1]``."""
    q_elem, q1, q2 = T.as_tensor(q_elem), T.as_tensor(q1), T.as_tensor(q2)
    if q_elem.ndim != 2:
        raise ShapeError(f"element flows must be [N, n-1], got {q_elem.shape}")
    nb = q_elem.shape[0]
    for name, q in (("q1", q1), ("q2", q2)):
        if q.shape not in ((nb,), (nb, 1)):
            raise ShapeError(f"{name} has shape {q.shape}, expected ({nb},) to match flows {q_elem.shape}")
    return T.concat([T.reshape(q1, (nb, 1)), q_elem, T.reshape(q2, (nb, 1))], axis=1)
