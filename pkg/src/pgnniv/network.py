"""The physics-constrained predictor: ROM network, residuals and penalised cost."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .constitutive import ConstitutiveModel, flux
from .operators import Grid1D, concat_boundary_flows, element_average, forward_diff
from .tensor import Tensor

INPUT_WIDTH = 4  # g1, g2, q1, q2


class NonFiniteError(FloatingPointError):
    """A residual or the cost became NaN/Inf during a forward pass."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class RomNetwork:
    """Fully connected ``4 -> hidden... -> n`` network with sigmoid hidden layers."""

    def __init__(self, n_out: int, hidden: Sequence[int] = (15, 15), seed: int = 0):
        self.n_out = int(n_out)
        self.hidden = tuple(int(h) for h in hidden)
        rng = np.random.default_rng([seed, 0])
        sizes = (INPUT_WIDTH, *self.hidden, self.n_out)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot uniform
            self.weights.append(T.parameter(rng.uniform(-limit, limit, (fan_in, fan_out)), name=f"rom.W{i}"))
            self.biases.append(T.parameter(np.zeros(fan_out), name=f"rom.b{i}"))

    def __call__(self, x) -> Tensor:
        h = T.as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.add_bias(T.matmul(h, w), b, axis=1)
            if i < last:
                h = T.sigmoid(h)
        return h

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def config(self) -> dict:
        return {"n_out": self.n_out, "hidden": list(self.hidden)}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"rom.{name}: stored shape {value.shape} != {p.shape}")
            p.data[...] = value


@dataclass(frozen=True)
class PenaltyWeights:
    c0: float = 1e7  # prediction error
    c1: float = 1e2  # flow conservation
    c2: float = 1e3  # essential boundary conditions
    c3: float = 1e3  # natural boundary conditions

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"penalty weight {name} must be non-negative, got {v}")


@dataclass
class ForwardBundle:
    y: Tensor  # predicted nodal field      [N, n]
    q: Tensor  # element flux               [N, n-1]
    q_ext: Tensor  # flux with boundary flows [N, n+1]
    e: Tensor  # prediction error           [N, n]
    pi1: Tensor  # flow conservation        [N, n]
    pi2: Tensor  # essential BC residual    [N, 2]
    pi3: Tensor  # natural BC residual      [N, 2]
    cf: Tensor  # scalar cost
    terms: dict[str, float]

    @property
    def f_res(self) -> Tensor:
        return self.pi1


def _arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.asarray(batch.inputs, dtype=np.float64)
    u = np.asarray(batch.u, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != INPUT_WIDTH or len(inputs) == 0:
        raise ValueError(f"batch inputs must be a non-empty [N, 4] array, got {inputs.shape}")
    if u.shape[0] != inputs.shape[0]:
        raise ValueError(f"batch has {inputs.shape[0]} inputs but {u.shape[0]} fields")
    return inputs, u


def forward(
    rom,
    model: ConstitutiveModel,
    batch,
    weights: PenaltyWeights,
    grid: Grid1D,
    iteration: int | None = None,
) -> ForwardBundle:
    """Run the full constrained forward pass on ``batch`` (anything with ``inputs`` and ``u``).

    ``rom`` is any callable mapping an ``[N, 4]`` tensor to ``[N, n]``.
    """
    inputs, u_obs = _arrays(batch)
    if u_obs.shape[1] != grid.n:
        raise ValueError(f"batch has {u_obs.shape[1]} nodes but grid has n={grid.n}")
    nb = inputs.shape[0]
    g1, g2, q1, q2 = (inputs[:, j] for j in range(INPUT_WIDTH))

    y = rom(T.constant(inputs))
    if y.shape != (nb, grid.n):
        raise T.ShapeError(f"ROM produced {y.shape}, expected {(nb, grid.n)}")
    e = T.sub(y, T.constant(u_obs))
    q = flux(model, y, grid)
    q_ext = concat_boundary_flows(q, T.constant(q1), T.constant(q2))
    pi1 = forward_diff(q_ext, grid.L)
    pi2 = T.sub(T.getitem(y, (slice(None), [0, -1])), T.constant(np.stack([g1, g2], axis=1)))
    pi3 = T.sub(T.getitem(q, (slice(None), [0, -1])), T.constant(np.stack([q1, q2], axis=1)))

    m_e, m1, m2, m3 = T.mse(e), T.mse(pi1), T.mse(pi2), T.mse(pi3)
    cf = T.add(
        T.add(T.mul(weights.c0, m_e), T.mul(weights.c1, m1)),
        T.add(T.mul(weights.c2, m2), T.mul(weights.c3, m3)),
    )
    terms = {"e": m_e.item(), "pi1": m1.item(), "pi2": m2.item(), "pi3": m3.item()}
    if not np.isfinite(cf.item()):
        bad = [k for k, v in terms.items() if not np.isfinite(v)]
        raise NonFiniteError(f"non-finite cost {cf.item()} (non-finite terms: {bad or 'none'})", iteration)
    return ForwardBundle(y=y, q=q, q_ext=q_ext, e=e, pi1=pi1, pi2=pi2, pi3=pi3, cf=cf, terms=terms)


def parameter_list(rom, model: ConstitutiveModel) -> list[Tensor]:
    """Trainable tensors in a fixed order: ROM layers first, then the model."""
    return [*rom.parameters(), *model.parameters()]


def predict(rom, model: ConstitutiveModel, inputs: np.ndarray, grid: Grid1D) -> dict[str, np.ndarray]:
    """Network outputs without building residuals: nodal u, element q and element k."""
    y = rom(T.constant(np.asarray(inputs, dtype=np.float64)))
    k = model.eval_k(element_average(y))
    q = T.neg(T.mul(k, forward_diff(y, grid)))
    return {"u": y.data, "q": q.data, "k": k.data}
