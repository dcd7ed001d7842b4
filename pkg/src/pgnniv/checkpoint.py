"""Run configuration and the JSON checkpoint format."""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .constitutive import KINDS, ConstitutiveModel, build_model
from .datagen import canonical_variant
from .network import PenaltyWeights, RomNetwork
from .operators import Grid1D
from .trainer import TrainConfig

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PgnnivConfig:
    """Everything needed to rebuild a network pair and rerun its training."""

    variant: str = "homogeneous"
    n: int = 10
    hidden: tuple[int, ...] = (15, 15)
    model: str = "scalar-k"
    m: int = 5
    c0: float = 1e7
    c1: float = 1e2
    c2: float = 1e3
    c3: float = 1e3
    learning_rate: float = 3e-4
    max_iters: int = 20_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100
    checkpoint_every: int = 5_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.model not in KINDS:
            raise ValueError(f"unknown constitutive model {self.model!r}; choose from {', '.join(KINDS)}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        Grid1D(self.n)
        self.weights()
        self.train_config()

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.n)

    def weights(self) -> PenaltyWeights:
        return PenaltyWeights(self.c0, self.c1, self.c2, self.c3)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            max_iters=self.max_iters,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )

    def build(self) -> tuple[RomNetwork, ConstitutiveModel]:
        """Freshly initialised networks; the same config always gives the same weights."""
        rom = RomNetwork(self.n, self.hidden, seed=self.seed)
        return rom, build_model(self.model, self.grid, m=self.m, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def updated(self, **changes) -> PgnnivConfig:
        return replace(self, **changes)


CONFIG_KEYS = tuple(f.name for f in fields(PgnnivConfig))


def merge_config(file_values: dict | None = None, overrides: dict | None = None) -> PgnnivConfig:
    """Defaults, then the config file, then explicit overrides (``None`` means unset)."""
    values: dict = {}
    for source in (file_values or {}, overrides or {}):
        unknown = set(source) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        values.update({k: v for k, v in source.items() if v is not None})
    return PgnnivConfig(**values)


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object of configuration keys")
    return data


def provenance_timestamp() -> str:
    """UTC time of the run; ``SOURCE_DATE_EPOCH`` pins it for reproducible files."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class Checkpoint:
    config: PgnnivConfig
    rom: RomNetwork
    model: ConstitutiveModel
    provenance: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: PgnnivConfig) -> Checkpoint:
        rom, model = config.build()
        return cls(config, rom, model, {"iterations": 0, "final_cf": None, "seed": config.seed})

    @property
    def grid(self) -> Grid1D:
        return self.config.grid

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"rom.{k}": p.data for k, p in self.rom.named_parameters().items()}
        out.update({f"model.{k}": p.data for k, p in self.model.named_parameters().items()})
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "model": self.model.config(),
            "arrays": {
                name: {"shape": list(a.shape), "data": [float(v) for v in np.ravel(a)]}
                for name, a in self.arrays().items()
            },
            "provenance": dict(self.provenance),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        # json writes floats with repr, which round-trips float64 exactly
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        tmp.replace(path)
        return path

    @classmethod
    def from_dict(cls, d: dict) -> Checkpoint:
        version = d.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint format {version} is not supported (expected {CHECKPOINT_VERSION})")
        config = PgnnivConfig(**d["config"])
        ck = cls.fresh(config)
        arrays = {}
        for name, entry in d["arrays"].items():
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        ck.rom.load_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("rom.")})
        ck.model.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
        ck.provenance = dict(d.get("provenance", {}))
        return ck

    @classmethod
    def load(cls, path) -> Checkpoint:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no checkpoint at {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: corrupt checkpoint ({err})") from None
        return cls.from_dict(d)
