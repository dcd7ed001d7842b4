"""Physics-constrained neural networks with internal variables for 1-D steady diffusion."""
from .checkpoint import Checkpoint, PgnnivConfig
from .constitutive import build_model, export_constitutive_curve
from .datagen import ProblemSpec, generate
from .network import PenaltyWeights, RomNetwork, forward
from .operators import Grid1D
from .trainer import TrainConfig, train

__version__ = "0.1.0"
