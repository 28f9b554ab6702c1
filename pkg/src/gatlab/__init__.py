"""Graph attention networks on a small numpy autodiff engine, with
diagnostics for depth-related failure modes."""

__version__ = "0.1.0"

from .graph import AdjacencyCSR, Dataset, build_csr, generate_synthetic, load_dataset, save_dataset
from .model import ModelConfig, adaptive_depth, build_model, forward
from .trainer import HParams, hparam_sweep, run_seeds, train

__all__ = [
    "AdjacencyCSR",
    "Dataset",
    "HParams",
    "ModelConfig",
    "adaptive_depth",
    "build_csr",
    "build_model",
    "forward",
    "generate_synthetic",
    "hparam_sweep",
    "load_dataset",
    "run_seeds",
    "save_dataset",
    "train",
]
