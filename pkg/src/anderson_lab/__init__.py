"""Monte Carlo spectral laboratory for the one-dimensional Anderson model."""

from .lattice import (
    DisorderRealization,
    ModelParams,
    SpectralDecomposition,
    build_hamiltonian,
    diagonalize,
    index_by_center,
    localization_center,
    sample_disorder,
)
from .estimates import CombinationSpec, eval_combination, fh_gradient, paired_gradient

__all__ = [
    "CombinationSpec",
    "DisorderRealization",
    "ModelParams",
    "SpectralDecomposition",
    "build_hamiltonian",
    "diagonalize",
    "eval_combination",
    "fh_gradient",
    "index_by_center",
    "localization_center",
    "paired_gradient",
    "sample_disorder",
]

__version__ = "0.1.0"
