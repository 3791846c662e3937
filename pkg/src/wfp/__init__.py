"""Mode-by-mode neural propagation of waves in weakly heterogeneous media.

Modules
-------
fields     periodic grids, amplitude-normalized spectra, field files
solver     leapfrog finite-difference reference solver
locality   first-order scattering checks and spectral locality measures
datagen    media, plane-wave initial data, windowed training sets
network    gated two-branch network, training, checkpoints
pipeline   mode-by-mode propagation with a trained network
cli        the ``wfp`` command
"""
from .fields import Grid, SpatialField, Spectrum, forward_transform, inverse_transform
from .pipeline import WfpModel, predict, rollout
from .solver import Medium, SolverConfig, WaveState, solve

__all__ = [
    "Grid",
    "SpatialField",
    "Spectrum",
    "forward_transform",
    "inverse_transform",
    "Medium",
    "SolverConfig",
    "WaveState",
    "solve",
    "WfpModel",
    "predict",
    "rollout",
]
__version__ = "0.1.0"
