"""phi-FEM Poisson solver, dataset generation and a Fourier neural operator surrogate."""
from .fno import FnoHyperparams, fno_forward, load_checkpoint, param_count, save_checkpoint
from .mesh import build_background_mesh, classify_cells
from .phifem import ground_truth

__all__ = [
    "FnoHyperparams",
    "build_background_mesh",
    "classify_cells",
    "fno_forward",
    "ground_truth",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
]
