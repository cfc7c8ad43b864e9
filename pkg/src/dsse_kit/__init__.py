"""State estimation for distribution grids: measurement models, a damped
WLS baseline, and a weakly supervised graph neural estimator."""

__version__ = "0.1.0"

from .grid import Branch, Bus, GridNetwork, fixture_path, load_grid, save_grid
from .pf_equations import Measurement, StateVector

__all__ = [
    "Branch",
    "Bus",
    "GridNetwork",
    "Measurement",
    "StateVector",
    "fixture_path",
    "load_grid",
    "save_grid",
    "__version__",
]
