"""Open-pit mine production scheduling: exact MIP, sliding windows and parallel LNS."""

from .errors import MineError
from .instance import Instance, load_instance, save_instance
from .solution import Solution, VarKey

__version__ = "0.1.0"

__all__ = ["Instance", "MineError", "Solution", "VarKey", "load_instance", "save_instance", "__version__"]
