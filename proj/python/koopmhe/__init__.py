"""Physics-informed Koopman models and moving-horizon state estimation."""

from ._core import *  # noqa: F401,F403
from ._core import KoopmheError, __doc__  # noqa: F401

__version__ = "0.1.0"
