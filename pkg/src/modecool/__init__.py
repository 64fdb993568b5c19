"""Normal modes, parametric mode exchange and indirect cooling of mixed-species ion crystals."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
