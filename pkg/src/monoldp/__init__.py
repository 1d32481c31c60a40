"""Small-noise large deviations for semilinear SPDEs with monotone drift.

Spectral Galerkin truncation of the state space, an exponential-Euler
skeleton solver, Monte-Carlo simulation of the mild solution, the
rate functional ``1/2 int ||u||^2`` and empirical checks of the large
deviation principle.
"""
from .spectral import *  # noqa: F401,F403
from .models import *  # noqa: F401,F403
from .skeleton import *  # noqa: F401,F403
from .simulate import *  # noqa: F401,F403
from .rate import *  # noqa: F401,F403
from .verify import *  # noqa: F401,F403

__version__ = "0.1.0"
