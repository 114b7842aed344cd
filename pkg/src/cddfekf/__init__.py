"""Continuous-discrete derivative-free extended Kalman filters.

Conventional, Cholesky square-root and SVD square-root forms under
Euler-Maruyama and Ito-Taylor 1.5 discretizations, with EKF/CKF baselines
and a Monte Carlo benchmark on a coordinated-turn tracking model.
"""

from .core import FilterState, RunResult
from .dfekf import DfekfConfig, run_conventional
from .errors import (
    ConfigError,
    FilterBreakdown,
    NonFiniteInput,
    NonFiniteOutput,
    NotPositiveDefinite,
    SingularResidualCovariance,
)
from .examples import build_coordinated_turn
from .model import ModelSpec
from .sqrt_filters import run_squareroot
from .variants import FILTER_IDS, run_filter

__version__ = "0.1.0"
