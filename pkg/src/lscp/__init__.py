"""Coverage probability of confidence intervals reported after a Wald pretest.

Library layout:

- :mod:`lscp.distributions` -- special functions and distribution primitives
- :mod:`lscp.quadrature`     -- deterministic nested Gauss-Legendre integration
- :mod:`lscp.coverage`       -- the large-sample coverage probability formula
- :mod:`lscp.oracle`         -- Monte Carlo reference evaluator
- :mod:`lscp.logistic`       -- binomial-logistic fits and pretest quantities
- :mod:`lscp.analysis`       -- grids, minimum-coverage search, bootstrap, simulation
- :mod:`lscp.cli`            -- command-line entry point (``lscp`` subcommands)
"""

__version__ = "0.1.0"

from .coverage import LscpBreakdown, LscpInputs, lscp
from .quadrature import QuadratureSpec

__all__ = ["LscpBreakdown", "LscpInputs", "lscp", "QuadratureSpec", "__version__"]
