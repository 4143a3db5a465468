"""Covariance-constrained online linear-quadratic control.

Submodules
----------
linalg      validated dense symmetric linear algebra (compiled or pure kernels)
sdp         standard-form semidefinite programming via a homogeneous
            self-dual interior-point method
controller  per-step covariance-constrained policy synthesis, horizon lifting,
            and estimation-error tolerances
baselines   Riccati-based reference controllers
stability   sequential stability certificates and disturbance envelopes
scenarios   time-varying benchmark systems
harness     closed-loop simulation, cost reports, sweeps, and the CLI backend
"""

from ._backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
