"""
Robust secure transceiver design for multi-BS multicast MIMO.

Precoders, receive filters and artificial-noise shapers are designed by
coordinate descent under eavesdropper-MSE and per-BS power constraints,
with stochastic or norm-bounded CSI errors, and checked by Monte-Carlo
link simulation.
"""
import os as _os

# BLAS thread count must be fixed before numpy loads; serial by default
_threads = _os.environ.get("SECUREMIMO_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .numerics import SingularMatrix, hermitian_solve, null_space_projector, finite_diff_gradient, make_rng  # noqa: E402
from .channel import SystemDims, ErrorModel, ChannelSet, NetworkLayout  # noqa: E402
from .mse import TransceiverSolution, RobustFlags, UncertaintyInput  # noqa: E402
from .design import DesignProblem, SolverReport, NoConvergence, coordinate_descent, nbe_design  # noqa: E402

__version__ = "0.1.0"
