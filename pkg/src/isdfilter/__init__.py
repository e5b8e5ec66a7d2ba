"""Implicit score-driven filtering.

Time-varying parameters of an observation density are tracked with the
proximal (implicit) update ``argmax log p(y|theta) - 0.5 ||theta - theta_pred||_P^2``
followed by a linear prediction.  The explicit score step is available as a
baseline.  Submodules: :mod:`~isdfilter.densities`, :mod:`~isdfilter.update`,
:mod:`~isdfilter.filter`, :mod:`~isdfilter.estimate`, :mod:`~isdfilter.simulate`,
:mod:`~isdfilter.diagnostics` and :mod:`~isdfilter.cli`.
"""

__version__ = "0.1.0"

from . import errors  # noqa: E402
from .densities import FAMILIES, ScalingSpec, make_model  # noqa: E402
from .estimate import FitConfig, default_transform, fit, lyapunov_solve, neg_avg_loglik  # noqa: E402
from .filter import FilterOptions, FilterPath, StaticParams, predict, run_filter, two_init_probe  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .simulate import DgpSpec, FitSpec, mse, run_replication_study, simulate  # noqa: E402
from .update import PenaltySpec, SolverOptions, esd_update, isd_update  # noqa: E402

__all__ = [
    "BACKEND",
    "FAMILIES",
    "DgpSpec",
    "FilterOptions",
    "FilterPath",
    "FitConfig",
    "FitSpec",
    "PenaltySpec",
    "ScalingSpec",
    "SolverOptions",
    "StaticParams",
    "default_transform",
    "errors",
    "esd_update",
    "fit",
    "isd_update",
    "lyapunov_solve",
    "make_model",
    "mse",
    "neg_avg_loglik",
    "predict",
    "run_filter",
    "run_replication_study",
    "simulate",
    "two_init_probe",
]
