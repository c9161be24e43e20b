"""Constrained generalized linear models fitted by quadratic-programming IRLS."""
__version__ = "0.1.0"

from .constraints import (  # noqa: E402
    ConstraintSet,
    active_set,
    augment,
    build_monotone_increasing,
    build_nonneg,
    build_sumzero,
    validate,
)
from .core import Control, FitResult, ModelSpec, fit, predict, unconstrained_fit  # noqa: E402
from .dof import expected_df, information_criteria, observed_df  # noqa: E402
from .inference import build_tmvn, sample, summarize  # noqa: E402
