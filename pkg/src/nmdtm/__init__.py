"""ReLU-based nonlinear matrix decomposition with momentum acceleration."""
from .linalg import (
    RankDeficiencyError,
    ShapeError,
    SupportPattern,
    SvdFactors,
    frobenius_norm,
    matmul,
    relu,
    ridge_solve_left,
    ridge_solve_right,
    support_pattern,
    truncated_svd,
)
from .solver import (
    ConvergenceTrace,
    NmdParams,
    NmdResult,
    NmdState,
    NumericFailure,
    TraceRecord,
    fit,
    initialize,
    objective,
    relative_error,
    step,
)

__version__ = "0.1.0"
