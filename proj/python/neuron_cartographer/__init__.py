"""Python bindings for the neuron-cartographer C++ library."""

from ._core import (
    ControlPlan,
    Dataset,
    Error,
    NumericalError,
    Ranking,
    ScorerError,
    SuccessReport,
    ValidationError,
    apply_control,
    compute_alpha,
    correlation_matrix,
    erasure_curve,
    explained_variance,
    generate,
    leaderboard,
    load_dataset,
    make_plan,
    neuron_variance,
    pearson,
    precision_at_k,
    rank,
    render_heatmap,
    score_success,
    set_thread_count,
    threshold_decode,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
