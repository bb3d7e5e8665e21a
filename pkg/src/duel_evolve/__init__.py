"""Evolutionary search over discrete candidates driven by pairwise preferences."""

from .candidates import Candidate, Choice, Draft, Query, Verdict
from .loop import (
    EvolveConfig,
    GenerationRecord,
    Pool,
    best_of_n,
    dedup_insert,
    enforce_pool_cap,
    initialize_pool,
    order_consistent_judge,
    run,
    run_generation,
)
from .preference import (
    ComparisonRecord,
    PosteriorSummary,
    Prior,
    fit_map,
    fit_posterior,
    gradient,
    laplace_diagonal,
    neg_log_posterior,
    win_probability,
)
from .scheduler import (
    SchedulerConfig,
    best_candidate,
    estimate_maximizer_probability,
    select_duel_batch,
    select_parents,
    survivor_set,
    thompson_scores,
)

__version__ = "0.1.0"
