"""Exact tabular laboratory for pairwise preference learning and win-rate analysis."""
from __future__ import annotations

__version__ = "0.1.0"

from .analysis import (
    VarianceBound,
    WinRateReport,
    best_vertex_win_rate,
    bt_optimum,
    filter_sft_winrate_closed_form,
    sft_variance_bound,
    sft_winrate_closed_form,
    wro_kl_target_winrate_closed_form,
)
from .env import (
    BTClassifier,
    DomainError,
    Environment,
    FilterSpec,
    Policy,
    PreferenceClassifier,
    ValidationError,
    dirichlet_policy,
    fit_bt,
    make_bt_classifier,
    perturb_classifier,
    random_classifier,
    random_environment,
    validate_classifier,
)
from .game import GameState, best_response, exploitability, fictitious_play
from .objectives import (
    ObjectiveSpec,
    dpo_implicit_classifier,
    dpo_loss_offline,
    dpo_loss_online,
    evaluate_objective,
    reverse_kl,
    sft_nll,
    wro_kl_objective,
)
from .optimize import (
    ScanPoint,
    Trajectory,
    correspondence_check,
    dpo_mismatch_scan,
    exact_ascent,
    objective_gradient,
    score_gradient,
)
from .sweep import EstimateSpec, SweepConfig, SweepResult, rank_correlations, run_sweep
from .targets import (
    TargetSpec,
    compute_target,
    filter_sft_target,
    rlhf_dpo_target,
    sft_preferred_target,
    wro_kl_target,
)
from .winrate import IDENTITY, LOG, LOGIT, HTransform, groundedness_residuals, h_win_rate, mc_win_rate

__all__ = [
    "__version__",
    "VarianceBound",
    "WinRateReport",
    "best_vertex_win_rate",
    "bt_optimum",
    "filter_sft_winrate_closed_form",
    "sft_variance_bound",
    "sft_winrate_closed_form",
    "wro_kl_target_winrate_closed_form",
    "BTClassifier",
    "DomainError",
    "Environment",
    "FilterSpec",
    "Policy",
    "PreferenceClassifier",
    "ValidationError",
    "dirichlet_policy",
    "fit_bt",
    "make_bt_classifier",
    "perturb_classifier",
    "random_classifier",
    "random_environment",
    "validate_classifier",
    "GameState",
    "best_response",
    "exploitability",
    "fictitious_play",
    "ObjectiveSpec",
    "dpo_implicit_classifier",
    "dpo_loss_offline",
    "dpo_loss_online",
    "evaluate_objective",
    "reverse_kl",
    "sft_nll",
    "wro_kl_objective",
    "ScanPoint",
    "Trajectory",
    "correspondence_check",
    "dpo_mismatch_scan",
    "exact_ascent",
    "objective_gradient",
    "score_gradient",
    "EstimateSpec",
    "SweepConfig",
    "SweepResult",
    "rank_correlations",
    "run_sweep",
    "TargetSpec",
    "compute_target",
    "filter_sft_target",
    "rlhf_dpo_target",
    "sft_preferred_target",
    "wro_kl_target",
    "IDENTITY",
    "LOG",
    "LOGIT",
    "HTransform",
    "groundedness_residuals",
    "h_win_rate",
    "mc_win_rate",
]
