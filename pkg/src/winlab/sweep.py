"""Design-axis sweep: h x beta x classifier estimate, judged by the true classifier.

Each cell builds a WRO-KL policy under an estimated classifier and then
measures its identity-h win rate against the reference under the oracle one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import permutation_test, rankdata

from .env import DomainError, Environment, Policy, ValidationError, fit_bt, perturb_classifier
from .objectives import ObjectiveSpec, reverse_kl, wro_kl_objective
from .optimize import exact_ascent
from .targets import wro_kl_target
from .winrate import IDENTITY, HTransform, h_win_rate

ESTIMATE_KINDS = ("oracle", "bt_fit", "perturbed")
OPTIMIZERS = ("closed_form_target", "exact_ascent")


@dataclass(frozen=True)
class EstimateSpec:
    kind: str
    eta: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ESTIMATE_KINDS:
            raise ValidationError(f"unknown classifier estimate {self.kind!r}")
        if self.kind == "perturbed":
            if self.eta is None or self.seed is None:
                raise ValidationError("perturbed estimate needs eta and seed")
            if not 0.0 <= self.eta <= 1.0:
                raise ValidationError(f"eta must be in [0, 1], got {self.eta!r}")

    @property
    def label(self) -> str:
        if self.kind == "perturbed":
            return f"perturbed(eta={self.eta!r},seed={self.seed})"
        return self.kind

    def build(self, env: Environment):
        if self.kind == "oracle":
            return env.classifier
        if self.kind == "bt_fit":
            return fit_bt(env.classifier)
        return perturb_classifier(env.classifier, self.eta, self.seed)


@dataclass(frozen=True)
class SweepConfig:
    env: Environment
    h_grid: tuple[HTransform, ...]
    beta_grid: tuple[float, ...]
    estimates: tuple[EstimateSpec, ...]
    optimizer: str = "closed_form_target"
    budget: int = 2000
    reference: Policy | None = None

    def __post_init__(self):
        problems = []
        if not self.h_grid:
            problems.append("h grid is empty")
        if not self.beta_grid:
            problems.append("beta grid is empty")
        if not self.estimates:
            problems.append("no classifier estimates")
        if any(not (np.isfinite(b) and b > 0) for b in self.beta_grid):
            problems.append("every beta must be positive and finite")
        if self.optimizer not in OPTIMIZERS:
            problems.append(f"unknown optimizer {self.optimizer!r}")
        if problems:
            raise ValidationError(problems)

    @property
    def reference_policy(self) -> Policy:
        return self.env.uniform_policy() if self.reference is None else self.env.check_policy(self.reference, "reference")


@dataclass(frozen=True)
class SweepRow:
    estimate: str
    h: str
    beta: float
    win_rate: float
    objective: float
    kl: float
    converged: bool
    policy: Policy | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    config: SweepConfig | None = field(default=None, repr=False)

    def ok_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.ok]


def _run_cell(config: SweepConfig, est_env: Environment, est: EstimateSpec, h: HTransform, beta: float) -> SweepRow:
    ref = config.reference_policy
    if config.optimizer == "closed_form_target":
        policy = wro_kl_target(est_env, ref, ref, h, beta)
        converged = True
    else:
        spec = ObjectiveSpec("wro_kl", h=h, beta=beta, anchor=ref, reference=ref)
        traj = exact_ascent(spec, est_env, ref, max_steps=config.budget)
        policy, converged = traj.final_policy, traj.converged
    return SweepRow(
        est.label,
        h.kind,
        float(beta),
        h_win_rate(policy, ref, config.env, IDENTITY),
        wro_kl_objective(policy, ref, ref, est_env, h, beta),
        reverse_kl(policy, ref, config.env.query_probs),
        converged,
        policy,
    )


def run_sweep(config: SweepConfig) -> SweepResult:
    """Evaluate every (estimate, h, beta) cell; failing cells are kept with their error."""
    rows = []
    for est in config.estimates:
        try:
            est_env = config.env.with_classifier(est.build(config.env))
        except (DomainError, ValidationError) as exc:
            for h in config.h_grid:
                for beta in config.beta_grid:
                    rows.append(_failed(est, h, beta, exc))
            continue
        for h in config.h_grid:
            for beta in config.beta_grid:
                try:
                    rows.append(_run_cell(config, est_env, est, h, beta))
                except (DomainError, ValidationError) as exc:
                    rows.append(_failed(est, h, beta, exc))
    return SweepResult(tuple(rows), config)


def _failed(est: EstimateSpec, h: HTransform, beta: float, exc: Exception) -> SweepRow:
    nan = float("nan")
    return SweepRow(est.label, h.kind, float(beta), nan, nan, nan, False, None, f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class Correlation:
    name: str
    rho: float
    p_value: float
    n: int
    degenerate: bool


def _spearman_statistic(x, y, axis=-1):
    xc = x - x.mean(axis=axis, keepdims=True)
    yc = y - y.mean(axis=axis, keepdims=True)
    return (xc * yc).sum(axis=axis) / np.sqrt((xc**2).sum(axis=axis) * (yc**2).sum(axis=axis))


def spearman(x, y, permutations: int = 10_000, seed: int = 0, name: str = "") -> Correlation:
    """Spearman rank correlation with a two-sided permutation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise ValidationError("rank correlation needs at least 3 rows")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return Correlation(name, float("nan"), float("nan"), n, True)
    rx, ry = rankdata(x), rankdata(y)
    res = permutation_test(
        (rx, ry),
        _spearman_statistic,
        permutation_type="pairings",
        vectorized=True,
        n_resamples=permutations,
        alternative="two-sided",
        random_state=np.random.default_rng(seed),
    )
    return Correlation(name, float(res.statistic), float(res.pvalue), n, False)


def rank_correlations(result: SweepResult, permutations: int = 10_000, seed: int = 0) -> list[Correlation]:
    """Spearman correlation of win rate with the train objective and with each design axis.

    Categorical axes (h, estimate) are encoded by their order of first appearance.
    """
    rows = result.ok_rows()
    if len(rows) < 3:
        raise ValidationError(f"rank correlation needs at least 3 successful rows, got {len(rows)}")
    win = [r.win_rate for r in rows]

    def codes(values):
        order = list(dict.fromkeys(values))
        return [order.index(v) for v in values]

    columns = {
        "objective": [r.objective for r in rows],
        "beta": [r.beta for r in rows],
        "h": codes([r.h for r in rows]),
        "estimate": codes([r.estimate for r in rows]),
    }
    return [spearman(col, win, permutations, seed, name) for name, col in columns.items()]
