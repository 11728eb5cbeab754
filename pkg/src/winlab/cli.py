"""Command-line interface.

Every command that writes a CSV also writes ``<csv>.manifest.json`` with the
resolved configuration, seed, tool version and input digests.  Exit codes:
0 success, 1 numerical-domain error, 2 input validation error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io as _stdio
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, fixtures
from . import io as wio
from .analysis import (
    filter_sft_winrate_closed_form,
    sft_variance_bound,
    sft_winrate_closed_form,
    wro_kl_target_winrate_closed_form,
)
from .env import DomainError, Environment, Policy, ValidationError, fit_bt
from .game import fictitious_play
from .objectives import ObjectiveSpec, evaluate_objective
from .optimize import dpo_mismatch_scan, exact_ascent, violation_summary
from .sweep import rank_correlations, run_sweep
from .targets import TargetSpec, compute_target, target_tilt
from .winrate import HTransform, h_win_rate, mc_win_rate, per_query_win_rate

# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str | Path, header: list[str], rows) -> None:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    atomic_write(path, buf.getvalue())


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(csv_path: str | Path, args: argparse.Namespace, inputs: list[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": {p: _digest(p) for p in inputs if p},
    }
    atomic_write(f"{csv_path}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def emit(path, header, rows, args, inputs) -> None:
    write_csv(path, header, rows)
    write_manifest(path, args, inputs)


# ---------------------------------------------------------------------------
# Shared argument handling
# ---------------------------------------------------------------------------


def _h(args) -> HTransform:
    try:
        h = HTransform.from_name(args.h)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    clamp = getattr(args, "clamp", None)
    return h if clamp is None else h.with_clamp(clamp)


def _policy(path: str | None, env: Environment, default: Policy | None = None) -> Policy:
    if path is None:
        return env.uniform_policy() if default is None else default
    return wio.load_policy(path, env)


def _inputs(args, names) -> list[str]:
    return [getattr(args, n) for n in names if getattr(args, n, None)]


def _objective(args, env: Environment) -> ObjectiveSpec:
    reference = _policy(args.reference, env)
    anchor = _policy(args.anchor, env, reference)
    initial = _policy(args.initial, env, reference)
    pair_dist = None
    if args.family == "dpo_offline":
        if args.pairs == "uniform":
            mask = env.mask[:, :, None] & env.mask[:, None, :]
            pair_dist = mask / mask.sum(axis=(1, 2), keepdims=True)
        else:
            pair_dist = reference.probs[:, :, None] * reference.probs[:, None, :]
    return ObjectiveSpec(
        args.family,
        h=_h(args),
        beta=args.beta,
        anchor=anchor,
        reference=reference,
        pair_dist=pair_dist,
        initial=initial,
        stop_gradient=not getattr(args, "full_gradient", False),
    )


def _add_objective_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", required=True, choices=["wro", "wro_kl", "dpo_offline", "dpo_online", "sft"])
    p.add_argument("--reference", help="reference policy file (default uniform)")
    p.add_argument("--anchor", help="anchor policy file (default: the reference)")
    p.add_argument("--initial", help="data-generating policy for sft (default: the reference)")
    p.add_argument("--h", default="identity")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--pairs", choices=["uniform", "reference_product"], default="uniform", help="pair distribution for dpo_offline")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    env = wio.load_environment(args.env)
    gen = wio.load_policy(args.generator, env)
    anc = wio.load_policy(args.anchor, env)
    h = _h(args)
    if args.mc is not None:
        if args.seed is None:
            raise ValidationError("--mc requires --seed")
        est, se = mc_win_rate(gen, anc, env, h, n_samples=args.mc, seed=args.seed, shards=args.shards)
        print(f"win_rate {fmt(est)} se {fmt(se)} (monte carlo, n={args.mc}, seed={args.seed})")
    else:
        print(f"win_rate {fmt(h_win_rate(gen, anc, env, h))}")
    if args.paper_compare:
        name = fixtures.match_pair(env, gen, anc)
        if name is None:
            print("compare: inputs do not match a shipped example; nothing to compare")
        else:
            print(f"compare: generator belongs to the shipped '{name}' pair (beta=1)")
            print(fixtures.compare_report())
    if args.csv:
        per_query = per_query_win_rate(gen, anc, env, h)
        emit(args.csv, ["query", "win_rate"], zip(env.queries, per_query), args, _inputs(args, ["env", "generator", "anchor"]))
    return 0


_FAMILIES = {"sft": "sft_preferred", "sft_preferred": "sft_preferred", "wro_kl": "wro_kl", "rlhf_dpo": "rlhf_dpo", "filter_sft": "filter_sft"}


def cmd_target(args) -> int:
    env = wio.load_environment(args.env)
    reference = _policy(args.reference, env)
    anchor = _policy(args.anchor, env, reference)
    filt = wio.load_filter(args.filter, env) if args.filter else None
    family = _FAMILIES[args.family]
    spec = TargetSpec(family, anchor, reference, _h(args), args.beta if family in ("wro_kl", "rlhf_dpo") else None, filt)
    target = compute_target(env, spec)
    tilt = target_tilt(env, spec)
    rows = []
    for q, qid in enumerate(env.queries):
        for y, rid in enumerate(env.responses[q]):
            rows.append((qid, rid, reference.probs[q, y], tilt[q, y], target.probs[q, y]))
    emit(args.out, ["query", "response", "reference_prob", "tilt", "target_prob"], rows, args, _inputs(args, ["env", "reference", "anchor", "filter"]))
    print(f"target ({family}) written to {args.out}: {len(rows)} rows")
    return 0


def cmd_analyze(args) -> int:
    env = wio.load_environment(args.env)
    initial = _policy(args.initial, env)
    if args.theorem == "variance":
        vb = sft_variance_bound(env, initial)
        rows = list(zip(env.queries, vb.mean, vb.variance, vb.bound, vb.strict))
        print(f"{'query':<12}{'mean':>24}{'variance':>24}{'bound':>24}")
        for qid, m, v, b, _ in rows:
            print(f"{qid:<12}{fmt(m):>24}{fmt(v):>24}{fmt(b):>24}")
        print(f"holds {fmt(vb.holds)}")
        if args.csv:
            emit(args.csv, ["query", "mean_avg_pref", "var_avg_pref", "bound", "three_plus_support"], rows, args, _inputs(args, ["env", "initial"]))
        return 0
    if args.theorem == "sft":
        report = sft_winrate_closed_form(env, initial)
    elif args.theorem == "filter_sft":
        if not args.filter:
            raise ValidationError("--theorem filter_sft needs --filter")
        report = filter_sft_winrate_closed_form(env, initial, wio.load_filter(args.filter, env))
    else:
        report = wro_kl_target_winrate_closed_form(env, initial, _h(args), args.beta)
    rows = [("closed_form", report.closed_form), ("brute_force", report.brute_force), ("abs_diff", report.abs_diff)]
    for name, value in rows:
        print(f"{name:<14}{fmt(value):>26}")
    if args.csv:
        emit(args.csv, ["quantity", "value"], rows, args, _inputs(args, ["env", "initial", "filter"]))
    return 0


def cmd_loss(args) -> int:
    env = wio.load_environment(args.env)
    theta = wio.load_policy(args.theta, env)
    spec = _objective(args, env)
    value = evaluate_objective(spec, theta, env)
    print(f"{args.family} {fmt(value)}")
    if args.csv:
        per_query = evaluate_objective(spec, theta, env, per_query=True)
        emit(args.csv, ["query", "value"], zip(env.queries, per_query), args, _inputs(args, ["env", "theta", "reference", "anchor", "initial"]))
    return 0


def cmd_optimize(args) -> int:
    env = wio.load_environment(args.env)
    spec = _objective(args, env)
    init = wio.load_policy(args.init, env) if args.init else None
    traj = exact_ascent(spec, env, init, args.step_size, args.max_steps, args.grad_tol, args.step_growth)
    rows = [(s.iteration, s.objective, s.win_rate, s.kl, s.grad_norm) for s in traj.steps]
    emit(args.out, ["iteration", "objective", "win_rate", "kl", "grad_norm"], rows, args, _inputs(args, ["env", "init", "reference", "anchor", "initial"]))
    if args.policy_out:
        atomic_write(args.policy_out, wio.dump_json(wio.policy_to_dict(traj.final_policy)))
    last = traj.steps[-1]
    print(f"status {traj.status} steps {last.iteration} objective {fmt(last.objective)} win_rate {fmt(last.win_rate)} grad_norm {fmt(last.grad_norm)}")
    return 0 if not traj.diverged else 1


def cmd_scan(args) -> int:
    env = wio.load_environment(args.env)
    reference = _policy(args.reference, env)
    points, count = dpo_mismatch_scan(env, reference, args.draws, args.beta, args.alpha, args.seed, keep_improving=not args.no_filter)
    coords = [f"p_{qid}_{rid}" for q, qid in enumerate(env.queries) for rid in env.responses[q]]
    rows = []
    for i, p in enumerate(points):
        probs = [p.policy.probs[q, y] for q in range(len(env)) for y in range(env.sizes[q])]
        rows.append([i, *probs, p.loss, p.win_rate, p.logit_win_rate, p.kl_to_ref])
    emit(args.out, ["index", *coords, "loss", "win_rate", "logit_win_rate", "kl"], rows, args, _inputs(args, ["env", "reference"]))
    reg = violation_summary(points).regularized if len(points) >= 2 else 0
    print(f"kept {len(points)} points; violating pairs {count}; regularized violating pairs {reg}")
    return 0


def cmd_game(args) -> int:
    env = wio.load_environment(args.env)
    reference = wio.load_policy(args.reference, env) if args.reference else None
    res = fictitious_play(env, _h(args), args.max_iters, args.tol, args.beta, reference)
    rows = [(k + 1, e, a, b) for k, (e, a, b) in enumerate(zip(res.exploitability, res.payoff_a, res.payoff_b))]
    emit(args.out, ["iteration", "exploitability", "payoff_a", "payoff_b"], rows, args, _inputs(args, ["env", "reference"]))
    if args.policy_out:
        prows = []
        for player, pol in (("a", res.final.policy_a), ("b", res.final.policy_b)):
            for q, qid in enumerate(env.queries):
                for y, rid in enumerate(env.responses[q]):
                    prows.append((player, qid, rid, pol.probs[q, y]))
        emit(args.policy_out, ["player", "query", "response", "prob"], prows, args, _inputs(args, ["env", "reference"]))
    print(f"iterations {res.iterations} exploitability {fmt(res.final.exploitability)} converged {fmt(res.converged)}")
    return 0


def cmd_sweep(args) -> int:
    config = wio.load_sweep_config(args.config)
    result = run_sweep(config)
    rows = [(r.estimate, r.h, r.beta, r.win_rate, r.objective, r.kl, r.converged, r.error) for r in result.rows]
    inputs = _inputs(args, ["config"])
    emit(args.out, ["estimate", "h", "beta", "win_rate", "objective", "kl", "converged", "error"], rows, args, inputs)
    failed = sum(not r.ok for r in result.rows)
    print(f"{len(result.rows)} cells, {failed} failed")
    if args.report:
        corr = rank_correlations(result, args.permutations, args.seed)
        emit(args.report, ["axis", "spearman_rho", "p_value", "n", "degenerate"], [(c.name, c.rho, c.p_value, c.n, c.degenerate) for c in corr], args, inputs)
        for c in corr:
            print(f"{c.name:<12}rho {fmt(c.rho):>24}  p {fmt(c.p_value)}")
    return 0


def cmd_fit_bt(args) -> int:
    env = wio.load_environment(args.env)
    fitted = fit_bt(env.classifier)
    rows = [(qid, rid, fitted.rewards[q, y]) for q, qid in enumerate(env.queries) for y, rid in enumerate(env.responses[q])]
    emit(args.out, ["query", "response", "reward"], rows, args, _inputs(args, ["env"]))
    if args.env_out:
        atomic_write(args.env_out, wio.dump_json(wio.environment_to_dict(env.with_classifier(fitted))))
    gap = float(np.max(np.abs(fitted.pref - env.pref)))
    print(f"fitted {len(rows)} rewards; max |fitted - input| preference gap {fmt(gap)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winlab", description="Exact tabular preference-learning laboratory.")
    parser.add_argument("--version", action="version", version=f"winlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="h-win rate of a generator against an anchor")
    p.add_argument("env")
    p.add_argument("generator")
    p.add_argument("anchor")
    p.add_argument("--h", default="identity")
    p.add_argument("--clamp", type=float, help="clip preferences to [eps, 1-eps] before h")
    p.add_argument("--mc", type=int, metavar="N", help="Monte-Carlo estimate with N samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--paper-compare", action="store_true", help="print published values for the shipped DPO examples")
    p.add_argument("--csv", help="per-query win rates")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("target", help="closed-form target distribution")
    p.add_argument("env")
    p.add_argument("--family", required=True, choices=sorted(_FAMILIES))
    p.add_argument("--reference")
    p.add_argument("--anchor")
    p.add_argument("--filter")
    p.add_argument("--h", default="identity")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("analyze", help="closed-form win rate vs brute force")
    p.add_argument("env")
    p.add_argument("--theorem", required=True, choices=["sft", "filter_sft", "wro_kl", "variance"])
    p.add_argument("--initial")
    p.add_argument("--filter")
    p.add_argument("--h", default="identity")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("loss", help="evaluate a training objective on a policy")
    p.add_argument("env")
    p.add_argument("theta")
    _add_objective_args(p)
    p.add_argument("--csv", help="per-query breakdown")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("optimize", help="exact gradient optimization")
    p.add_argument("env")
    _add_objective_args(p)
    p.add_argument("--init")
    p.add_argument("--step-size", type=float, default=0.5)
    p.add_argument("--step-growth", type=float, default=1.0)
    p.add_argument("--max-steps", type=int, default=10_000)
    p.add_argument("--grad-tol", type=float, default=1e-10)
    p.add_argument("--full-gradient", action="store_true", help="differentiate the online pair distribution too")
    p.add_argument("--out", required=True)
    p.add_argument("--policy-out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("scan", help="Dirichlet scan for DPO win-rate mismatches")
    p.add_argument("env")
    p.add_argument("--reference")
    p.add_argument("--draws", type=int, default=5000)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--no-filter", action="store_true", help="keep points that do not improve on the reference loss")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("game", help="fictitious play in the two-player WRO game")
    p.add_argument("env")
    p.add_argument("--h", default="identity")
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--beta", type=float)
    p.add_argument("--reference")
    p.add_argument("--out", required=True)
    p.add_argument("--policy-out")
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("sweep", help="h x beta x classifier-estimate sweep")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True, help="seed for permutation p-values")
    p.add_argument("--permutations", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-bt", help="fit Bradley-Terry rewards to a classifier")
    p.add_argument("env")
    p.add_argument("--out", required=True)
    p.add_argument("--env-out")
    p.set_defaults(func=cmd_fit_bt)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
