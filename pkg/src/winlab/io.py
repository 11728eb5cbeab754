"""JSON file formats for environments, policies, filters and sweep configs.

Environment::

    {"queries": [{"id": "x", "prob": 1.0, "responses": ["a", "b"]}],
     "classifier": {"kind": "matrix", "data": [[[0.5, 0.9], [0.1, 0.5]]]}}

with ``kind: "bt"`` taking per-query reward vectors as ``data``.  A policy is
``{"probs": [[...], ...]}`` in the environment's query order.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

import numpy as np

from .env import (
    BTClassifier,
    Environment,
    FilterSpec,
    Policy,
    ValidationError,
    make_bt_classifier,
    validate_classifier,
)
from .sweep import EstimateSpec, SweepConfig
from .winrate import HTransform


def parse_json(text: str, source: str = "<string>") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from None
    return parse_json(text, str(path))


def _field(obj: Any, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ValidationError(f"{where}: missing field {key!r}")
    return obj[key]


def _list(obj: Any, where: str) -> list:
    if not isinstance(obj, list):
        raise ValidationError(f"{where}: expected a list, got {type(obj).__name__}")
    return obj


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _numbers(obj: Any, where: str) -> list[float]:
    return [_number(v, f"{where}[{i}]") for i, v in enumerate(_list(obj, where))]


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


def environment_from_dict(doc: Any, source: str = "environment") -> Environment:
    queries = _list(_field(doc, "queries", source), f"{source}.queries")
    ids, probs, responses = [], [], []
    for i, q in enumerate(queries):
        where = f"{source}.queries[{i}]"
        ids.append(str(_field(q, "id", where)))
        probs.append(_number(_field(q, "prob", where), f"{where}.prob"))
        responses.append([str(r) for r in _list(_field(q, "responses", where), f"{where}.responses")])
    clf_doc = _field(doc, "classifier", source)
    kind = _field(clf_doc, "kind", f"{source}.classifier")
    data = _list(_field(clf_doc, "data", f"{source}.classifier"), f"{source}.classifier.data")
    where = f"{source}.classifier.data"
    if kind == "bt":
        classifier = make_bt_classifier([_numbers(r, f"{where}[{q}]") for q, r in enumerate(data)])
    elif kind == "matrix":
        mats = [[_numbers(row, f"{where}[{q}][{a}]") for a, row in enumerate(_list(m, f"{where}[{q}]"))] for q, m in enumerate(data)]
        for q, m in enumerate(mats):
            if any(len(row) != len(m) for row in m):
                raise ValidationError(f"{where}[{q}]: classifier block is not square")
        try:
            classifier = validate_classifier(mats)
        except ValidationError as exc:
            raise ValidationError([_label(v, ids, responses) for v in exc.violations]) from None
    else:
        raise ValidationError(f"{source}.classifier.kind: expected 'matrix' or 'bt', got {kind!r}")
    return Environment(tuple(ids), np.array(probs), tuple(map(tuple, responses)), classifier)


_POSITION = re.compile(r"\((\d+), (\d+), (\d+)\)")
_QUERY = re.compile(r"in query (\d+)")


def _label(msg: str, ids: list[str], responses: list[list[str]]) -> str:
    """Replace ``(q, a, b)`` index triples in a violation message by identifiers."""

    def name(m):
        q, a, b = (int(g) for g in m.groups())
        try:
            return f"({ids[q]}, {responses[q][a]}, {responses[q][b]})"
        except IndexError:
            return m.group(0)

    msg = _POSITION.sub(name, msg)
    return _QUERY.sub(lambda m: f"in query {ids[int(m.group(1))]}" if int(m.group(1)) < len(ids) else m.group(0), msg)


def environment_to_dict(env: Environment) -> dict:
    clf = env.classifier
    if isinstance(clf, BTClassifier):
        classifier = {"kind": "bt", "data": [clf.reward_vector(q).tolist() for q in range(len(env))]}
    else:
        classifier = {"kind": "matrix", "data": clf.to_lists()}
    return {
        "queries": [
            {"id": q, "prob": float(p), "responses": list(rs)}
            for q, p, rs in zip(env.queries, env.query_probs, env.responses)
        ],
        "classifier": classifier,
    }


def load_environment(path: str | Path) -> Environment:
    try:
        return environment_from_dict(read_json(path), str(path))
    except ValidationError as exc:
        raise ValidationError([_prefix(str(path), v) for v in exc.violations]) from None


def _prefix(source: str, msg: str) -> str:
    return msg if msg.startswith(source) else f"{source}: {msg}"


# ---------------------------------------------------------------------------
# Policies and filters
# ---------------------------------------------------------------------------


def policy_from_dict(doc: Any, env: Environment | None = None, source: str = "policy") -> Policy:
    rows = _list(_field(doc, "probs", source), f"{source}.probs")
    policy = Policy.from_lists([_numbers(r, f"{source}.probs[{q}]") for q, r in enumerate(rows)])
    return policy if env is None else env.check_policy(policy, source)


def policy_to_dict(policy: Policy) -> dict:
    return {"probs": policy.to_lists()}


def load_policy(path: str | Path, env: Environment | None = None) -> Policy:
    try:
        return policy_from_dict(read_json(path), env, str(path))
    except ValidationError as exc:
        raise ValidationError([_prefix(str(path), v) for v in exc.violations]) from None


def filter_from_dict(doc: Any, env: Environment, source: str = "filter") -> FilterSpec:
    """``{"kind": "preferred" | "constant" | "threshold" | "tensor", ...}``."""
    kind = _field(doc, "kind", source)
    if kind == "preferred":
        return FilterSpec.preferred(env.sizes)
    if kind == "constant":
        return FilterSpec.constant(env.sizes, _number(doc.get("value", 1.0), f"{source}.value"))
    if kind == "threshold":
        return FilterSpec.pref_threshold(env.classifier, _number(_field(doc, "threshold", source), f"{source}.threshold"))
    if kind == "tensor":
        data = _list(_field(doc, "data", source), f"{source}.data")
        width = env.width
        filt = np.zeros((len(env), width, width, 2))
        for q, block in enumerate(data):
            arr = np.asarray(block, dtype=float)
            n = env.sizes[q] if q < len(env) else -1
            if arr.shape != (n, n, 2):
                raise ValidationError(f"{source}.data[{q}]: expected shape ({n}, {n}, 2), got {arr.shape}")
            filt[q, :n, :n] = arr
        if len(data) != len(env):
            raise ValidationError(f"{source}.data: {len(data)} blocks for {len(env)} queries")
        return FilterSpec(filt, env.sizes)
    raise ValidationError(f"{source}.kind: unknown filter kind {kind!r}")


def load_filter(path: str | Path, env: Environment) -> FilterSpec:
    return filter_from_dict(read_json(path), env, str(path))


# ---------------------------------------------------------------------------
# Sweep configs
# ---------------------------------------------------------------------------


def sweep_config_from_dict(doc: Any, base: Path = Path("."), source: str = "sweep") -> SweepConfig:
    """Fields: ``env`` (path or inline), ``h``, ``beta``, ``estimates``, ``optimizer``, optional ``reference``."""
    env_doc = _field(doc, "env", source)
    env = load_environment(base / env_doc) if isinstance(env_doc, str) else environment_from_dict(env_doc, f"{source}.env")
    try:
        h_grid = tuple(HTransform.from_name(n) for n in _list(_field(doc, "h", source), f"{source}.h"))
    except ValueError as exc:
        raise ValidationError(f"{source}.h: {exc}") from None
    betas = tuple(_numbers(_field(doc, "beta", source), f"{source}.beta"))
    estimates = []
    for i, e in enumerate(_list(_field(doc, "estimates", source), f"{source}.estimates")):
        where = f"{source}.estimates[{i}]"
        kind = _field(e, "kind", where)
        eta = e.get("eta")
        estimates.append(EstimateSpec(kind, None if eta is None else _number(eta, f"{where}.eta"), e.get("seed")))
    opt = doc.get("optimizer", {"kind": "closed_form_target"})
    ref_doc = doc.get("reference")
    reference = None
    if ref_doc is not None:
        reference = load_policy(base / ref_doc, env) if isinstance(ref_doc, str) else policy_from_dict(ref_doc, env, f"{source}.reference")
    return SweepConfig(
        env,
        h_grid,
        betas,
        tuple(estimates),
        optimizer=_field(opt, "kind", f"{source}.optimizer"),
        budget=int(opt.get("budget", 2000)),
        reference=reference,
    )


def load_sweep_config(path: str | Path) -> SweepConfig:
    path = Path(path)
    return sweep_config_from_dict(read_json(path), path.parent, str(path))


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_environment(env: Environment, path: str | Path) -> None:
    Path(path).write_text(dump_json(environment_to_dict(env)))


def write_policy(policy: Policy, path: str | Path) -> None:
    Path(path).write_text(dump_json(policy_to_dict(policy)))


__all__ = [
    "dump_json",
    "environment_from_dict",
    "environment_to_dict",
    "filter_from_dict",
    "load_environment",
    "load_filter",
    "load_policy",
    "load_sweep_config",
    "parse_json",
    "policy_from_dict",
    "policy_to_dict",
    "read_json",
    "sweep_config_from_dict",
    "write_environment",
    "write_policy",
]
