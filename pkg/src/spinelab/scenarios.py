"""Scenario files: JSON descriptions of a model plus default run budgets.

A scenario fixes K, the interval, the coefficient fields, the per-type
offspring kernels and the jump-time convention.  Coefficient entries are a
number (constant field), a closed-form expression string in ``x`` (safe
arithmetic subset: sin cos exp log sqrt tanh abs, + - * / **, pi, e), or a
piecewise-linear table {"x": [...], "values": [...]}.

``data/scenario.schema.json`` is the normative field list; the checks here
reproduce it with messages that name the offending field, since a malformed
scenario must be reported precisely (CLI exit code 2).
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
from importlib import resources

import numpy as np

from .kernels import kernel_from_dict
from .model import CoefficientFields, Interval, ModelSpec, ValidationError

__all__ = [
    "compile_field",
    "scenario_fingerprint",
    "parse_scenario",
    "load_scenario",
    "BUILTIN_SCENARIOS",
]

BUILTIN_SCENARIOS = ("canon2", "canona", "canonh", "canonv")

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "tanh": np.tanh, "abs": np.abs,
}
_ALLOWED_NAMES = {"pi": math.pi, "e": math.e}
_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _compile_expr(text: str, where: str):
    """Compile a closed-form expression of x into a vectorized callable."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"{where}: cannot parse expression {text!r}: {exc}") from None

    def ev(node, x):
        if isinstance(node, ast.Expression):
            return ev(node.body, x)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id in _ALLOWED_NAMES:
                return _ALLOWED_NAMES[node.id]
            raise ValidationError(f"{where}: unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, x)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            l, r = ev(node.left, x), ev(node.right, x)
            if isinstance(node.op, ast.Add):
                return l + r
            if isinstance(node.op, ast.Sub):
                return l - r
            if isinstance(node.op, ast.Mult):
                return l * r
            if isinstance(node.op, ast.Div):
                return l / r
            return l ** r
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            fn = _ALLOWED_FUNCS.get(node.func.id)
            if fn is None or node.keywords:
                raise ValidationError(f"{where}: disallowed call in {text!r}")
            return fn(*(ev(a, x) for a in node.args))
        raise ValidationError(f"{where}: disallowed syntax in expression {text!r}")

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(ev(tree, x), dtype=float), x.shape).copy()

    f(np.array([0.0, 1.0]))  # fail fast on bad expressions
    return f


def compile_field(entry, where: str):
    """Number | expression string | {"x": [...], "values": [...]} -> callable."""
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        val = float(entry)
        return lambda x: np.full(np.asarray(x, dtype=float).shape, val)
    if isinstance(entry, str):
        return _compile_expr(entry, where)
    if isinstance(entry, dict) and set(entry) == {"x", "values"}:
        xs = np.asarray(entry["x"], dtype=float)
        vs = np.asarray(entry["values"], dtype=float)
        if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValidationError(f"{where}: table needs increasing x and matching values")
        return lambda x: np.interp(np.asarray(x, dtype=float), xs, vs)
    raise ValidationError(
        f"{where}: entry must be a number, an expression string, or a table, got {entry!r}")


def scenario_fingerprint(doc: dict) -> str:
    """sha256 of the canonical JSON serialization (sorted keys, no spaces)."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _require(doc, key, typ, where="scenario"):
    if key not in doc:
        raise ValidationError(f"{where}: missing required field {key!r}")
    val = doc[key]
    if typ is not None and not isinstance(val, typ):
        raise ValidationError(f"{where}.{key}: expected {typ}, got {type(val).__name__}")
    return val


def parse_scenario(doc: dict) -> ModelSpec:
    """Build and validate a ModelSpec from a scenario document."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario must be a JSON object")
    K = _require(doc, "K", int)
    if K < 2:
        raise ValidationError(f"scenario.K: need K >= 2, got {K}")
    dom = _require(doc, "domain", dict)
    kind = _require(dom, "kind", str, "scenario.domain")
    if kind != "interval":
        raise ValidationError(f"scenario.domain.kind: only 'interval' is supported, got {kind!r}")
    bounds = _require(dom, "bounds", list, "scenario.domain")
    if len(bounds) != 2:
        raise ValidationError("scenario.domain.bounds: expected [lo, hi]")
    domain = Interval(float(bounds[0]), float(bounds[1]))

    coeffs = _require(doc, "coefficients", dict)
    per_type = {}
    for nm in ("a", "b", "n"):
        entries = _require(coeffs, nm, list, "scenario.coefficients")
        if len(entries) != K:
            raise ValidationError(f"scenario.coefficients.{nm}: need {K} entries")
        per_type[nm] = tuple(
            compile_field(ent, f"scenario.coefficients.{nm}[{i}]")
            for i, ent in enumerate(entries))

    p_entries = _require(coeffs, "p", list, "scenario.coefficients")
    if len(p_entries) != K or any(not isinstance(r, list) or len(r) != K for r in p_entries):
        raise ValidationError(f"scenario.coefficients.p: need a {K}x{K} matrix of entries")
    p_funcs = [[compile_field(p_entries[i][j], f"scenario.coefficients.p[{i}][{j}]")
                for j in range(K)] for i in range(K)]

    def p_field(x):
        x = np.asarray(x, dtype=float)
        out = np.empty((x.size, K, K))
        for i in range(K):
            for j in range(K):
                out[:, i, j] = p_funcs[i][j](x)
        return out

    kern_entries = _require(doc, "kernel", list)
    if len(kern_entries) != K:
        raise ValidationError(f"scenario.kernel: need {K} entries")
    try:
        kernels = tuple(kernel_from_dict(k) for k in kern_entries)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"scenario.kernel: {exc}") from None

    weight = None
    if "kernel_weight" in doc:
        entries = doc["kernel_weight"]
        if not isinstance(entries, list) or len(entries) != K:
            raise ValidationError(f"scenario.kernel_weight: need {K} entries")
        weight = tuple(compile_field(ent, f"scenario.kernel_weight[{i}]")
                       for i, ent in enumerate(entries))

    convention = doc.get("convention", "pre")
    if convention not in ("pre", "post"):
        raise ValidationError(f"scenario.convention: must be 'pre' or 'post', got {convention!r}")

    fields = CoefficientFields(K=K, a=per_type["a"], b=per_type["b"],
                               n=per_type["n"], p=p_field, weight=weight)
    spec = ModelSpec(domain=domain, K=K, coeffs=fields, kernels=kernels,
                     convention=convention, name=str(doc.get("name", "scenario")))
    spec.validate()
    return spec


def load_scenario(name_or_path: str):
    """Load a builtin scenario by name or a JSON file by path.

    Returns (spec, doc, fingerprint).
    """
    if name_or_path in BUILTIN_SCENARIOS:
        text = resources.files("spinelab.data").joinpath(f"{name_or_path}.json").read_text()
    else:
        try:
            with open(name_or_path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read scenario {name_or_path!r}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario {name_or_path!r} is not valid JSON: {exc}") from None
    spec = parse_scenario(doc)
    return spec, doc, scenario_fingerprint(doc)
