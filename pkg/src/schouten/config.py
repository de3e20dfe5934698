"""Configuration loading, validation, and assembly into a ProblemSpec.

Configs are JSON, validated against the shipped schema (unknown keys are
rejected) plus semantic checks the schema cannot express.  All expression
strings use the grammar in schouten.expr.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from . import expr
from .conformal import RhsFunction, f_from_s
from .errors import ConfigError, ExprDomainError, ExprSyntaxError
from .geometry import curvature_package
from .grid import ScalarField, Sym2Field, build_grid
from .problem import ProblemSpec
from .solver import SolverConfig

_SOLVER_FIELDS = ("newton_tol", "max_iters", "damping", "max_backtracks",
                  "delta_pd", "linear_tol", "mu_monitor", "lambda_monitor",
                  "eps_grad", "direct_limit")


def _schema(name: str) -> dict:
    with resources.files("schouten.schemas").joinpath(name).open("rb") as fh:
        return json.load(fh)


def load_config(path) -> dict:
    import jsonschema

    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    try:
        jsonschema.validate(raw, _schema("config.schema.json"))
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {e.message}")
    return raw


def resolve_defaults(raw: dict) -> dict:
    """Fill in every defaultable key; the result is embedded in reports."""
    cfg = dict(raw)
    n = cfg["dimension"]
    cfg.setdefault("schouten_replacement", None)
    cfg.setdefault("supersolution", None)
    # |x|^2 is only a valid default over the identity metric; anything else
    # must bring its own strictly convex chi (it is checked either way)
    cfg.setdefault("chi", " + ".join(f"x{i+1}^2" for i in range(n))
                   if cfg["metric"] == "flat" else None)
    cfg.setdefault("lambda", "auto")
    cfg.setdefault("k_list", [])
    solver = dict(cfg.get("solver", {}))
    defaults = SolverConfig()
    for name in _SOLVER_FIELDS:
        solver.setdefault(name, getattr(defaults, name))
    cfg["solver"] = solver
    cfg.setdefault("output_dir", "out")
    return cfg


def _parse_field(grid, text: str, what: str) -> ScalarField:
    try:
        ast = expr.parse(text, grid.dim)
        values = expr.evaluate(ast, grid.points)
    except (ExprSyntaxError, ExprDomainError) as e:
        raise ConfigError(f"{what}: {e}")
    return ScalarField(grid, values)


def _parse_sym2(grid, entries, what: str) -> Sym2Field:
    n = grid.dim
    if len(entries) != n or any(len(row) != n for row in entries):
        raise ConfigError(f"{what}: entries must form an {n}x{n} matrix")
    vals = np.zeros(grid.shape + (n, n))
    for i in range(n):
        for j in range(n):
            f = _parse_field(grid, entries[i][j], f"{what}[{i}][{j}]")
            vals[..., i, j] = f.values
    if np.max(np.abs(vals - np.swapaxes(vals, -1, -2))) > 1e-12:
        raise ConfigError(f"{what}: entries must evaluate to a symmetric matrix")
    return Sym2Field(grid, vals)


def _build_metric(grid, spec):
    n = grid.dim
    if spec == "flat":
        return curvature_package(Sym2Field.identity(grid))
    if isinstance(spec, str):
        factor = _parse_field(grid, spec, "metric conformal factor")
        if np.any(factor.values <= 0):
            raise ConfigError("metric conformal factor must be positive")
        vals = factor.values[..., None, None] * np.eye(n)
        return curvature_package(Sym2Field(grid, vals))
    return curvature_package(_parse_sym2(grid, spec["entries"], "metric"))


def _build_rhs(grid, m, spec) -> RhsFunction:
    if spec["mode"] == "s":
        return f_from_s(_parse_field(grid, spec["s"], "rhs s"), m)
    try:
        ast = expr.parse(spec["f"], grid.dim, allow_z=True)
    except ExprSyntaxError as e:
        raise ConfigError(f"rhs f: {e}")

    def f_fn(points, z, _ast=ast):
        return expr.evaluate(_ast, points, z)

    return RhsFunction.general(grid.dim, f_fn)


def build_problem(cfg: dict) -> ProblemSpec:
    """Construct grid, metric, RHS, subsolution and chi from a resolved config.

    lambda and the supersolution stay unresolved (they may need the lambda
    search or the flat construction, which individual commands trigger).
    """
    n = cfg["dimension"]
    if len(cfg["bounds"]) != n:
        raise ConfigError(f"bounds must list {n} axes")
    grid = build_grid(n, cfg["bounds"], cfg["resolution"])
    m = _build_metric(grid, cfg["metric"])

    schouten_override = None
    if cfg.get("schouten_replacement") is not None:
        schouten_override = _parse_sym2(
            grid, cfg["schouten_replacement"]["entries"], "schouten_replacement")
    if n == 2 and schouten_override is None:
        raise ConfigError("dimension 2 requires schouten_replacement")

    rhs = _build_rhs(grid, m, cfg["rhs"])
    ul = _parse_field(grid, cfg["subsolution"], "subsolution")
    chi = None
    if cfg["chi"] is not None:
        from .barriers import check_chi
        from .errors import HypothesisError

        chi = _parse_field(grid, cfg["chi"], "chi")
        try:
            check_chi(chi, m)
        except HypothesisError as e:
            raise ConfigError(f"chi: {e}")
    lam = cfg["lambda"]

    return ProblemSpec(grid=grid, metric=m, rhs=rhs, ul=ul,
                       schouten_override=schouten_override, chi=chi,
                       lam=None if lam == "auto" else float(lam),
                       k_list=tuple(cfg["k_list"]))


def solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(**{k: cfg["solver"][k] for k in _SOLVER_FIELDS})
