"""Command-line interface: subcommands, report.json and fields.csv writers.

Exit codes: 0 success, 2 configuration/validation error, 3 solver error.
Heavy imports happen inside run() so --threads / SCHOUTEN_THREADS can pin
BLAS pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def _pin_threads(argv):
    threads = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif a.startswith("--threads="):
            threads = a.split("=", 1)[1]
    if threads is None:
        threads = os.environ.get("SCHOUTEN_THREADS")
    if threads is not None:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(threads))


def _build_parser():
    p = argparse.ArgumentParser(
        prog="schouten",
        description="Solve and verify Dirichlet problems for the "
                    "log-determinant conformal Schouten equation.")
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "geometry-check": "curvature and derivative-interchange self-tests "
                          "on the configured metric",
        "verify-barriers": "check the sub/supersolution inequalities for "
                           "every cutoff band",
        "select-lambda": "find the smallest admissible shift for the "
                         "modified subsolution inequality",
        "solve": "solve a single band (or the unregularized equation)",
        "homotopy": "solve along the band schedule and summarize interior "
                    "stability",
        "mms-convergence": "grid-halving error study on the manufactured "
                           "sphere problem",
    }
    for name, help_text in commands.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to JSON config")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--k-list", default=None,
                        help="comma-separated band indices, overrides config")
        sp.add_argument("--threads", default=None,
                        help="BLAS thread count (or env SCHOUTEN_THREADS)")
        if name == "mms-convergence":
            sp.add_argument("--levels", type=int, default=3,
                            help="number of grid halvings to run")
    return p


def _scalarize(v):
    import numpy as np

    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    return v


def _flatten(obj, prefix, out):
    if isinstance(obj, dict):
        for key, val in obj.items():
            _flatten(val, f"{prefix}.{key}" if prefix else str(key), out)
        return out
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            out[prefix] = [_scalarize(v) for v in obj]
        else:
            for i, val in enumerate(obj):
                _flatten(val, f"{prefix}.{i}", out)
        return out
    out[prefix] = _scalarize(obj)
    return out


def write_report(out_dir, command, cfg, payload, elapsed) -> str:
    os.makedirs(out_dir, exist_ok=True)
    flat = {}
    _flatten({"config": cfg}, "", flat)
    _flatten(payload, "", flat)
    flat["report_version"] = 1
    flat["command"] = command
    flat["elapsed_seconds"] = float(elapsed)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump(flat, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def write_fields_csv(out_dir, grid, u, ul, ubar, w_min_eig, residual) -> str:
    import numpy as np

    os.makedirs(out_dir, exist_ok=True)
    n = grid.dim
    cols = [grid.points[..., a].ravel() for a in range(n)]
    nanfill = np.full(grid.n_nodes, np.nan)
    for arr in (u, ul, ubar, w_min_eig, residual):
        cols.append(nanfill if arr is None else np.asarray(arr).ravel())
    header = ",".join([f"x{a+1}" for a in range(n)]
                      + ["u", "ul", "ubar", "w_min_eig", "residual"])
    path = os.path.join(out_dir, "fields.csv")
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=header, comments="")
    return path


def _field_diagnostics(problem, u_field, psi, T):
    """(w_min_eig, residual) for the CSV; never raises on bad nodes."""
    import numpy as np

    from .conformal import w_tensor

    wf = w_tensor(u_field, psi, T, problem.metric)
    ld = wf.log_det()
    f = problem.rhs.f_values(u_field.values, problem.grid.points)
    res = np.full(problem.grid.shape, np.nan)
    mask = problem.grid.interior_mask
    res[mask] = (ld - f)[mask]
    return wf.min_eig, res


def _resolve_lambda(problem, cfg):
    from .errors import ConfigError
    from .regularization import PsiSchedule, select_lambda

    if problem.lam is not None:
        return float(problem.lam), False
    if not problem.k_list:
        raise ConfigError("lambda: auto needs a nonempty k_list")
    schedule = PsiSchedule.build(problem.grid, problem.k_list)
    lam = select_lambda(problem.ul, problem.rhs, problem.schouten_eff,
                        schedule, problem.metric)
    return lam, True


def _resolve_ubar(problem, cfg, lam):
    """Returns (ubar, eps) where eps is None unless auto-constructed."""
    from .config import _parse_field
    from .barriers import flat_supersolution

    spec = cfg.get("supersolution")
    if spec is None:
        return None, None
    if spec == "auto-flat":
        ubar, eps = flat_supersolution(problem.ul, problem.rhs, problem.metric,
                                       S=problem.schouten_eff,
                                       lam=0.0 if lam is None else lam,
                                       k_list=problem.k_list or None)
        return ubar, eps
    return _parse_field(problem.grid, spec, "supersolution"), None


def _solve_report_payload(rep):
    payload = {
        "converged": rep.converged,
        "iterations": rep.iterations,
        "residual_final": rep.residual_history[-1],
        "residual_history": list(rep.residual_history),
        "margin_history": list(rep.margin_history),
        "step_sizes": list(rep.step_sizes),
        "linear_residuals": list(rep.linear_residuals),
        "w_max_eig_interior": rep.w_max_eig_interior,
        "k": rep.k,
        "lambda": rep.lam,
        "elapsed_seconds": rep.elapsed_seconds,
        "gradient_monitor": rep.gradient_monitor,
        "hessian_monitor": rep.hessian_monitor,
    }
    if rep.ordering is not None:
        payload["ordering"] = {
            "passed": rep.ordering.passed,
            "lower_ok": rep.ordering.lower_ok,
            "upper_ok": rep.ordering.upper_ok,
            "worst_lower": rep.ordering.worst_lower,
            "worst_upper": rep.ordering.worst_upper,
        }
    if rep.subsolution is not None:
        payload["subsolution"] = {
            "passed": rep.subsolution.passed,
            "admissible": rep.subsolution.admissible,
            "worst_margin": rep.subsolution.worst_margin,
            "worst_node": list(rep.subsolution.worst_node or ()),
        }
    return payload


def _cmd_geometry_check(problem, cfg, args):
    import numpy as np

    from .geometry import commutator_defect
    from .grid import ScalarField

    m = problem.metric
    grid = problem.grid
    eye = np.eye(grid.dim)
    gginv = np.einsum("...ij,...jk->...ik", m.g_inv.values, m.g.values) - eye
    riem = m.riemann
    last_pair = np.abs(riem + np.einsum("...bijk->...bikj", riem)).max()
    first_pair = np.abs(riem + np.einsum("...bijk->...ibjk", riem)).max()

    test_u = ScalarField(grid, np.prod(grid.points, axis=-1))
    defect = np.abs(commutator_defect(test_u, m))
    payload = {"geometry": {
        "g_inv_identity_defect": float(np.abs(gginv).max()),
        "riemann_antisymmetry_last_pair": float(last_pair),
        "riemann_antisymmetry_first_pair": float(first_pair),
        "riemann_max_abs": float(np.abs(riem).max()),
        "scalar_curvature_min": float(m.scalar.values.min()),
        "scalar_curvature_max": float(m.scalar.values.max()),
        "commutator_defect_max": float(defect.max()),
        "commutator_defect_interior": float(defect[grid.interior_mask].max()),
        "schouten_available": m.schouten is not None,
        "is_flat": m.is_flat,
    }}
    u = problem.ul
    from .regularization import psi_one

    me, res = _field_diagnostics(problem, u, psi_one(grid), problem.schouten_eff)
    return payload, (u.values, problem.ul.values, None, me, res)


def _cmd_select_lambda(problem, cfg, args):
    from .regularization import PsiSchedule, build_T
    from .barriers import verify_subsolution

    lam, was_auto = _resolve_lambda(problem, cfg)
    schedule = PsiSchedule.build(problem.grid, problem.k_list)
    per_k = {}
    for k, psi in zip(schedule.k_list, schedule.psis):
        T = build_T(problem.schouten_eff, psi, lam, problem.metric)
        rep = verify_subsolution(problem.ul, psi, T, problem.rhs, problem.metric)
        per_k[f"k{k}"] = {"passed": rep.passed, "worst_margin": rep.worst_margin,
                          "worst_node": list(rep.worst_node or ())}
    payload = {"lambda": {"value": lam, "auto": was_auto, "per_k": per_k}}
    from .regularization import psi_one

    me, res = _field_diagnostics(problem, problem.ul, psi_one(problem.grid),
                                 problem.schouten_eff)
    return payload, (problem.ul.values, problem.ul.values, None, me, res)


def _cmd_verify_barriers(problem, cfg, args):
    from .regularization import PsiSchedule, build_T, psi_one
    from .barriers import BarrierPair, verify_subsolution

    lam, was_auto = _resolve_lambda(problem, cfg)
    schedule = PsiSchedule.build(problem.grid, problem.k_list)
    sub_payload = {}
    for label, psi in [("psi=1", psi_one(problem.grid))] + [
            (f"k{k}", psi) for k, psi in zip(schedule.k_list, schedule.psis)]:
        T = build_T(problem.schouten_eff, psi, lam, problem.metric)
        rep = verify_subsolution(problem.ul, psi, T, problem.rhs, problem.metric)
        sub_payload[label] = {"passed": rep.passed, "admissible": rep.admissible,
                              "worst_margin": rep.worst_margin,
                              "worst_node": list(rep.worst_node or ())}
    ubar, eps = _resolve_ubar(problem, cfg, lam)
    sup_payload = None
    if ubar is not None:
        pair = BarrierPair.build(problem.ul, ubar, schedule,
                                 problem.schouten_eff, lam, problem.rhs,
                                 problem.metric, eps=eps)
        rep = pair.supersolution
        sup_payload = {"passed": rep.passed, "ordered": rep.ordered,
                       "eps": eps, "per_psi": {
                           str(r.k): {"passed": r.passed,
                                      "definite_nodes": r.n_definite_nodes,
                                      "worst_margin": r.worst_margin,
                                      "f_choice_disagreements": r.f_choice_disagreements}
                           for r in rep.per_k}}
    payload = {"barriers": {"lambda": lam, "lambda_auto": was_auto,
                            "subsolution": sub_payload,
                            "supersolution": sup_payload}}
    me, res = _field_diagnostics(problem, problem.ul, psi_one(problem.grid),
                                 problem.schouten_eff)
    ubar_vals = None if ubar is None else ubar.values
    return payload, (problem.ul.values, problem.ul.values, ubar_vals, me, res)


def _solve_psi_T(problem, k, lam):
    from .regularization import build_T, build_psi, psi_one

    if k is None:
        return psi_one(problem.grid), problem.schouten_eff
    psi = build_psi(problem.grid, k)
    return psi, build_T(problem.schouten_eff, psi, lam, problem.metric)


def _cmd_solve(problem, cfg, args):
    from .errors import ConfigError
    from .solver import solve_regularized
    from .config import solver_config

    if len(problem.k_list) > 1:
        raise ConfigError("solve takes a single band; use homotopy for a schedule "
                          "(or override with --k-list)")
    k = problem.k_list[0] if problem.k_list else None
    lam = None
    if k is not None:
        lam, _ = _resolve_lambda(problem, cfg)
    ubar, eps = _resolve_ubar(problem, cfg, lam)
    problem.ubar = ubar
    rep = solve_regularized(problem, k, lam, solver_config(cfg))
    payload = {"solve": _solve_report_payload(rep)}
    if eps is not None:
        payload["solve"]["supersolution_eps"] = eps
    psi, T = _solve_psi_T(problem, k, lam)
    me, res = _field_diagnostics(problem, rep.u, psi, T)
    ubar_vals = None if ubar is None else ubar.values
    return payload, (rep.u.values, problem.ul.values, ubar_vals, me, res)


def _cmd_homotopy(problem, cfg, args):
    from .errors import ConfigError
    from .solver import homotopy_solve
    from .config import solver_config

    if not problem.k_list:
        raise ConfigError("homotopy needs a nonempty k_list")
    lam, _ = _resolve_lambda(problem, cfg)
    problem.lam = lam
    ubar, eps = _resolve_ubar(problem, cfg, lam)
    problem.ubar = ubar
    reports, summary = homotopy_solve(problem, problem.k_list, solver_config(cfg))
    payload = {"homotopy": {
        "solves": [_solve_report_payload(r) for r in reports],
        "summary": summary,
    }}
    if eps is not None:
        payload["homotopy"]["supersolution_eps"] = eps
    last = reports[-1]
    psi, T = _solve_psi_T(problem, last.k, lam)
    me, res = _field_diagnostics(problem, last.u, psi, T)
    ubar_vals = None if ubar is None else ubar.values
    return payload, (last.u.values, problem.ul.values, ubar_vals, me, res)


def _cmd_mms(problem, cfg, args):
    from .errors import ConfigError
    from .config import solver_config
    from .mms import convergence_study, sphere_factor
    from .regularization import psi_one

    if not problem.metric.is_flat:
        raise ConfigError("mms-convergence requires a flat metric")
    res_cfg = cfg["resolution"]
    if not isinstance(res_cfg, int):
        if len(set(res_cfg)) != 1:
            raise ConfigError("mms-convergence needs one uniform base resolution")
        res_cfg = res_cfg[0]
    levels = args.levels
    if levels < 2:
        raise ConfigError("--levels must be at least 2")
    study = convergence_study(cfg["bounds"], res_cfg, levels,
                              solver_config(cfg))
    payload = {"mms": {
        "resolutions": study["resolutions"],
        "errors": study["errors"],
        "orders": study["orders"],
        "timings": study["timings"],
        "solves": [_solve_report_payload(r) for r in study["reports"]],
    }}
    last = study["reports"][-1]
    grid = last.u.grid
    from .mms import sphere_problem

    fine = sphere_problem(cfg["bounds"], study["resolutions"][-1])
    me, res = _field_diagnostics(fine, last.u, psi_one(grid), fine.schouten_eff)
    return payload, (last.u.values, sphere_factor(grid).values, None, me, res), grid


_COMMANDS = {
    "geometry-check": _cmd_geometry_check,
    "verify-barriers": _cmd_verify_barriers,
    "select-lambda": _cmd_select_lambda,
    "solve": _cmd_solve,
    "homotopy": _cmd_homotopy,
    "mms-convergence": _cmd_mms,
}


def run(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    from .errors import SolveError, ValidationError
    from . import config as config_mod

    t0 = time.perf_counter()
    try:
        raw = config_mod.load_config(args.config)
        cfg = config_mod.resolve_defaults(raw)
        if args.k_list is not None:
            try:
                cfg["k_list"] = [int(x) for x in args.k_list.split(",") if x]
            except ValueError:
                raise config_mod.ConfigError(
                    f"--k-list must be comma-separated integers, got {args.k_list!r}")
        problem = config_mod.build_problem(cfg)
        out_dir = args.out or cfg["output_dir"]
        result = _COMMANDS[args.command](problem, cfg, args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SolveError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 3

    if len(result) == 3:
        payload, fields, grid = result
    else:
        payload, fields = result
        grid = problem.grid
    elapsed = time.perf_counter() - t0
    report_path = write_report(out_dir, args.command, cfg, payload, elapsed)
    csv_path = write_fields_csv(out_dir, grid, *fields)
    print(f"wrote {report_path} and {csv_path}")
    return 0


def main():
    argv = sys.argv[1:]
    _pin_threads(argv)
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
