"""Admissibility-preserving damped Newton solver and the estimate monitors.

Newton replaces the non-constructive existence machinery: a step is accepted
only when the iterate stays admissible with margin > delta_pd at every
interior node and the residual max-norm decreases.  The homotopy over the
cutoff schedule warm-starts each band from the previous solution and records
interior stability diagnostics in place of a compactness argument.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .barriers import (OrderingReport, SubsolutionReport, default_chi,
                       ordering_check, verify_subsolution)
from .conformal import (RhsFunction, require_interior_admissible,
                        residual_of_w, w_tensor)
from .errors import (AdmissibilityLost, AdmissibilityViolation, LinearSolveFailure,
                     MaxItersExceeded, ValidationError)
from .geometry import MetricPackage, gradient
from .grid import ChartGrid, ScalarField, Sym2Field
from .regularization import build_T, build_psi, psi_one


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_iters: int = 50
    damping: float = 0.5
    max_backtracks: int = 30
    delta_pd: float = 1e-8
    linear_tol: float = 1e-12
    mu_monitor: float = 10.0
    lambda_monitor: float = 1.0
    eps_grad: float = 1e-14
    direct_limit: int = 4000    # unknowns above this use AMG-preconditioned GMRES

    def __post_init__(self):
        for name in ("newton_tol", "delta_pd", "linear_tol", "eps_grad"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 < self.damping < 1.0:
            raise ValidationError("damping must lie in (0, 1)")
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValidationError("iteration limits must be positive")


@dataclass(frozen=True)
class SolveReport:
    u: ScalarField
    converged: bool
    iterations: int
    residual_history: tuple
    margin_history: tuple          # worst interior min-eigenvalue per accepted iterate
    step_sizes: tuple
    linear_residuals: tuple
    gradient_monitor: dict | None
    hessian_monitor: dict | None
    w_max_eig_interior: float
    ordering: OrderingReport | None
    subsolution: SubsolutionReport | None
    k: int | None
    lam: float | None
    elapsed_seconds: float
    continuation: tuple = ()   # (theta, iterations) per ramp stage, if any


def _interior_index(grid: ChartGrid):
    idx = np.full(grid.shape, -1, dtype=np.int64)
    mask = grid.interior_mask
    idx[mask] = np.arange(int(np.count_nonzero(mask)))
    return idx, mask


def _shifted(idx: np.ndarray, offset) -> np.ndarray:
    """out[p] = idx[p + offset] (boundary-safe; only interior p are read)."""
    out = np.full_like(idx, -1)
    src = []
    dst = []
    for o, size in zip(offset, idx.shape):
        if o >= 0:
            dst.append(slice(0, size - o))
            src.append(slice(o, size))
        else:
            dst.append(slice(-o, size))
            src.append(slice(0, size + o))
    out[tuple(dst)] = idx[tuple(src)]
    return out


def assemble_jacobian(u: ScalarField, psi: ScalarField, T: Sym2Field,
                      rhs: RhsFunction, m: MetricPackage,
                      wf=None) -> sp.csr_matrix:
    """Linearization of log det w[u] - f(x, u) on the interior unknowns.

    Action on a perturbation v (v = 0 on the boundary):
        w^{ij} [ v_ij + psi (u_i v_j + u_j v_i) - psi (g^{kl} u_k v_l) g_ij ] - f_z v,
    with v_ij the covariant Hessian stencil.  Unknowns are the interior nodes
    in C order; boundary columns are eliminated.
    """
    grid = u.grid
    n, h = grid.dim, grid.h
    if wf is None:
        wf = w_tensor(u, psi, T, m)
    require_interior_admissible(wf)

    idx, mask = _interior_index(grid)
    w_inv = wf.w_inv
    du = gradient(u).values
    f_z = rhs.f_z_values(u.values, grid.points)
    p = psi.values

    # first-order coefficients c^k v_,k
    c = (-np.einsum("...ij,...kij->...k", w_inv, m.christoffel)
         + 2.0 * p[..., None] * np.einsum("...kj,...j->...k", w_inv, du)
         - (p * wf.trw)[..., None] * np.einsum("...kl,...l->...k", m.g_inv.values, du))

    rows_parts, cols_parts, vals_parts = [], [], []
    rows_of = idx[mask]

    def add(offset, coeff_full):
        nb = _shifted(idx, offset)[mask]
        keep = nb >= 0
        rows_parts.append(rows_of[keep])
        cols_parts.append(nb[keep])
        vals_parts.append(coeff_full[mask][keep])

    zero_off = (0,) * n
    diag_w = np.einsum("...ii->...i", w_inv)
    center = -f_z - 2.0 * np.sum(diag_w, axis=-1) / h ** 2
    add(zero_off, center)

    for a in range(n):
        for sgn in (+1, -1):
            off = tuple(sgn if ax == a else 0 for ax in range(n))
            coeff = diag_w[..., a] / h ** 2 + sgn * c[..., a] / (2.0 * h)
            add(off, coeff)

    for a in range(n):
        for b in range(a + 1, n):
            cross = w_inv[..., a, b] / (2.0 * h ** 2)
            for sa, sb in ((1, 1), (-1, -1)):
                off = tuple(sa if ax == a else (sb if ax == b else 0) for ax in range(n))
                add(off, cross)
            for sa, sb in ((1, -1), (-1, 1)):
                off = tuple(sa if ax == a else (sb if ax == b else 0) for ax in range(n))
                add(off, -cross)

    n_unknowns = int(rows_of.size)
    J = sp.coo_matrix((np.concatenate(vals_parts),
                       (np.concatenate(rows_parts), np.concatenate(cols_parts))),
                      shape=(n_unknowns, n_unknowns))
    return J.tocsr()


class _LinearSolver:
    """Direct sparse LU below cfg.direct_limit, AMG-preconditioned GMRES above.

    Either way the contract is on the achieved residual, measured as a
    normwise backward error:
        ||J d + r||_inf <= linear_tol * max(1, ||r||_inf, ||J||_inf ||d||_inf).
    The last term is the double-precision floor; an absolute bound below
    eps * ||J|| * ||d|| is not attainable by any solver.
    """

    def __init__(self, cfg: SolverConfig, prefer_direct: bool = False):
        self.cfg = cfg
        self.prefer_direct = prefer_direct
        self._ml = None

    def _scale(self, J, b, x):
        row_norm = float(np.max(np.abs(J).sum(axis=1)))
        return max(1.0, float(np.max(np.abs(b))),
                   row_norm * float(np.max(np.abs(x))))

    def _acceptable(self, J, b, x, achieved):
        if not np.all(np.isfinite(x)):
            return False
        if achieved > self.cfg.linear_tol * self._scale(J, b, x):
            return False
        # the ||J|| ||x|| term covers the fp floor of honest solutions, but a
        # diverged iterate with a huge norm would bless itself through it;
        # demand genuine residual reduction too
        b_norm = float(np.max(np.abs(b)))
        return achieved <= max(0.5 * b_norm,
                               self.cfg.linear_tol * max(1.0, b_norm))

    def solve(self, J: sp.csr_matrix, b: np.ndarray) -> tuple:
        if self.prefer_direct or J.shape[0] <= self.cfg.direct_limit:
            return self._direct(J, b)
        try:
            return self._amg_gmres(J, b)
        except LinearSolveFailure:
            if J.shape[0] <= 200_000:
                return self._direct(J, b)
            raise

    def _direct(self, J, b):
        lu = spla.splu(J.tocsc())
        x = lu.solve(b)
        res = b - J @ x
        achieved = float(np.max(np.abs(res)))
        if not self._acceptable(J, b, x, achieved):
            x = x + lu.solve(res)
            achieved = float(np.max(np.abs(b - J @ x)))
        if not self._acceptable(J, b, x, achieved):
            raise LinearSolveFailure(
                f"direct solve residual {achieved:.3e} above tolerance "
                f"{self.cfg.linear_tol:g}")
        return x, achieved

    def _amg_gmres(self, J, b):
        import pyamg

        # classical AMG handles the (mildly nonsymmetric, M-matrix-like)
        # operator far better than default smoothed aggregation here; the
        # hierarchy is reused across Newton iterations until it goes stale
        if self._ml is None or self._ml.levels[0].A.shape != J.shape:
            self._ml = pyamg.ruge_stuben_solver(J)
        M = self._ml.aspreconditioner(cycle="V")
        atol = 0.5 * self.cfg.linear_tol * max(1.0, float(np.max(np.abs(b))))

        # run in chunks and apply the backward-error test ourselves: the
        # Krylov solvers only see 2-norms, which overshoot the inf-norm
        # contract by sqrt(n) and waste restarts
        x = np.zeros_like(b)
        best = (np.inf, x)
        for chunk in range(8):
            if chunk == 2:
                # slow progress with a stale hierarchy: rebuild on the spot
                self._ml = pyamg.ruge_stuben_solver(J)
                M = self._ml.aspreconditioner(cycle="V")
            if chunk < 5:
                x, info = spla.bicgstab(J, b, x0=best[1], M=M, rtol=1e-30,
                                        atol=atol, maxiter=60)
            else:
                x, info = spla.gmres(J, b, x0=best[1], M=M, rtol=1e-30,
                                     atol=atol, restart=30, maxiter=4)
            if info < 0 or not np.all(np.isfinite(x)):
                continue
            achieved = float(np.max(np.abs(b - J @ x)))
            if self._acceptable(J, b, x, achieved):
                return x, achieved
            if achieved < best[0]:
                best = (achieved, x)
        raise LinearSolveFailure(
            f"Krylov residual {best[0]:.3e} above tolerance "
            f"{self.cfg.linear_tol:g}")


def gradient_monitor(u: ScalarField, mu: float, m: MetricPackage,
                     eps_grad: float = 1e-14) -> tuple:
    """Max over all nodes of 0.5 log max(|grad u|^2, eps_grad) + mu u.

    Returns (max value, argmax node, boundary flag).  The floor keeps the
    scan defined where the gradient vanishes.
    """
    du = gradient(u).values
    grad_sq = np.einsum("...ij,...i,...j->...", m.g_inv.values, du, du)
    W = 0.5 * np.log(np.maximum(grad_sq, eps_grad)) + mu * u.values
    flat = int(np.argmax(W))
    node = u.grid.node_index(flat)
    return float(W.flat[flat]), node, not bool(u.grid.interior_mask.flat[flat])


def hessian_monitor(u: ScalarField, lambda_mon: float, chi: ScalarField,
                    psi: ScalarField, T: Sym2Field, m: MetricPackage,
                    region: np.ndarray | None = None) -> tuple:
    """Max over nodes of log(top eigenvalue of w relative to g) + lambda chi.

    The maximizing direction of w_ij eta^i eta^j over g-unit eta is the top
    generalized eigenvector, so only the top eigenvalue is needed.  Evaluated
    on `region` (default: interior nodes), which must be admissible.
    """
    grid = u.grid
    wf = w_tensor(u, psi, T, m)
    mask = grid.interior_mask if region is None else region
    if not np.any(mask):
        raise ValidationError("hessian monitor region is empty")
    bad = mask & ~wf.admissible_mask
    if np.any(bad):
        node = np.unravel_index(np.argmax(bad), grid.shape)
        raise AdmissibilityViolation("w is not admissible on the monitor region",
                                     node, float(wf.min_eig[node]))
    L = np.linalg.cholesky(m.g.values[mask])
    wm = wf.w.values[mask]
    X = np.linalg.solve(L, wm)
    C = np.swapaxes(np.linalg.solve(L, np.swapaxes(X, -1, -2)), -1, -2)
    top = np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, -1, -2)))[..., -1]
    W = np.log(top) + lambda_mon * chi.values[mask]
    flat = int(np.argmax(W))
    node = tuple(np.argwhere(mask)[flat])
    return float(W[flat]), node


def _monitors(u, psi, T, m, cfg, chi, region=None):
    gm_val, gm_node, gm_bnd = gradient_monitor(u, cfg.mu_monitor, m, cfg.eps_grad)
    grad_mon = {"value": gm_val, "argmax": gm_node, "on_boundary": gm_bnd}
    hess_mon = None
    if chi is None:
        try:
            chi = default_chi(m)
        except ValidationError:
            chi = None
    if chi is not None:
        hm_val, hm_node = hessian_monitor(u, cfg.lambda_monitor, chi, psi, T, m,
                                          region=region)
        hess_mon = {"value": hm_val, "argmax": hm_node}
    return grad_mon, hess_mon


def newton_solve(u0: ScalarField, psi: ScalarField, T: Sym2Field,
                 rhs: RhsFunction, m: MetricPackage,
                 config: SolverConfig | None = None, *,
                 ul: ScalarField | None = None, ubar: ScalarField | None = None,
                 chi: ScalarField | None = None, k: int | None = None,
                 lam: float | None = None, progress=None) -> SolveReport:
    """Damped Newton iteration from u0, holding its boundary values fixed.

    A step is accepted only if every interior node keeps min eig(w) > delta_pd
    and the residual max-norm decreases; the recorded histories are exactly
    what the iteration produced.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    grid = u0.grid
    mask = grid.interior_mask

    wf = w_tensor(u0, psi, T, m)
    margin = float(np.min(wf.min_eig[mask]))
    if margin <= cfg.delta_pd:
        bad = mask & (wf.min_eig <= cfg.delta_pd)
        node = np.unravel_index(np.argmax(bad), grid.shape)
        raise AdmissibilityViolation("initial guess is not admissible",
                                     node, margin)
    u = u0.values.copy()
    res_full = residual_of_w(wf, u0, rhs)
    res_norm = float(np.max(np.abs(res_full[mask])))

    residual_history = [res_norm]
    margin_history = [margin]
    step_sizes = []
    linear_residuals = []
    # 2-d factorizations stay cheap at any size; AMG only pays off in 3-d
    linsolver = _LinearSolver(cfg, prefer_direct=grid.dim <= 2)
    converged = res_norm <= cfg.newton_tol
    iterations = 0
    alpha_prev = 1.0

    while not converged:
        if iterations >= cfg.max_iters:
            raise MaxItersExceeded(
                f"residual {res_norm:.3e} after {iterations} iterations "
                f"(target {cfg.newton_tol:g})")
        u_field = ScalarField(grid, u)
        J = assemble_jacobian(u_field, psi, T, rhs, m, wf=wf)
        delta, lin_res = linsolver.solve(J, -res_full[mask])
        linear_residuals.append(lin_res)

        # start near the last accepted step: when the cone forces damping,
        # re-probing alpha = 1 every iteration just burns evaluations
        alpha = min(1.0, 4.0 * alpha_prev)
        accepted = False
        margin_blocked = True
        for _ in range(cfg.max_backtracks + 1):
            u_try = u.copy()
            u_try[mask] += alpha * delta
            try_field = ScalarField(grid, u_try)
            wf_try = w_tensor(try_field, psi, T, m)
            margin_try = float(np.min(wf_try.min_eig[mask]))
            if margin_try <= cfg.delta_pd:
                alpha *= cfg.damping
                continue
            margin_blocked = False
            res_try = residual_of_w(wf_try, try_field, rhs)
            res_try_norm = float(np.max(np.abs(res_try[mask])))
            if res_try_norm < res_norm:
                u, wf, res_full, res_norm, margin = (
                    u_try, wf_try, res_try, res_try_norm, margin_try)
                accepted = True
                break
            alpha *= cfg.damping
        if not accepted:
            if margin_blocked:
                raise AdmissibilityLost(
                    f"no step length down to {alpha:g} keeps the admissibility "
                    f"margin above {cfg.delta_pd:g}")
            raise MaxItersExceeded(
                f"line search stalled at residual {res_norm:.3e}")

        iterations += 1
        alpha_prev = alpha
        residual_history.append(res_norm)
        margin_history.append(margin)
        step_sizes.append(alpha)
        converged = res_norm <= cfg.newton_tol
        if progress is not None:
            progress({"iteration": iterations, "residual": res_norm,
                      "margin": margin, "step": alpha, "linear": lin_res})

    u_final = ScalarField(grid, u)
    grad_mon, hess_mon = _monitors(u_final, psi, T, m, cfg, chi)
    w_max = float(np.max(np.linalg.eigvalsh(wf.w.values[mask])))
    ordering = ordering_check(ul, u_final, ubar) if ul is not None else None

    return SolveReport(u=u_final, converged=True, iterations=iterations,
                       residual_history=tuple(residual_history),
                       margin_history=tuple(margin_history),
                       step_sizes=tuple(step_sizes),
                       linear_residuals=tuple(linear_residuals),
                       gradient_monitor=grad_mon, hessian_monitor=hess_mon,
                       w_max_eig_interior=w_max, ordering=ordering,
                       subsolution=None, k=k, lam=lam,
                       elapsed_seconds=time.perf_counter() - t0)


def _offset_rhs(rhs: RhsFunction, offset_values, weight: float) -> RhsFunction:
    """f(x, z) + weight * offset(x); the continuation's shifted right side."""
    return RhsFunction(
        mode="general", dim=rhs.dim,
        f_fn=lambda pts, z: rhs.f_values(z, pts) + weight * offset_values,
        f_z_fn=lambda pts, z: rhs.f_z_values(z, pts))


def continued_newton(u0: ScalarField, psi: ScalarField, T: Sym2Field,
                     rhs: RhsFunction, m: MetricPackage,
                     config: SolverConfig | None = None, *,
                     ul: ScalarField | None = None,
                     ubar: ScalarField | None = None,
                     chi: ScalarField | None = None, k: int | None = None,
                     lam: float | None = None, progress=None,
                     start_threshold: float = 0.5) -> SolveReport:
    """Damped Newton, with natural continuation on the right side when the
    start is far from a root.

    If the initial residual max-norm is below start_threshold this is
    exactly newton_solve.  Otherwise f is shifted by (1 - theta) * r0, so
    u0 solves the theta = 0 problem exactly, and theta is stepped to 1
    adaptively (halving on a failed stage, growing after a successful one).
    The returned residual history is that of the final stage (the true
    equation); margins, step sizes and linear residuals cover every accepted
    iterate of every stage; the continuation field records
    (theta, iterations) per stage.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    grid = u0.grid
    mask = grid.interior_mask
    wf0 = w_tensor(u0, psi, T, m)
    res0 = residual_of_w(wf0, u0, rhs)
    res0_norm = float(np.max(np.abs(res0[mask])))
    if res0_norm <= max(start_threshold, cfg.newton_tol):
        return newton_solve(u0, psi, T, rhs, m, cfg, ul=ul, ubar=ubar, chi=chi,
                            k=k, lam=lam, progress=progress)

    offset = np.where(np.isfinite(res0), res0, 0.0)
    loose = replace(cfg, newton_tol=min(1e-4, 0.01 * res0_norm),
                    max_iters=min(cfg.max_iters, 15),
                    linear_tol=max(cfg.linear_tol, 1e-6))
    # a stage starts with residual exactly dtheta * ||r0||; keep that near 1
    dtheta_cap = min(0.5, 1.2 / res0_norm)
    theta, dtheta = 0.0, min(0.5, 1.0 / res0_norm)
    u_cur = u0
    stages = []
    histories = {"margin": [], "steps": [], "linear": []}
    while theta < 1.0:
        t_next = min(1.0, theta + dtheta)
        stage_rhs = rhs if t_next >= 1.0 else _offset_rhs(rhs, offset, 1.0 - t_next)
        stage_cfg = cfg if t_next >= 1.0 else loose

        def stage_progress(info, _t=t_next):
            if progress is not None:
                progress(dict(info, theta=_t))

        try:
            rep = newton_solve(u_cur, psi, T, stage_rhs, m, stage_cfg,
                               ul=ul, ubar=ubar, chi=chi, k=k, lam=lam,
                               progress=stage_progress)
        except (MaxItersExceeded, AdmissibilityLost, LinearSolveFailure):
            dtheta *= 0.5
            if dtheta < 1.0 / 2048.0:
                raise MaxItersExceeded(
                    f"continuation stalled at theta = {theta:g} "
                    f"(initial residual {res0_norm:.3e})")
            continue
        u_cur = rep.u
        theta = t_next
        if theta < 1.0:
            if rep.step_sizes and min(rep.step_sizes) < 0.25:
                # the cone forced heavy damping: take smaller ramp steps
                dtheta = max(0.25 * dtheta, 1.0 / 1024.0)
            else:
                dtheta = min(2.0 * dtheta, dtheta_cap)
            dtheta = min(dtheta, 1.0 - theta)
        stages.append((theta, rep.iterations))
        histories["margin"].extend(rep.margin_history if not histories["margin"]
                                   else rep.margin_history[1:])
        histories["steps"].extend(rep.step_sizes)
        histories["linear"].extend(rep.linear_residuals)
        final = rep
    return replace(final,
                   iterations=sum(n for _, n in stages),
                   margin_history=tuple(histories["margin"]),
                   step_sizes=tuple(histories["steps"]),
                   linear_residuals=tuple(histories["linear"]),
                   continuation=tuple(stages),
                   elapsed_seconds=time.perf_counter() - t0)


def solve_regularized(problem, k: int | None, lam: float | None = None,
                      config: SolverConfig | None = None,
                      progress=None) -> SolveReport:
    """Solve one regularized problem (band index k, or psi = 1 when k is None)
    starting from the subsolution.

    The subsolution check for this band is attached to the report rather than
    gating the solve: a subsolution that holds with equality sits at the
    truncation floor and is still a legitimate start.
    """
    m = problem.metric
    grid = problem.grid
    S = problem.schouten_eff
    if k is None:
        psi = psi_one(grid)
        T = S
        lam_used = None
    else:
        lam_used = problem.lam if lam is None else lam
        if lam_used is None:
            raise ValidationError("a concrete lambda is required for a band solve")
        psi = build_psi(grid, k)
        T = build_T(S, psi, float(lam_used), m)
    sub = verify_subsolution(problem.ul, psi, T, problem.rhs, m)
    report = continued_newton(problem.ul, psi, T, problem.rhs, m, config,
                              ul=problem.ul, ubar=problem.ubar, chi=problem.chi,
                              k=k, lam=lam_used, progress=progress)
    return replace(report, subsolution=sub)


def _admissible_start(u_start: ScalarField, ul: ScalarField, psi, T, m,
                      cfg: SolverConfig) -> ScalarField:
    """Warm start for the next band, nudged into its admissible set.

    The admissible sets of neighboring bands differ in the transition ring,
    so the previous band's solution can sit slightly outside the next one's.
    The smallest blend toward the subsolution that clears the margin keeps
    the start warm; if none does, restart from the subsolution outright.
    """
    grid = u_start.grid
    mask = grid.interior_mask

    def margin(field):
        return float(np.min(w_tensor(field, psi, T, m).min_eig[mask]))

    if margin(u_start) > cfg.delta_pd:
        return u_start
    for c in (2.0 ** -10, 2.0 ** -8, 2.0 ** -6, 2.0 ** -4, 0.25, 0.5):
        blend = ScalarField(grid, (1.0 - c) * u_start.values + c * ul.values)
        if margin(blend) > 10.0 * cfg.delta_pd:
            return blend
    return ul


def homotopy_solve(problem, k_list, config: SolverConfig | None = None,
                   progress=None):
    """Solve along an increasing band schedule, warm-starting from the previous
    solution, and summarize stability on the fixed interior core {d > 2/k_min}
    where every band's cutoff equals one.

    Returns (reports, summary).
    """
    cfg = config or SolverConfig()
    ks = [int(k) for k in k_list]
    if any(b <= a for a, b in zip(ks, ks[1:])) or not ks:
        raise ValidationError(f"k_list must be nonempty and strictly increasing, got {ks}")
    m = problem.metric
    grid = problem.grid
    S = problem.schouten_eff
    if problem.lam is None:
        raise ValidationError("resolve lambda before running the homotopy")
    lam = float(problem.lam)
    core = grid.boundary_distance > 2.0 / ks[0]
    if not np.any(core):
        raise ValidationError(
            f"interior core d > {2.0 / ks[0]:g} is empty on this grid")

    chi = problem.chi
    if chi is None:
        try:
            chi = default_chi(m)
        except ValidationError:
            chi = None

    reports = []
    solutions = []
    hess_trace = []
    grad_trace = []
    u_start = problem.ul
    for k in ks:
        psi = build_psi(grid, k)
        T = build_T(S, psi, lam, m)
        sub = verify_subsolution(problem.ul, psi, T, problem.rhs, m)
        u_start = _admissible_start(u_start, problem.ul, psi, T, m, cfg)
        rep = continued_newton(u_start, psi, T, problem.rhs, m, cfg,
                               ul=problem.ul, ubar=problem.ubar, chi=chi,
                               k=k, lam=lam, progress=progress)
        rep = replace(rep, subsolution=sub)
        reports.append(rep)
        solutions.append(rep.u)
        u_start = rep.u
        grad_trace.append(rep.gradient_monitor["value"])
        if chi is not None:
            val, _ = hessian_monitor(rep.u, cfg.lambda_monitor, chi, psi, T, m,
                                     region=core)
            hess_trace.append(val)

    diffs = [float(np.max(np.abs(a.values[core] - b.values[core])))
             for a, b in zip(solutions, solutions[1:])]

    def variation(tr):
        if not tr:
            return None
        lo, hi = min(tr), max(tr)
        scale = max(abs(0.5 * (lo + hi)), 1e-30)
        return (hi - lo) / scale

    summary = {
        "k_list": ks,
        "lambda": lam,
        "core_distance": 2.0 / ks[0],
        "core_nodes": int(np.count_nonzero(core)),
        "interior_diffs": diffs,
        "diffs_strictly_decreasing": bool(
            all(b < a for a, b in zip(diffs, diffs[1:]))) if len(diffs) > 1 else None,
        "hessian_monitor_trace": hess_trace or None,
        "hessian_monitor_variation": variation(hess_trace),
        "gradient_monitor_trace": grad_trace,
        "gradient_monitor_variation": variation(grad_trace),
    }
    return reports, summary
