import numpy as np
import pytest

from schouten.conformal import f_from_s, residual, w_tensor
from schouten.errors import AdmissibilityViolation, ValidationError
from schouten.geometry import flat_metric
from schouten.grid import ScalarField, Sym2Field, build_grid
from schouten.mms import interior_bump, solve_sphere_mms, sphere_factor, sphere_problem
from schouten.regularization import build_T, build_psi, psi_one, psi_zero
from schouten.solver import (SolverConfig, assemble_jacobian, gradient_monitor,
                             hessian_monitor, homotopy_solve, newton_solve,
                             solve_regularized)


def zero_tensor(grid):
    return Sym2Field(grid, np.zeros(grid.shape + (grid.dim, grid.dim)))


def test_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(damping=1.5)
    with pytest.raises(ValidationError):
        SolverConfig(newton_tol=0.0)


def test_jacobian_matches_directional_derivative():
    p = sphere_problem([[-0.5, 0.5]] * 3, 17)
    grid, m = p.grid, p.metric
    psi = build_psi(grid, 4)
    T = build_T(p.schouten_eff, psi, 0.3, m)
    J = assemble_jacobian(p.ul, psi, T, p.rhs, m)
    mask = grid.interior_mask
    r0 = residual(p.ul, psi, T, p.rhs, m)[mask]
    rng = np.random.default_rng(5)
    for _ in range(3):
        v = np.zeros(grid.shape)
        v[mask] = rng.standard_normal(int(mask.sum()))
        v /= np.max(np.abs(v))
        Jv = J @ v[mask]
        errs = []
        for h in (1e-3, 1e-4, 1e-5):
            rp = residual(ScalarField(grid, p.ul.values + h * v), psi, T,
                          p.rhs, m)[mask]
            errs.append(np.max(np.abs((rp - r0) / h - Jv)))
        assert errs[0] > errs[1] > errs[2]


def test_jacobian_constant_perturbation_deep_interior():
    p = sphere_problem([[-0.5, 0.5]] * 3, 17)
    grid = p.grid
    psi0 = psi_zero(grid)
    T0 = build_T(p.schouten_eff, psi0, 0.0, p.metric)
    J = assemble_jacobian(p.ul, psi0, T0, p.rhs, p.metric)
    mask = grid.interior_mask
    ones = np.zeros(grid.shape)
    ones[mask] = 1.0
    Jv = np.full(grid.shape, np.nan)
    Jv[mask] = J @ ones[mask]
    deep = grid.boundary_distance > 2.5 * grid.h
    assert np.allclose(Jv[deep], 6.0, atol=1e-10)


def test_jacobian_second_order_block_for_flat_quadratic():
    grid = build_grid(3, [[-0.5, 0.5]] * 3, 9)
    m = flat_metric(grid)
    u = ScalarField(grid, 0.5 * np.sum(grid.points ** 2, axis=-1))
    rhs = f_from_s(ScalarField.constant(grid, 1.0), m)
    J = assemble_jacobian(u, psi_zero(grid), zero_tensor(grid), rhs, m).tocsr()
    # w = identity: center row has -f_z - 2n/h^2 on the diagonal and 1/h^2
    # on the six face neighbors
    from schouten.solver import _interior_index

    idx, mask = _interior_index(grid)
    center = tuple(r // 2 for r in grid.shape)
    row = J.getrow(int(idx[center])).toarray().ravel()
    h2 = grid.h ** 2
    assert row[idx[center]] == pytest.approx(6.0 - 6.0 / h2, rel=1e-12)
    nb = tuple((center[0] + 1, center[1], center[2]))
    assert row[idx[nb]] == pytest.approx(1.0 / h2, rel=1e-12)
    assert np.count_nonzero(row) == 7


def test_newton_restart_from_solution_is_instant():
    rep1, exact, _ = solve_sphere_mms([[-0.5, 0.5]] * 3, 9)
    p = sphere_problem([[-0.5, 0.5]] * 3, 9)
    rep2 = newton_solve(rep1.u, psi_one(p.grid), p.schouten_eff, p.rhs,
                        p.metric)
    assert rep2.iterations <= 2
    assert rep2.residual_history[-1] <= 1e-10


def test_newton_converges_from_perturbed_start():
    rep, exact, err = solve_sphere_mms([[-0.5, 0.5]] * 3, 17)
    assert rep.converged
    assert rep.iterations <= 15
    assert rep.residual_history[-1] <= 1e-10
    assert err < 1e-3
    assert all(m > 1e-8 for m in rep.margin_history)
    # histories as produced: one residual per accepted iterate plus the start
    assert len(rep.residual_history) == rep.iterations + 1


def test_newton_rejects_inadmissible_start():
    p = sphere_problem([[-0.5, 0.5]] * 3, 9)
    with pytest.raises(AdmissibilityViolation):
        newton_solve(ScalarField.constant(p.grid, 0.0), psi_one(p.grid),
                     zero_tensor(p.grid), p.rhs, p.metric)


def test_solve_regularized_band_and_ordering():
    p = sphere_problem([[-0.5, 0.5]] * 3, 17)
    p.lam = 0.5
    rep = solve_regularized(p, 4)
    assert rep.converged
    assert rep.k == 4 and rep.lam == 0.5
    assert rep.subsolution is not None
    assert rep.ordering is not None and rep.ordering.upper_ok


def test_solve_regularized_unresolved_band():
    from schouten.errors import BandUnresolvedError

    p = sphere_problem([[-0.5, 0.5]] * 3, 9)  # h = 1/8 resolves only k <= 2
    p.lam = 0.5
    with pytest.raises(BandUnresolvedError):
        solve_regularized(p, 4)


def test_solve_regularized_psi_one_reproduces_exact_solution():
    p = sphere_problem([[-0.4, 0.4]] * 3, 9)
    rep = solve_regularized(p, None)
    assert rep.converged
    assert rep.k is None and rep.lam is None
    err = np.max(np.abs(rep.u.values - p.ul.values))
    assert err < 10 * p.grid.h ** 2


def test_homotopy_single_band_equals_solve_regularized():
    p = sphere_problem([[-1.125, 1.125]] * 3, 19)  # h = 1/8, k = 2 only
    p.lam = 1.0
    reports, summary = homotopy_solve(p, [2])
    direct = solve_regularized(p, 2)
    assert np.array_equal(reports[0].u.values, direct.u.values)
    assert summary["interior_diffs"] == []


def test_homotopy_validates_schedule():
    p = sphere_problem([[-1.125, 1.125]] * 3, 19)
    p.lam = 1.0
    with pytest.raises(ValidationError):
        homotopy_solve(p, [4, 2])
    with pytest.raises(ValidationError):
        homotopy_solve(p, [])
    p.lam = None
    with pytest.raises(ValidationError):
        homotopy_solve(p, [2])


def test_homotopy_2d_interior_stability():
    # n = 2 with a replacement tensor; core {d > 1} has psi_k = 1 for all k
    grid = build_grid(2, [[-1.25, 1.25]] * 2, 41)  # h = 1/16, k up to 4
    m = flat_metric(grid)
    r_sq = np.sum(grid.points ** 2, axis=-1)
    from schouten.conformal import RhsFunction
    from schouten.problem import ProblemSpec

    T_repl = Sym2Field(grid, np.broadcast_to(2.0 * np.eye(2),
                                             grid.shape + (2, 2)).copy())
    rhs = RhsFunction.general(
        2, lambda pts, z: 1.8 + np.sum(pts ** 2, axis=-1) * 0.5 - z,
        lambda pts, z: np.full(np.shape(z), -1.0))
    p = ProblemSpec(grid=grid, metric=m, rhs=rhs,
                    ul=ScalarField(grid, 0.5 * r_sq),
                    schouten_override=T_repl, lam=0.0)
    reports, summary = homotopy_solve(p, [2, 4])
    assert all(r.converged for r in reports)
    assert len(summary["interior_diffs"]) == 1
    assert summary["hessian_monitor_variation"] < 0.1
    assert summary["gradient_monitor_variation"] < 0.1


def test_gradient_monitor_values():
    grid = build_grid(3, [[-0.5, 0.5]] * 3, 9)
    m = flat_metric(grid)
    u = ScalarField.from_function(grid, lambda p: p[..., 0])
    val, node, on_bdry = gradient_monitor(u, 0.0, m)
    assert val == pytest.approx(0.0, abs=1e-12)
    zero = ScalarField.constant(grid, 0.0)
    val0, _, _ = gradient_monitor(zero, 0.0, m)
    assert val0 == pytest.approx(0.5 * np.log(1e-14))


def test_hessian_monitor_values():
    grid = build_grid(3, [[-0.5, 0.5]] * 3, 9)
    m = flat_metric(grid)
    # Hessian diag(2, 1, 1): top eigenvalue 2 everywhere
    u = ScalarField.from_function(
        grid, lambda p: p[..., 0] ** 2 + 0.5 * p[..., 1] ** 2 + 0.5 * p[..., 2] ** 2)
    chi = ScalarField.constant(grid, 0.0)
    val, _ = hessian_monitor(u, 0.0, chi, psi_zero(grid), zero_tensor(grid), m)
    assert val == pytest.approx(np.log(2.0), abs=1e-12)

    # center-only region of the quadratic at psi = 1: w(0) = identity
    u2 = ScalarField(grid, 0.5 * np.sum(grid.points ** 2, axis=-1))
    region = np.zeros(grid.shape, dtype=bool)
    region[tuple(r // 2 for r in grid.shape)] = True
    val2, _ = hessian_monitor(u2, 0.0, chi, psi_one(grid), zero_tensor(grid),
                              m, region=region)
    assert val2 == pytest.approx(0.0, abs=1e-12)


def test_hessian_monitor_rejects_inadmissible_region():
    grid = build_grid(3, [[-0.5, 0.5]] * 3, 9)
    m = flat_metric(grid)
    u = ScalarField.constant(grid, 0.0)
    chi = ScalarField.constant(grid, 0.0)
    with pytest.raises(AdmissibilityViolation):
        hessian_monitor(u, 0.0, chi, psi_one(grid), zero_tensor(grid), m)


def test_continuation_reaches_far_target():
    # multiply the target by e: the interior wants to sit ~1/(2n) below the
    # boundary data, far enough that plain Newton needs the ramp
    p = sphere_problem([[-0.4, 0.4]] * 3, 9)
    grid, m = p.grid, p.metric
    s_big = ScalarField.constant(grid, 0.125 * np.exp(1.0))
    rhs = f_from_s(s_big, m)
    from schouten.solver import continued_newton

    rep = continued_newton(p.ul, psi_one(grid), p.schouten_eff, rhs, m,
                           ul=p.ul)
    assert rep.converged
    assert rep.residual_history[-1] <= 1e-10
    assert len(rep.continuation) >= 2
    assert rep.continuation[-1][0] == 1.0
    assert all(mg > 1e-8 for mg in rep.margin_history)


def test_continuation_stops_at_infeasible_target():
    # scaling the target by e^3 pushes the boundary-pinned solution out of
    # the admissible cone; the ramp must stall rather than fake an answer
    from schouten.errors import MaxItersExceeded
    from schouten.solver import continued_newton

    p = sphere_problem([[-0.4, 0.4]] * 3, 9)
    rhs = f_from_s(ScalarField.constant(p.grid, 0.125 * np.exp(3.0)), p.metric)
    with pytest.raises(MaxItersExceeded):
        continued_newton(p.ul, psi_one(p.grid), p.schouten_eff, rhs, p.metric)
