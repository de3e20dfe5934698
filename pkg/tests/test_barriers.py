import numpy as np
import pytest

from schouten.barriers import (check_chi, default_chi, flat_supersolution,
                               logdet_difference, mean_value_operator,
                               ordering_check, reconstruct_difference,
                               verify_subsolution, verify_supersolution)
from schouten.conformal import RhsFunction, f_from_s, w_tensor
from schouten.errors import AdmissibilityViolation, HypothesisError
from schouten.geometry import flat_metric
from schouten.grid import ScalarField, Sym2Field, build_grid
from schouten.mms import sphere_problem
from schouten.regularization import PsiSchedule, psi_one, psi_zero


def zero_tensor(grid):
    return Sym2Field(grid, np.zeros(grid.shape + (grid.dim, grid.dim)))


def lemma_setup(res=17):
    grid = build_grid(3, [[-1, 1]] * 3, res)
    m = flat_metric(grid)
    ul = ScalarField(grid, 0.25 * np.sum(grid.points ** 2, axis=-1))
    rhs = f_from_s(ScalarField.constant(grid, 0.01), m)
    return grid, m, ul, rhs


def test_exact_solution_margin_at_truncation_floor():
    # the manufactured solution satisfies the inequality with equality, so
    # its discrete margin is O(h^2); on this off-center box the truncation
    # is one-signed and the strict check passes as well
    p = sphere_problem([[0.38, 0.44]] * 3, 17)
    rep = verify_subsolution(p.ul, psi_one(p.grid), p.schouten_eff, p.rhs,
                             p.metric)
    assert rep.admissible
    assert abs(rep.worst_margin) < 10 * p.grid.h ** 2
    assert rep.passed


def test_strict_subsolution_margin():
    grid = build_grid(3, [[-1, 1]] * 3, 9)
    m = flat_metric(grid)
    ul = ScalarField(grid, 0.5 * np.sum(grid.points ** 2, axis=-1))
    rhs = RhsFunction.general(3, lambda pts, z: np.full(np.shape(z), -1.0))
    rep = verify_subsolution(ul, psi_zero(grid), zero_tensor(grid), rhs, m)
    assert rep.passed
    assert rep.worst_margin == pytest.approx(1.0, abs=1e-12)


def test_inadmissible_subsolution_fails_not_raises():
    grid, m, _, rhs = lemma_setup(9)
    rep = verify_subsolution(ScalarField.constant(grid, 0.0), psi_one(grid),
                             zero_tensor(grid), rhs, m)
    assert not rep.passed
    assert not rep.admissible


def test_supersolution_of_lemma_construction():
    grid, m, ul, rhs = lemma_setup(33)
    ubar, eps = flat_supersolution(ul, rhs, m)
    assert 0 < eps <= 1
    sched = PsiSchedule.build(grid, [2, 4])
    rep = verify_supersolution(ubar, ul, sched, m.schouten, 0.0, rhs, m,
                               include_endpoints=True)
    assert rep.passed and rep.ordered
    assert all(r.passed for r in rep.per_k)


def test_strict_subsolution_is_not_supersolution():
    grid, m, ul, rhs = lemma_setup(17)
    sched = PsiSchedule.build(grid, [2])
    rep = verify_supersolution(ul, ul, sched, m.schouten, 0.0, rhs, m)
    assert rep.ordered
    assert not rep.passed  # log det w[ul] > f wherever positive definite


def test_supersolution_ordering_precondition():
    grid, m, ul, rhs = lemma_setup(17)
    below = ScalarField(grid, ul.values - 1e-3)
    sched = PsiSchedule.build(grid, [2])
    rep = verify_supersolution(below, ul, sched, m.schouten, 0.0, rhs, m)
    assert not rep.passed and not rep.ordered


def test_flat_supersolution_hypothesis_violations():
    grid, m, ul, _ = lemma_setup(9)
    # determinant hypothesis fails for a large target
    rhs_big = f_from_s(ScalarField.constant(grid, 10.0), m)
    with pytest.raises(HypothesisError):
        flat_supersolution(ul, rhs_big, m)
    # non-convex subsolution
    saddle = ScalarField(grid, 0.25 * (grid.points[..., 0] ** 2
                                       - grid.points[..., 1] ** 2))
    rhs = f_from_s(ScalarField.constant(grid, 0.01), m)
    with pytest.raises(HypothesisError):
        flat_supersolution(saddle, rhs, m)


def test_flat_supersolution_requires_flat_background():
    from schouten.geometry import curvature_package
    from schouten.mms import sphere_conformal_metric

    grid = build_grid(3, [[-0.4, 0.4]] * 3, 9)
    m = curvature_package(sphere_conformal_metric(grid))
    ul = ScalarField(grid, 0.5 * np.sum(grid.points ** 2, axis=-1))
    rhs = f_from_s(ScalarField.constant(grid, 0.01), m)
    with pytest.raises(HypothesisError):
        flat_supersolution(ul, rhs, m)


def test_mean_value_identity_trivial_pair():
    grid, m, ul, rhs = lemma_setup(9)
    psi = psi_one(grid)
    op = mean_value_operator(ul, ul, psi, m.schouten, rhs, m)
    wf = w_tensor(ul, psi, m.schouten, m)
    mask = grid.interior_mask
    assert np.abs(op.a.values[mask] - wf.w_inv[mask]).max() < 1e-12
    assert np.all(op.d_coeff.values == 6.0)
    rec = reconstruct_difference(op, ul, ul, m)
    assert np.nanmax(np.abs(rec)) == 0.0


def test_mean_value_constant_diagonal_gives_log2():
    grid = build_grid(2, [[-1, 1]] * 2, 9)
    m = flat_metric(grid)
    r_sq = np.sum(grid.points ** 2, axis=-1)
    ul = ScalarField(grid, r_sq)          # Hessian 2I
    u = ScalarField(grid, 0.5 * r_sq)     # Hessian I
    rhs = f_from_s(ScalarField.constant(grid, 1.0), m)
    op = mean_value_operator(ul, u, psi_zero(grid), zero_tensor(grid), rhs, m)
    mask = grid.interior_mask
    assert np.abs(op.a.values[mask] - np.log(2.0) * np.eye(2)).max() < 1e-9


def test_mean_value_identity_random_pairs():
    rng = np.random.default_rng(11)
    grid = build_grid(2, [[-1, 1]] * 2, 5)
    m = flat_metric(grid)
    accepted = 0
    while accepted < 5:
        T = Sym2Field(grid, np.broadcast_to(2.0 * np.eye(2),
                                            grid.shape + (2, 2)).copy())
        ul = ScalarField(grid, 0.04 * rng.standard_normal(grid.shape))
        u = ScalarField(grid, 0.04 * rng.standard_normal(grid.shape))
        psi = ScalarField(grid, rng.uniform(0, 1, grid.shape))
        rhs = f_from_s(ScalarField(grid, 0.5 + rng.uniform(0, 1, grid.shape)), m)
        mask = grid.interior_mask
        if not (w_tensor(ul, psi, T, m).admissible_mask[mask].all()
                and w_tensor(u, psi, T, m).admissible_mask[mask].all()):
            continue
        accepted += 1
        op = mean_value_operator(ul, u, psi, T, rhs, m)
        lhs = logdet_difference(ul, u, psi, T, rhs, m)
        rec = reconstruct_difference(op, ul, u, m)
        assert np.nanmax(np.abs(lhs - rec)) < 1e-6
        # a is symmetric positive definite where both inputs are admissible
        eig = np.linalg.eigvalsh(op.a.values[mask])
        assert eig[..., 0].min() > 0


def test_mean_value_general_mode_d_coefficient():
    grid = build_grid(2, [[-1, 1]] * 2, 5)
    m = flat_metric(grid)
    T = Sym2Field(grid, np.broadcast_to(2.0 * np.eye(2),
                                        grid.shape + (2, 2)).copy())
    ul = ScalarField.constant(grid, 0.3)
    u = ScalarField.constant(grid, -0.1)
    rhs = RhsFunction.general(2, lambda pts, z: np.sin(z),
                              lambda pts, z: np.cos(z))
    op = mean_value_operator(ul, u, psi_zero(grid), T, rhs, m)
    # d = -integral of cos(t ul + (1-t) u) dt = -(sin(ul)-sin(u))/(ul-u)
    expect = -(np.sin(0.3) - np.sin(-0.1)) / 0.4
    assert np.abs(op.d_coeff.values - expect).max() < 1e-12
    lhs = logdet_difference(ul, u, psi_zero(grid), T, rhs, m)
    rec = reconstruct_difference(op, ul, u, m)
    assert np.nanmax(np.abs(lhs - rec)) < 1e-12


def test_mean_value_rejects_inadmissible_input():
    grid, m, ul, rhs = lemma_setup(9)
    bad = ScalarField.constant(grid, 0.0)
    with pytest.raises(AdmissibilityViolation):
        mean_value_operator(ul, bad, psi_one(grid), m.schouten, rhs, m)


def test_quadrature_doubling_guard():
    grid, m, ul, rhs = lemma_setup(9)
    u = ScalarField(grid, 0.3 * np.sum(grid.points ** 2, axis=-1))
    psi = psi_one(grid)
    rec16 = reconstruct_difference(
        mean_value_operator(ul, u, psi, m.schouten, rhs, m, order=16), ul, u, m)
    rec32 = reconstruct_difference(
        mean_value_operator(ul, u, psi, m.schouten, rhs, m, order=32), ul, u, m)
    assert np.nanmax(np.abs(rec32 - rec16)) < 1e-9


def test_ordering_check():
    grid = build_grid(2, [[0, 1]] * 2, 5)
    ul = ScalarField.constant(grid, 0.0)
    ubar = ScalarField.constant(grid, 1.0)
    assert ordering_check(ul, ul, ubar).passed
    above = ScalarField(grid, np.where(grid.boundary_distance > 0.3, 2.0, 0.5))
    rep = ordering_check(ul, above, ubar)
    assert not rep.passed and rep.lower_ok and not rep.upper_ok
    assert ordering_check(ul, ScalarField.constant(grid, 0.5)).passed


def test_default_chi_and_check():
    grid = build_grid(3, [[-1, 1]] * 3, 9)
    m = flat_metric(grid)
    chi = default_chi(m)
    assert check_chi(chi, m) >= -1e-8
    flat_chi = ScalarField.constant(grid, 1.0)
    with pytest.raises(HypothesisError):
        check_chi(flat_chi, m)


def test_barrier_pair_build_validates():
    from schouten.barriers import BarrierPair
    from schouten.errors import ValidationError as VErr

    grid, m, ul, rhs = lemma_setup(17)
    sched = PsiSchedule.build(grid, [2])
    ubar, eps = flat_supersolution(ul, rhs, m)
    pair = BarrierPair.build(ul, ubar, sched, m.schouten, 0.0, rhs, m, eps=eps)
    assert pair.supersolution.passed
    assert pair.subsolution.admissible
    below = ScalarField(grid, ul.values - 1.0)
    with pytest.raises(VErr):
        BarrierPair.build(ul, below, sched, m.schouten, 0.0, rhs, m)
