import numpy as np
import pytest

from schouten.conformal import f_from_s
from schouten.errors import (BandUnresolvedError, HypothesisError,
                             LambdaSearchError, ValidationError)
from schouten.geometry import flat_metric
from schouten.grid import ScalarField, Sym2Field, build_grid
from schouten.regularization import (PsiSchedule, _interior_margin, build_T,
                                     build_psi, select_lambda)


def zero_tensor(grid):
    return Sym2Field(grid, np.zeros(grid.shape + (grid.dim, grid.dim)))


def node_with_distance(grid, d):
    flat = np.argmin(np.abs(grid.boundary_distance - d))
    return np.unravel_index(flat, grid.shape)


def test_cutoff_band_values():
    # h = 0.025 resolves k = 10; probe exact distances 0.05, 0.15, 0.25
    g = build_grid(2, [[0, 1], [0, 1]], 41)
    psi = build_psi(g, 10)
    assert psi.values[node_with_distance(g, 0.05)] == 0.0
    assert psi.values[node_with_distance(g, 0.25)] == 1.0
    assert psi.values[node_with_distance(g, 0.15)] == pytest.approx(0.5, abs=1e-14)


def test_cutoff_supports_exact():
    g = build_grid(2, [[0, 1], [0, 1]], 41)
    k = 5
    psi = build_psi(g, k)
    d = g.boundary_distance
    assert np.all(psi.values[d < 1.0 / k] == 0.0)
    assert np.all(psi.values[d > 2.0 / k] == 1.0)
    assert np.all((psi.values >= 0.0) & (psi.values <= 1.0))


def test_cutoff_monotone_in_distance():
    g = build_grid(2, [[0, 1], [0, 1]], 41)
    psi = build_psi(g, 4)
    d = g.boundary_distance.ravel()
    p = psi.values.ravel()
    order = np.argsort(d)
    assert np.all(np.diff(p[order]) >= -1e-15)


def test_unresolved_band_rejected():
    g = build_grid(2, [[0, 1], [0, 1]], 9)  # h = 0.125
    with pytest.raises(BandUnresolvedError):
        build_psi(g, 3)  # needs h <= 1/12
    build_psi(g, 2)  # h = 1/8 == 1/(4k): boundary case allowed


def test_schedule_validation():
    g = build_grid(2, [[0, 1], [0, 1]], 17)
    with pytest.raises(ValidationError):
        PsiSchedule.build(g, [])
    with pytest.raises(ValidationError):
        PsiSchedule.build(g, [4, 2])
    sched = PsiSchedule.build(g, [2, 4])
    assert sched.bands() == [(0.5, 1.0), (0.25, 0.5)]


def test_shift_tensor_arithmetic():
    g = build_grid(2, [[0, 1], [0, 1]], 9)
    m = flat_metric(g)
    S = zero_tensor(g)
    psi1 = ScalarField.constant(g, 1.0)
    assert np.array_equal(build_T(S, psi1, 5.0, m).values, S.values)
    psi0 = ScalarField.constant(g, 0.0)
    assert np.abs(build_T(S, psi0, 2.0, m).values - 2.0 * np.eye(2)).max() == 0.0
    psih = ScalarField.constant(g, 0.5)
    assert np.abs(build_T(S, psih, 2.0, m).values - np.eye(2)).max() == 0.0


def test_shift_tensor_linear_in_lambda():
    g = build_grid(2, [[0, 1], [0, 1]], 9)
    m = flat_metric(g)
    S = zero_tensor(g)
    psi = build_psi(g, 2)
    t1 = build_T(S, psi, 1.0, m).values
    t3 = build_T(S, psi, 3.0, m).values
    assert np.abs(t3 - 3.0 * t1).max() < 1e-14
    with pytest.raises(ValidationError):
        build_T(S, psi, -1.0, m)


def test_lemma_case_lambda_zero():
    g = build_grid(3, [[-1, 1]] * 3, 33)
    m = flat_metric(g)
    ul = ScalarField(g, 0.25 * np.sum(g.points ** 2, axis=-1))
    rhs = f_from_s(ScalarField.constant(g, 0.01), m)
    sched = PsiSchedule.build(g, [2, 4])
    assert select_lambda(ul, rhs, m.schouten, sched, m) == 0.0


def test_selected_lambda_matches_scan_oracle():
    # anisotropic Hessian with the gradient along the weak direction makes
    # the cutoff-free inequality fail at lambda = 0 near one face
    g = build_grid(2, [[-0.5, 0.5]] * 2, 17)
    m = flat_metric(g)
    S = zero_tensor(g)
    pts = g.points
    ul = ScalarField(g, 0.25 * pts[..., 0] ** 2 + 0.5 * pts[..., 1] ** 2
                     + 0.35 * pts[..., 0])
    s = ScalarField(g, 0.3 + 1.05 * np.exp(-(pts[..., 0] - 0.5) ** 2 / 0.02))
    rhs = f_from_s(s, m)
    sched = PsiSchedule.build(g, [2, 4])

    lam = select_lambda(ul, rhs, S, sched, m)

    def feasible(val):
        for k, psi in zip(sched.k_list, sched.psis):
            T = build_T(S, psi, val, m)
            margin, _, adm = _interior_margin(ul, psi, T, rhs, m)
            if not adm or margin < -1e-10:
                return False
        return True

    assert not feasible(0.0)
    assert feasible(lam)
    scan = 0.0
    while scan < 3.0 and not feasible(scan):
        scan += 2e-4
    assert abs(lam - scan) <= 1.5e-3

    # re-verification at the returned value, every k
    for k, psi in zip(sched.k_list, sched.psis):
        T = build_T(S, psi, lam, m)
        margin, _, adm = _interior_margin(ul, psi, T, rhs, m)
        assert adm and margin >= -1e-10


def test_select_lambda_rejects_inadmissible_subsolution():
    g = build_grid(3, [[-1, 1]] * 3, 17)
    m = flat_metric(g)
    ul = ScalarField.constant(g, 0.0)
    rhs = f_from_s(ScalarField.constant(g, 1.0), m)
    sched = PsiSchedule.build(g, [2])
    with pytest.raises(HypothesisError):
        select_lambda(ul, rhs, m.schouten, sched, m)


def test_select_lambda_cap():
    # subsolution inequality fails where psi = 1, so no shift can fix it
    g = build_grid(3, [[-1, 1]] * 3, 17)
    m = flat_metric(g)
    ul = ScalarField(g, 0.25 * np.sum(g.points ** 2, axis=-1))
    rhs = f_from_s(ScalarField.constant(g, 50.0), m)
    sched = PsiSchedule.build(g, [2])
    with pytest.raises((LambdaSearchError, HypothesisError)):
        select_lambda(ul, rhs, m.schouten, sched, m)
