"""Finite-difference calculus and curvature of a background metric.

All derivatives are second order: central stencils at interior nodes,
one-sided three/four point stencils on the boundary.  Dirichlet data fixes
boundary values for the solver, so boundary stencils only feed diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, MetricError
from .grid import ChartGrid, CovectorField, ScalarField, Sym2Field, symmetrize_upper

PD_TOL_METRIC = 1e-10


def diff1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First partial derivative, O(h^2) everywhere (one-sided on the ends).

    The end stencil (-2, 7/2, -2, 1/2)/h is chosen so its leading truncation
    term equals the central one, (h^2/6) f'''.  A matched error constant keeps
    the error field smooth across the boundary layer, so curvature quantities
    built by differentiating twice stay O(h^2) up to the boundary; the usual
    3-point end stencil would cost an order there.
    """
    if values.shape[axis] < 4:
        raise GridError("need at least 4 nodes per axis for derivatives")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    # difference form: exactly zero on constant data
    out[0] = (3.5 * (v[1] - v[0]) - 2.0 * (v[2] - v[0])
              + 0.5 * (v[3] - v[0])) / h
    out[-1] = (-3.5 * (v[-2] - v[-1]) + 2.0 * (v[-3] - v[-1])
               - 0.5 * (v[-4] - v[-1])) / h
    return np.moveaxis(out, 0, axis)


def diff2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second partial derivative along one axis, O(h^2) everywhere.

    Interior: (u[i-1] - 2 u[i] + u[i+1]) / h^2.
    Ends: dedicated four-point one-sided stencil (2, -5, 4, -1) / h^2,
    which stays exact on cubics; composing two one-sided first
    derivatives would drop to O(h).
    """
    if values.shape[axis] < 4:
        raise GridError("need at least 4 nodes per axis for second derivatives")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = ((v[:-2] - v[1:-1]) + (v[2:] - v[1:-1])) / h ** 2
    # difference form: exactly zero on constant data
    out[0] = (-5.0 * (v[1] - v[0]) + 4.0 * (v[2] - v[0])
              - (v[3] - v[0])) / h ** 2
    out[-1] = (-5.0 * (v[-2] - v[-1]) + 4.0 * (v[-3] - v[-1])
               - (v[-4] - v[-1])) / h ** 2
    return np.moveaxis(out, 0, axis)


def gradient(u: ScalarField) -> CovectorField:
    g = u.grid
    parts = [diff1(u.values, g.h, a) for a in range(g.dim)]
    return CovectorField(g, np.stack(parts, axis=-1))


def partial_hessian(u_values: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """All second partials u_,ij as a (*shape, n, n) array (exactly symmetric)."""
    n = grid.dim
    h = grid.h
    out = np.zeros(grid.shape + (n, n))
    firsts = [diff1(u_values, h, a) for a in range(n)]
    for i in range(n):
        out[..., i, i] = diff2(u_values, h, i)
        for j in range(i + 1, n):
            out[..., i, j] = diff1(firsts[i], h, j)
    return symmetrize_upper(out)


@dataclass(frozen=True)
class MetricPackage:
    """Background metric with its derived curvature quantities.

    christoffel is indexed [k, i, j] (upper index first); riemann is the
    fully lowered R_{bijk} entering the covariant-derivative interchange
    u_{ijk} - u_{kij} = u_a g^{ab} R_{bijk}.  schouten is None for n = 2.
    """

    grid: ChartGrid
    g: Sym2Field
    g_inv: Sym2Field
    christoffel: np.ndarray = field(repr=False)   # (*shape, n, n, n)
    riemann: np.ndarray = field(repr=False)       # (*shape, n, n, n, n)
    ricci: Sym2Field = field(repr=False)
    scalar: ScalarField = field(repr=False)
    schouten: Sym2Field | None = field(repr=False)

    @property
    def is_flat(self) -> bool:
        return bool(np.max(np.abs(self.riemann)) <= 1e-12)


def check_positive_definite(g: Sym2Field, tol: float = PD_TOL_METRIC) -> None:
    """Leading-principal-minor test; raises MetricError with the first bad node."""
    vals = g.values
    n = g.grid.dim
    for k in range(1, n + 1):
        minors = np.linalg.det(vals[..., :k, :k])
        bad = minors <= tol
        if np.any(bad):
            node = np.unravel_index(np.argmax(bad), g.grid.shape)
            raise MetricError(
                f"metric is not positive definite (order-{k} minor "
                f"{minors[node]:.3e} <= {tol:g})", node)


def curvature_package(g: Sym2Field) -> MetricPackage:
    """Christoffels, Riemann, Ricci, scalar and Schouten curvature from g.

    All metric derivatives are finite differences of the node values, even
    when a closed form is available, so every metric flows through one code
    path.  For n = 2 the Schouten component is absent.
    """
    grid = g.grid
    n = grid.dim
    h = grid.h
    check_positive_definite(g)
    g_inv_vals = np.linalg.inv(g.values)

    # dg[..., l, i, j] = d g_li / d x_j
    dg = np.zeros(grid.shape + (n, n, n))
    for l in range(n):
        for i in range(l, n):
            for j in range(n):
                d = diff1(g.values[..., l, i], h, j)
                dg[..., l, i, j] = d
                dg[..., i, l, j] = d

    # Gamma^k_ij = 1/2 g^{kl} (g_li,j + g_lj,i - g_ij,l)
    bracket = dg + np.swapaxes(dg, -2, -1) - np.moveaxis(dg, -1, -3)
    # bracket[..., l, i, j] = g_li,j + g_lj,i - g_ij,l
    christoffel = 0.5 * np.einsum("...kl,...lij->...kij", g_inv_vals, bracket)

    # dGamma[..., k, i, j, m] = d Gamma^k_ij / d x_m
    dgamma = np.zeros(grid.shape + (n, n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                for m in range(n):
                    d = diff1(christoffel[..., k, i, j], h, m)
                    dgamma[..., k, i, j, m] = d
                    dgamma[..., k, j, i, m] = d

    # R^l_{ijk} = dGamma^l_ik/dx_j - dGamma^l_ij/dx_k
    #             + Gamma^l_mj Gamma^m_ik - Gamma^l_mk Gamma^m_ij
    # assembled as Q - Q(j<->k) so the last-pair antisymmetry is bit-exact
    q = np.einsum("...likj->...lijk", dgamma) \
        + np.einsum("...lmj,...mik->...lijk", christoffel, christoffel)
    riem_up = q - np.einsum("...lijk->...likj", q)

    riemann = np.einsum("...bl,...lijk->...bijk", g.values, riem_up)
    ricci_vals = np.einsum("...aiak->...ik", riem_up)
    ricci = Sym2Field(grid, ricci_vals)
    scalar_vals = np.einsum("...ik,...ik->...", g_inv_vals, ricci.values)
    scalar = ScalarField(grid, scalar_vals)

    schouten = None
    if n >= 3:
        s_vals = (ricci.values
                  - scalar_vals[..., None, None] * g.values / (2.0 * (n - 1))) / (n - 2)
        schouten = Sym2Field(grid, s_vals)

    return MetricPackage(grid=grid, g=g, g_inv=Sym2Field(grid, g_inv_vals),
                         christoffel=christoffel, riemann=riemann,
                         ricci=ricci, scalar=scalar, schouten=schouten)


def flat_metric(grid: ChartGrid) -> MetricPackage:
    """Identity metric; finite differences of constants vanish exactly."""
    return curvature_package(Sym2Field.identity(grid))


def covariant_hessian(u: ScalarField, m: MetricPackage) -> Sym2Field:
    """u_ij = u_,ij - Gamma^k_ij u_k."""
    if u.grid is not m.grid and u.grid.shape != m.grid.shape:
        raise GridError("field and metric live on different grids")
    du = gradient(u).values
    hess = partial_hessian(u.values, u.grid)
    corr = np.einsum("...kij,...k->...ij", m.christoffel, du)
    return Sym2Field(u.grid, hess - corr)


def _commuting_third_derivative(u: ScalarField, m: MetricPackage):
    """third[..., a, b, c] = u_{abc} built from commuting first-difference ops.

    Uses compositions of the same per-axis first-derivative everywhere (wide
    second-difference on the diagonal) so that on a flat metric the discrete
    partials commute exactly and the defect below vanishes identically.
    """
    grid = u.grid
    n, h = grid.dim, grid.h
    du = np.stack([diff1(u.values, h, a) for a in range(n)], axis=-1)
    hess = np.zeros(grid.shape + (n, n))
    for a in range(n):
        for b in range(a, n):
            d = diff1(du[..., a], h, b)
            hess[..., a, b] = d
            hess[..., b, a] = d
    cov_hess = hess - np.einsum("...kab,...k->...ab", m.christoffel, du)

    third = np.zeros(grid.shape + (n, n, n))
    for a in range(n):
        for b in range(n):
            for c in range(n):
                third[..., a, b, c] = diff1(cov_hess[..., a, b], h, c)
    third -= np.einsum("...lac,...lb->...abc", m.christoffel, cov_hess)
    third -= np.einsum("...lbc,...al->...abc", m.christoffel, cov_hess)
    return third, du


def commutator_defect(u: ScalarField, m: MetricPackage) -> np.ndarray:
    """Discrete u_{ijk} - u_{kij} - u_a g^{ab} R_{bijk}; a kernel self-test.

    Returns a (*shape, n, n, n) array indexed [i, j, k].  Zero exactly on
    flat metrics, O(h^2) otherwise.
    """
    third, du = _commuting_third_derivative(u, m)
    swapped = np.einsum("...kij->...ijk", third)
    curv = np.einsum("...a,...ab,...bijk->...ijk", du, m.g_inv.values, m.riemann)
    return third - swapped - curv
