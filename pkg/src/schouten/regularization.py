"""Boundary cutoff family, the shifted tensor, and selection of the shift size.

psi_k vanishes within distance 1/k of the boundary, equals one beyond 2/k,
and crosses the band with a quintic smoothstep (C^2 at the band edges; the
solver and monitors only ever use psi pointwise, and the polynomial is
bit-reproducible).  T = S + lambda (1 - psi) g restores subsolution
admissibility where the gradient terms have been cut away.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .conformal import PD_TOL_W, RhsFunction, log_det, w_tensor
from .errors import BandUnresolvedError, HypothesisError, LambdaSearchError, ValidationError
from .geometry import MetricPackage, covariant_hessian
from .grid import ChartGrid, ScalarField, Sym2Field

MARGIN_TOL = -1e-10      # inequality slack accepted by the lambda search
LAMBDA_UNIT = 1.0
LAMBDA_MAX = 1e6
LAMBDA_BISECT_TOL = 1e-3


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 on [0, 1]."""
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def build_psi(grid: ChartGrid, k: int) -> ScalarField:
    """Cutoff for band index k: 0 where d < 1/k, 1 where d > 2/k.

    Requires h <= 1/(4k) so the transition band is resolved.
    """
    if k < 1 or int(k) != k:
        raise ValidationError(f"band index k must be a positive integer, got {k}")
    if grid.h > 1.0 / (4.0 * k) + 1e-15:
        raise BandUnresolvedError(
            f"grid spacing {grid.h:g} cannot resolve the k={k} band "
            f"(need h <= {1.0 / (4.0 * k):g})")
    t = np.clip(grid.boundary_distance * k - 1.0, 0.0, 1.0)
    return ScalarField(grid, _smoothstep(t))


def psi_one(grid: ChartGrid) -> ScalarField:
    return ScalarField.constant(grid, 1.0)


def psi_zero(grid: ChartGrid) -> ScalarField:
    return ScalarField.constant(grid, 0.0)


@dataclass(frozen=True)
class PsiSchedule:
    grid: ChartGrid
    k_list: tuple
    psis: tuple = field(repr=False)

    @classmethod
    def build(cls, grid: ChartGrid, k_list) -> "PsiSchedule":
        ks = tuple(int(k) for k in k_list)
        if len(ks) == 0:
            raise ValidationError("k_list must not be empty")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValidationError(f"k_list must be strictly increasing, got {list(ks)}")
        return cls(grid=grid, k_list=ks,
                   psis=tuple(build_psi(grid, k) for k in ks))

    def bands(self):
        return [(1.0 / k, 2.0 / k) for k in self.k_list]


def build_T(S: Sym2Field, psi: ScalarField, lam: float, m: MetricPackage) -> Sym2Field:
    """Shifted tensor T = S + lambda (1 - psi) g; equals S exactly where psi = 1."""
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    vals = S.values + lam * (1.0 - psi.values)[..., None, None] * m.g.values
    return Sym2Field(S.grid, vals)


@dataclass(frozen=True)
class ShiftedTensor:
    lam: float
    tensors: dict  # k -> Sym2Field

    @classmethod
    def build(cls, S: Sym2Field, schedule: PsiSchedule, lam: float,
              m: MetricPackage) -> "ShiftedTensor":
        return cls(lam=lam, tensors={k: build_T(S, psi, lam, m)
                                     for k, psi in zip(schedule.k_list, schedule.psis)})


def _interior_margin(ul: ScalarField, psi: ScalarField, T: Sym2Field,
                     rhs: RhsFunction, m: MetricPackage):
    """(worst margin, worst node, admissible?) of log det w[ul] - f(x, ul)
    over interior nodes."""
    wf = w_tensor(ul, psi, T, m)
    mask = ul.grid.interior_mask
    me = wf.min_eig[mask]
    if np.any(me <= PD_TOL_W):
        flat = int(np.argmin(me))
        node = tuple(np.argwhere(mask)[flat])
        return -np.inf, node, False
    margin = wf.log_det()[mask] - rhs.f_values(ul.values, ul.grid.points)[mask]
    flat = int(np.argmin(margin))
    node = tuple(np.argwhere(mask)[flat])
    return float(margin[flat]), node, True


def select_lambda(ul: ScalarField, rhs: RhsFunction, S: Sym2Field,
                  schedule: PsiSchedule, m: MetricPackage,
                  margin_tol: float = MARGIN_TOL) -> float:
    """Smallest shift (0, then doubling, then bisection to 1e-3) such that for
    every k the modified subsolution inequality
        log det w[ul; psi_k, T(lambda)] >= f(x, ul)
    holds with an admissible tensor at every interior node.

    The two band endpoints (psi = 1 globally; psi = 0 where any band is open)
    are checked as well: since w is affine in psi and log det is concave, the
    endpoints imply every intermediate psi, so an endpoint pass combined with
    a direct per-k failure is reported as a warning (it would indicate a
    bookkeeping bug, not a genuine infeasibility).
    """
    grid = ul.grid
    ones = psi_one(grid)

    # psi = 1: lambda plays no role there, so this is a hard precondition.
    margin1, node1, adm1 = _interior_margin(ul, ones, S, rhs, m)
    if not adm1:
        raise HypothesisError(
            "subsolution is not admissible for psi = 1", node1)
    if margin1 < margin_tol:
        raise HypothesisError(
            f"subsolution inequality fails at psi = 1 (margin {margin1:.3e})", node1)

    near_boundary = grid.boundary_distance < 2.0 / min(schedule.k_list)
    ul_hess = covariant_hessian(ul, m).values

    def endpoint_zero_ok(lam: float) -> bool:
        # psi = 0 form: log det(ul_ij + S + lambda g) >= f(x, ul) near the boundary
        w0 = ul_hess + S.values + lam * m.g.values
        mask = near_boundary & grid.interior_mask
        if not np.any(mask):
            return True
        eig = np.linalg.eigvalsh(w0[mask])
        if np.any(eig[..., 0] <= PD_TOL_W):
            return False
        margin = log_det(w0[mask]) - rhs.f_values(ul.values, grid.points)[mask]
        return bool(np.min(margin) >= margin_tol)

    worst = {"margin": np.inf, "node": None}

    def feasible(lam: float) -> bool:
        ok = True
        for k, psi in zip(schedule.k_list, schedule.psis):
            T = build_T(S, psi, lam, m)
            margin, node, adm = _interior_margin(ul, psi, T, rhs, m)
            if (not adm) or margin < margin_tol:
                ok = False
                if margin < worst["margin"]:
                    worst["margin"], worst["node"] = margin, node
                break
        if (not ok) and endpoint_zero_ok(lam):
            warnings.warn(
                "band endpoints admit lambda=%g but an intermediate psi fails; "
                "check the concavity bookkeeping" % lam, RuntimeWarning)
        return ok

    if feasible(0.0):
        return 0.0
    hi = LAMBDA_UNIT
    lo = 0.0
    while not feasible(hi):
        lo = hi
        hi *= 2.0
        if hi > LAMBDA_MAX:
            raise LambdaSearchError(
                f"no shift up to {LAMBDA_MAX:g} satisfies the modified "
                f"subsolution inequality", worst["node"],
                None if worst["node"] is None else -worst["margin"])
    while hi - lo > LAMBDA_BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
