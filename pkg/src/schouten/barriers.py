"""Sub/supersolution verification and the mean-value comparison apparatus.

A subsolution satisfies log det w[ul] >= f(x, ul) with admissible w[ul];
a supersolution satisfies log det w[ubar] <= f(x, ul) wherever its tensor
is positive definite (the right side is evaluated at ul, deliberately:
that is how the ordering argument uses it, and since f decreases in z and
ubar >= ul it is the weaker requirement).  The mean-value operator turns
the difference of two log-det expressions into a linear operator with
positive definite second-order coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import PD_TOL_W, RhsFunction, log_det, w_tensor
from .errors import AdmissibilityViolation, HypothesisError, ValidationError
from .geometry import MetricPackage, covariant_hessian, gradient
from .grid import CovectorField, ScalarField, Sym2Field
from .regularization import PsiSchedule, build_T, psi_one, psi_zero

SUB_MARGIN_TOL = -1e-10
SUP_MARGIN_TOL = 1e-10
ORDERING_TOL = 1e-8
EPS_MIN = 2.0 ** -20


@dataclass(frozen=True)
class SubsolutionReport:
    passed: bool
    admissible: bool
    worst_margin: float
    worst_node: tuple | None
    margins: np.ndarray = field(repr=False)  # NaN off the interior / where not PD


def verify_subsolution(ul: ScalarField, psi: ScalarField, T: Sym2Field,
                       rhs: RhsFunction, m: MetricPackage,
                       tol: float = SUB_MARGIN_TOL) -> SubsolutionReport:
    """Margin log det w[ul] - f(x, ul) per interior node; pass iff admissible
    and margin >= tol everywhere.

    tol defaults to -1e-10.  For a subsolution that satisfies the continuum
    inequality with equality the discrete margin sits at the truncation floor
    of the stencils (~ a few h^2) and callers should widen tol accordingly.
    """
    grid = ul.grid
    wf = w_tensor(ul, psi, T, m)
    mask = grid.interior_mask
    margins = np.full(grid.shape, np.nan)
    adm = wf.admissible_mask
    ok_nodes = mask & adm
    if np.any(ok_nodes):
        f = rhs.f_values(ul.values, grid.points)
        ld = wf.log_det()
        margins[ok_nodes] = ld[ok_nodes] - f[ok_nodes]
    if not np.all(adm[mask]):
        bad = mask & ~adm
        node = np.unravel_index(np.argmax(bad), grid.shape)
        return SubsolutionReport(False, False, float(wf.min_eig[node]),
                                 tuple(node), margins)
    interior_margins = margins[mask]
    worst_flat = int(np.argmin(interior_margins))
    worst_node = tuple(np.argwhere(mask)[worst_flat])
    worst = float(interior_margins[worst_flat])
    return SubsolutionReport(worst >= tol, True, worst, worst_node, margins)


@dataclass(frozen=True)
class SupersolutionKReport:
    k: int | str
    passed: bool
    n_definite_nodes: int
    worst_margin: float          # max of log det w[ubar] - f(x, ul) over PD nodes
    worst_node: tuple | None
    f_choice_disagreements: int  # nodes where judging against f(x, ubar) flips


@dataclass(frozen=True)
class SupersolutionReport:
    passed: bool
    ordered: bool                # ubar >= ul pointwise
    per_k: tuple


def _supersolution_one_psi(label, ubar, ul, psi, T, rhs, m,
                           tol) -> SupersolutionKReport:
    grid = ubar.grid
    wf = w_tensor(ubar, psi, T, m)
    mask = grid.interior_mask & wf.admissible_mask
    n_pd = int(np.count_nonzero(mask))
    if n_pd == 0:
        return SupersolutionKReport(label, True, 0, -np.inf, None, 0)
    ld = wf.log_det()[mask]
    f_ul = rhs.f_values(ul.values, grid.points)[mask]
    f_ub = rhs.f_values(ubar.values, grid.points)[mask]
    margins = ld - f_ul
    disagreements = int(np.count_nonzero((margins <= tol) != (ld - f_ub <= tol)))
    worst_flat = int(np.argmax(margins))
    worst_node = tuple(np.argwhere(grid.interior_mask & wf.admissible_mask)[worst_flat])
    worst = float(margins[worst_flat])
    return SupersolutionKReport(label, worst <= tol, n_pd, worst, worst_node,
                                disagreements)


def verify_supersolution(ubar: ScalarField, ul: ScalarField,
                         schedule: PsiSchedule, S: Sym2Field, lam: float,
                         rhs: RhsFunction, m: MetricPackage,
                         include_endpoints: bool = False,
                         tol: float = SUP_MARGIN_TOL) -> SupersolutionReport:
    """Check log det w[ubar; psi_k, T(lam)] <= f(x, ul) at every interior node
    where the tensor is positive definite, for every k in the schedule."""
    if np.any(ubar.values < ul.values):
        return SupersolutionReport(False, False, ())
    cases = [(k, psi) for k, psi in zip(schedule.k_list, schedule.psis)]
    if include_endpoints:
        cases.append(("psi=0", psi_zero(ubar.grid)))
        cases.append(("psi=1", psi_one(ubar.grid)))
    reports = []
    for label, psi in cases:
        T = build_T(S, psi, lam, m)
        reports.append(_supersolution_one_psi(label, ubar, ul, psi, T, rhs, m, tol))
    return SupersolutionReport(all(r.passed for r in reports), True, tuple(reports))


def _resolvable_k_list(grid) -> list:
    k_max = int(np.floor(1.0 / (4.0 * grid.h) + 1e-12))
    return list(range(1, k_max + 1))


def flat_supersolution(ul: ScalarField, rhs: RhsFunction, m: MetricPackage,
                       S: Sym2Field | None = None, lam: float = 0.0,
                       k_list=None, hyp_tol: float | None = None):
    """Supersolution sup(ul) + 1 + eps |x|^2 on a flat background.

    Requires the two hypotheses that make the construction work: ul is an
    admissible subsolution at psi = 1, and additionally
    det(ul_ij) >= s e^{-2n ul} det g (the psi = 0 form) with ul_ij > 0.
    Both are checked at interior nodes with slack hyp_tol, default 8 h^2:
    a subsolution that holds with equality in the continuum lands at the
    stencil truncation floor when restricted to the grid, so a fixed tiny
    tolerance would wrongly reject it; genuine violations are O(1).

    eps is halved from 1 until the supersolution check passes for every
    resolvable band plus both endpoints.  Returns (ubar, eps).
    """
    grid = ul.grid
    if S is None:
        S = m.schouten
    if S is None:
        raise ValidationError("flat construction needs the zero tensor for n=2; "
                              "pass the replacement tensor as S")
    if np.max(np.abs(S.values)) > 1e-10:
        raise HypothesisError("flat construction requires a vanishing Schouten tensor")
    if hyp_tol is None:
        hyp_tol = 8.0 * grid.h ** 2

    mask = grid.interior_mask
    hess = covariant_hessian(ul, m).values
    eig = np.linalg.eigvalsh(hess)
    bad = mask & (eig[..., 0] <= PD_TOL_W)
    if np.any(bad):
        node = np.unravel_index(np.argmax(bad), grid.shape)
        raise HypothesisError("subsolution Hessian is not positive definite", node)

    f_ul = rhs.f_values(ul.values, grid.points)
    margin0 = log_det(hess) - f_ul
    bad = mask & ~(margin0 >= -hyp_tol)
    if np.any(bad):
        node = np.unravel_index(np.argmax(bad), grid.shape)
        raise HypothesisError(
            f"det(ul_ij) >= s e^(-2nu) det g fails (margin {margin0[node]:.3e})", node)

    sub = verify_subsolution(ul, psi_one(grid), S, rhs, m, tol=-hyp_tol)
    if not sub.passed:
        raise HypothesisError(
            f"subsolution inequality fails at psi = 1 (margin {sub.worst_margin:.3e})",
            sub.worst_node)

    ks = _resolvable_k_list(grid) if k_list is None else list(k_list)
    schedule = PsiSchedule.build(grid, ks) if ks else None
    r_sq = np.sum(grid.points ** 2, axis=-1)
    base = float(np.max(ul.values)) + 1.0

    eps = 1.0
    while eps >= EPS_MIN:
        ubar = ScalarField(grid, base + eps * r_sq)
        if schedule is not None:
            rep = verify_supersolution(ubar, ul, schedule, S, lam, rhs, m,
                                       include_endpoints=True)
        else:
            sched1 = PsiSchedule(grid=grid, k_list=(), psis=())
            rep = verify_supersolution(ubar, ul, sched1, S, lam, rhs, m,
                                       include_endpoints=True)
        if rep.passed:
            return ubar, eps
        eps *= 0.5
    worst = max((r for r in rep.per_k if not r.passed),
                key=lambda r: r.worst_margin)
    raise HypothesisError(
        f"no eps >= 2^-20 yields a supersolution (margin {worst.worst_margin:.3e})",
        worst.worst_node)


@dataclass(frozen=True)
class BarrierPair:
    """Ordered subsolution/supersolution pair with its verification record.

    eps is set when the supersolution came from the flat construction.
    """

    ul: ScalarField
    ubar: ScalarField
    eps: float | None
    subsolution: SubsolutionReport
    supersolution: SupersolutionReport

    @classmethod
    def build(cls, ul: ScalarField, ubar: ScalarField, schedule: PsiSchedule,
              S: Sym2Field, lam: float, rhs: RhsFunction, m: MetricPackage,
              eps: float | None = None) -> "BarrierPair":
        if np.any(ubar.values < ul.values):
            bad = ubar.values < ul.values
            node = np.unravel_index(np.argmax(bad), ul.grid.shape)
            raise ValidationError(
                f"supersolution lies below the subsolution at node "
                f"{tuple(int(i) for i in node)}")
        sub = verify_subsolution(ul, psi_one(ul.grid), S, rhs, m)
        if not sub.admissible:
            raise ValidationError(
                "subsolution is not admissible for the uncut equation")
        sup = verify_supersolution(ubar, ul, schedule, S, lam, rhs, m,
                                   include_endpoints=True)
        return cls(ul=ul, ubar=ubar, eps=eps, subsolution=sub,
                   supersolution=sup)


@dataclass(frozen=True)
class ComparisonOperator:
    """Coefficients of the linearized comparison inequality
    a^{ij} v_ij + b^i v_i + d v for v = ul - u."""

    a: Sym2Field
    b: CovectorField
    d_coeff: ScalarField
    valid_mask: np.ndarray = field(repr=False)  # nodes where both inputs admissible


def mean_value_operator(ul: ScalarField, u: ScalarField, psi: ScalarField,
                        T: Sym2Field, rhs: RhsFunction, m: MetricPackage,
                        order: int = 16) -> ComparisonOperator:
    """Mean-value coefficients along the segment t w[ul] + (1-t) w[u].

    a^{ij} is the Gauss-Legendre t-integral of the segment inverse (the
    positive definite cone is convex, so the segment stays invertible);
    b^i collects the gradient-difference terms; d = -integral of f_z.
    """
    grid = ul.grid
    w_l = w_tensor(ul, psi, T, m)
    w_u = w_tensor(u, psi, T, m)
    for name, wf in (("ul", w_l), ("u", w_u)):
        bad = grid.interior_mask & ~wf.admissible_mask
        if np.any(bad):
            node = np.unravel_index(np.argmax(bad), grid.shape)
            raise AdmissibilityViolation(f"w[{name}] is not admissible", node,
                                         float(wf.min_eig[node]))
    valid = w_l.admissible_mask & w_u.admissible_mask

    x_gl, wt_gl = np.polynomial.legendre.leggauss(order)
    t_nodes = 0.5 * (x_gl + 1.0)
    weights = 0.5 * wt_gl

    n = grid.dim
    a_vals = np.zeros(grid.shape + (n, n))
    a_vals[...] = np.eye(n)  # placeholder on nodes outside valid
    wl_v = w_l.w.values[valid]
    wu_v = w_u.w.values[valid]
    acc = np.zeros_like(wl_v)
    for t, wt in zip(t_nodes, weights):
        acc += wt * np.linalg.inv(t * wl_v + (1.0 - t) * wu_v)
    a_vals[valid] = 0.5 * (acc + np.swapaxes(acc, -1, -2))

    p_sum = gradient(ul).values + gradient(u).values
    a_p = np.einsum("...ij,...j->...i", a_vals, p_sum)
    tr_a_g = np.einsum("...ij,...ij->...", a_vals, m.g.values)
    ginv_p = np.einsum("...ij,...j->...i", m.g_inv.values, p_sum)
    b_vals = psi.values[..., None] * (a_p - 0.5 * tr_a_g[..., None] * ginv_p)

    if rhs.mode == "from_s":
        d_vals = np.full(grid.shape, 2.0 * n)
    else:
        d_vals = np.zeros(grid.shape)
        for t, wt in zip(t_nodes, weights):
            z_t = t * ul.values + (1.0 - t) * u.values
            d_vals -= wt * rhs.f_z_values(z_t, grid.points)

    return ComparisonOperator(a=Sym2Field(grid, a_vals),
                              b=CovectorField(grid, b_vals),
                              d_coeff=ScalarField(grid, d_vals),
                              valid_mask=valid)


def reconstruct_difference(op: ComparisonOperator, ul: ScalarField,
                           u: ScalarField, m: MetricPackage) -> np.ndarray:
    """a^{ij}(ul-u)_ij + b^i(ul-u)_i + d (ul-u); NaN off the interior."""
    grid = ul.grid
    diff = ScalarField(grid, ul.values - u.values)
    hess = covariant_hessian(diff, m).values
    grad = gradient(diff).values
    vals = (np.einsum("...ij,...ij->...", op.a.values, hess)
            + np.einsum("...i,...i->...", op.b.values, grad)
            + op.d_coeff.values * diff.values)
    out = np.full(grid.shape, np.nan)
    out[grid.interior_mask] = vals[grid.interior_mask]
    return out


def logdet_difference(ul: ScalarField, u: ScalarField, psi: ScalarField,
                      T: Sym2Field, rhs: RhsFunction, m: MetricPackage) -> np.ndarray:
    """log det w[ul] - log det w[u] - f(x, ul) + f(x, u); NaN off the interior."""
    grid = ul.grid
    ld_l = w_tensor(ul, psi, T, m).log_det()
    ld_u = w_tensor(u, psi, T, m).log_det()
    f_l = rhs.f_values(ul.values, grid.points)
    f_u = rhs.f_values(u.values, grid.points)
    out = np.full(grid.shape, np.nan)
    mask = grid.interior_mask
    out[mask] = (ld_l - ld_u - f_l + f_u)[mask]
    return out


@dataclass(frozen=True)
class OrderingReport:
    passed: bool
    lower_ok: bool
    upper_ok: bool
    worst_lower: float    # min of u - ul
    worst_upper: float    # min of ubar - u (inf when no ubar)
    flags: np.ndarray = field(repr=False)


def ordering_check(ul: ScalarField, u: ScalarField,
                   ubar: ScalarField | None = None,
                   tol: float = ORDERING_TOL) -> OrderingReport:
    """Per-node check ul - tol <= u <= ubar + tol."""
    lower = u.values - ul.values
    lower_flags = lower >= -tol
    if ubar is not None:
        upper = ubar.values - u.values
        upper_flags = upper >= -tol
        worst_upper = float(np.min(upper))
    else:
        upper_flags = np.ones_like(lower_flags)
        worst_upper = np.inf
    flags = lower_flags & upper_flags
    return OrderingReport(passed=bool(flags.all()),
                          lower_ok=bool(lower_flags.all()),
                          upper_ok=bool(upper_flags.all()),
                          worst_lower=float(np.min(lower)),
                          worst_upper=worst_upper,
                          flags=flags)


def default_chi(m: MetricPackage) -> ScalarField:
    """alpha |x|^2 with alpha sized so chi_ij >= g_ij; flat backgrounds only."""
    if not m.is_flat:
        raise ValidationError("supply a strictly convex chi for non-flat metrics")
    lam_max = float(np.max(np.linalg.eigvalsh(m.g.values)))
    alpha = max(1.0, 0.5 * lam_max)
    r_sq = np.sum(m.grid.points ** 2, axis=-1)
    return ScalarField(m.grid, alpha * r_sq)


def check_chi(chi: ScalarField, m: MetricPackage, tol: float = 1e-8) -> float:
    """Verify chi_ij >= g_ij (matrix sense) at interior nodes; returns the
    worst eigen-margin.  Raises HypothesisError when violated."""
    hess = covariant_hessian(chi, m).values
    eig = np.linalg.eigvalsh(hess - m.g.values)
    mask = chi.grid.interior_mask
    worst = float(np.min(eig[..., 0][mask]))
    if worst < -tol:
        flat = int(np.argmin(eig[..., 0][mask]))
        node = tuple(np.argwhere(mask)[flat])
        raise HypothesisError(
            f"chi is not convex enough: min eig(chi_ij - g_ij) = {worst:.3e}", node)
    return worst
