"""The conformal transformation law, the w-tensor, and equation residuals.

The equation solved is  log det(w[u]) = f(x, u)  with
    w_ij = u_ij + psi u_i u_j - (psi/2) |grad u|^2 g_ij + T_ij,
where u_ij is the covariant Hessian and |grad u|^2 = g^{ij} u_i u_j.
At psi = 1 and T = S (the Schouten tensor of the background) the left side
is the determinant of the Schouten tensor of e^{-2u} g relative to g.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AdmissibilityViolation, ValidationError
from .geometry import MetricPackage, covariant_hessian, gradient
from .grid import ScalarField, Sym2Field

PD_TOL_W = 1e-8  # admissibility margin; looser than the metric check so the
                 # Newton line search has headroom


def log_det(values: np.ndarray) -> np.ndarray:
    """log det per node via LU factorization; NaN where det <= 0."""
    sign, ld = np.linalg.slogdet(values)
    return np.where(sign > 0, ld, np.nan)


@dataclass(frozen=True)
class RhsFunction:
    """Right-hand side f(x, z) with its z-derivative.

    from_s mode encodes a prescribed positive determinant target s(x):
        f(x, z) = log s(x) + log det g(x) - 2 n z,   f_z = -2n.
    general mode wraps arbitrary callables f(points, z), f_z(points, z).
    """

    mode: str
    dim: int
    s: ScalarField | None = None
    log_s: np.ndarray | None = field(default=None, repr=False)
    log_det_g: np.ndarray | None = field(default=None, repr=False)
    f_fn: Callable | None = None
    f_z_fn: Callable | None = None

    def f_values(self, z: np.ndarray, points: np.ndarray) -> np.ndarray:
        if self.mode == "from_s":
            return self.log_s + self.log_det_g - 2.0 * self.dim * z
        return np.asarray(self.f_fn(points, z), dtype=float)

    def f_z_values(self, z: np.ndarray, points: np.ndarray) -> np.ndarray:
        if self.mode == "from_s":
            return np.full(np.shape(z), -2.0 * self.dim)
        return np.asarray(self.f_z_fn(points, z), dtype=float)

    @classmethod
    def general(cls, dim: int, f_fn: Callable, f_z_fn: Callable | None = None) -> "RhsFunction":
        """General-mode RHS; without an analytic f_z a central difference in z
        (step 1e-6 * max(1, |z|)) is substituted."""
        if f_z_fn is None:
            def f_z_fn(points, z, _f=f_fn):
                dz = 1e-6 * np.maximum(1.0, np.abs(z))
                return (_f(points, z + dz) - _f(points, z - dz)) / (2.0 * dz)
        return cls(mode="general", dim=dim, f_fn=f_fn, f_z_fn=f_z_fn)


def f_from_s(s: ScalarField, m: MetricPackage) -> RhsFunction:
    """RHS for a prescribed determinant target s > 0."""
    bad = s.values <= 0
    if np.any(bad):
        node = np.unravel_index(np.argmax(bad), s.grid.shape)
        raise ValidationError(
            f"target s must be positive, got {s.values[node]:.3e} "
            f"at node {tuple(int(i) for i in node)}")
    det_g = np.linalg.det(m.g.values)
    return RhsFunction(mode="from_s", dim=s.grid.dim, s=s,
                       log_s=np.log(s.values), log_det_g=np.log(det_g))


class WField:
    """w tensor with its admissibility diagnostics.

    min_eig is eager (needed by every admissibility check); the inverse and
    trace tr w = w^{ij} g_ij are computed on demand and only where the node
    is admissible (NaN elsewhere).  Arrays are read-only.
    """

    def __init__(self, w: Sym2Field, m: MetricPackage):
        self.grid = w.grid
        self.w = w
        self._m = m
        eig = np.linalg.eigvalsh(w.values)
        self.min_eig = np.ascontiguousarray(eig[..., 0])
        self.min_eig.flags.writeable = False
        self._w_inv = None
        self._trw = None

    @property
    def admissible_mask(self) -> np.ndarray:
        return self.min_eig > PD_TOL_W

    @property
    def w_inv(self) -> np.ndarray:
        if self._w_inv is None:
            mask = self.admissible_mask
            out = np.full(self.w.values.shape, np.nan)
            if np.any(mask):
                out[mask] = np.linalg.inv(self.w.values[mask])
            out.flags.writeable = False
            self._w_inv = out
        return self._w_inv

    @property
    def trw(self) -> np.ndarray:
        if self._trw is None:
            t = np.einsum("...ij,...ij->...", self.w_inv, self._m.g.values)
            t.flags.writeable = False
            self._trw = t
        return self._trw

    def log_det(self) -> np.ndarray:
        return log_det(self.w.values)


def w_tensor(u: ScalarField, psi: ScalarField, T: Sym2Field, m: MetricPackage) -> WField:
    """w_ij = u_ij + psi u_i u_j - (psi/2)|grad u|^2 g_ij + T_ij."""
    p = psi.values
    if np.any(p < 0) or np.any(p > 1):
        raise ValidationError("psi values must lie in [0, 1]")
    du = gradient(u).values
    hess = covariant_hessian(u, m).values
    grad_sq = np.einsum("...ij,...i,...j->...", m.g_inv.values, du, du)
    w_vals = (hess
              + p[..., None, None] * np.einsum("...i,...j->...ij", du, du)
              - 0.5 * (p * grad_sq)[..., None, None] * m.g.values
              + T.values)
    return WField(Sym2Field(u.grid, w_vals), m)


def schouten_conformal(u: ScalarField, m: MetricPackage,
                       schouten: Sym2Field | None = None) -> Sym2Field:
    """Schouten tensor of e^{-2u} g relative to g: u_ij + u_i u_j - |grad u|^2 g/2 + S.

    For n = 2 a replacement tensor must be supplied; the genuine Schouten
    expression is not elliptic there.
    """
    S = schouten if schouten is not None else m.schouten
    if S is None:
        raise ValidationError(
            "no Schouten tensor in dimension 2; supply a replacement tensor")
    ones = ScalarField.constant(u.grid, 1.0)
    return w_tensor(u, ones, S, m).w


@dataclass(frozen=True)
class AdmissibilityReport:
    per_node: np.ndarray      # bool per node
    all_ok: bool
    worst_margin: float       # min over nodes of the smallest eigenvalue of w
    worst_node: tuple


def admissible(w: WField) -> AdmissibilityReport:
    flags = w.admissible_mask
    worst_flat = int(np.argmin(w.min_eig))
    return AdmissibilityReport(
        per_node=flags,
        all_ok=bool(flags.all()),
        worst_margin=float(w.min_eig.flat[worst_flat]),
        worst_node=w.grid.node_index(worst_flat))


def require_interior_admissible(w: WField, what: str = "w") -> None:
    mask = w.grid.interior_mask
    bad = mask & ~w.admissible_mask
    if np.any(bad):
        node = np.unravel_index(np.argmax(bad), w.grid.shape)
        raise AdmissibilityViolation(f"{what} is not admissible", node,
                                     float(w.min_eig[node]))


def residual_of_w(wf: WField, u: ScalarField, rhs: RhsFunction) -> np.ndarray:
    """log det w - f(x, u) on interior nodes, NaN on the boundary."""
    grid = wf.grid
    require_interior_admissible(wf)
    ld = wf.log_det()
    f = rhs.f_values(u.values, grid.points)
    out = np.full(grid.shape, np.nan)
    mask = grid.interior_mask
    out[mask] = ld[mask] - f[mask]
    return out


def residual(u: ScalarField, psi: ScalarField, T: Sym2Field, rhs: RhsFunction,
             m: MetricPackage) -> np.ndarray:
    """Residual of the regularized equation; NaN at boundary nodes.

    Raises AdmissibilityViolation (with the first offending node) if the
    tensor is not positive definite at some interior node.
    """
    return residual_of_w(w_tensor(u, psi, T, m), u, rhs)


def s_from_u(u: ScalarField, m: MetricPackage,
             schouten: Sym2Field | None = None) -> ScalarField:
    """Determinant target manufactured from u:
    det(Schouten of e^{-2u} g) / (e^{-2nu} det g).

    Requires admissibility at interior nodes; boundary values use the
    one-sided stencils and are diagnostic quality.
    """
    S_t = schouten_conformal(u, m, schouten)
    wf = WField(S_t, m)
    require_interior_admissible(wf, "conformal Schouten tensor")
    n = u.grid.dim
    det_num = np.linalg.det(S_t.values)
    det_g = np.linalg.det(m.g.values)
    vals = det_num * np.exp(2.0 * n * u.values) / det_g
    return ScalarField(u.grid, vals)
