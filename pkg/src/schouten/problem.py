"""Problem container tying together grid, metric, right-hand side and barriers."""

from __future__ import annotations

from dataclasses import dataclass

from .conformal import RhsFunction
from .errors import ValidationError
from .geometry import MetricPackage
from .grid import ChartGrid, ScalarField, Sym2Field


@dataclass
class ProblemSpec:
    """Everything a solve needs.  ubar, chi and lam stay None until resolved."""

    grid: ChartGrid
    metric: MetricPackage
    rhs: RhsFunction
    ul: ScalarField
    ubar: ScalarField | None = None
    schouten_override: Sym2Field | None = None
    chi: ScalarField | None = None
    lam: float | None = None
    k_list: tuple = ()

    def __post_init__(self):
        for name in ("ul", "ubar", "chi"):
            f = getattr(self, name)
            if f is not None and f.grid.shape != self.grid.shape:
                raise ValidationError(f"{name} lives on a different grid")

    @property
    def schouten_eff(self) -> Sym2Field:
        if self.schouten_override is not None:
            return self.schouten_override
        if self.metric.schouten is None:
            raise ValidationError(
                "dimension 2 needs a replacement tensor for the Schouten term")
        return self.metric.schouten
