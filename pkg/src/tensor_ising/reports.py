"""Result records shared by the estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class EstimateReport:
    """Point estimate with optional standard error and confidence set."""

    estimate: float
    std_error: float | None = None
    ci: object = None
    iterations: int = 0
    residual: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self):
        return math.isfinite(self.estimate)

    def to_dict(self):
        est = self.estimate
        out = {
            "estimate": est if math.isfinite(est) else None,
            "sentinel": None if math.isfinite(est) else ("+inf" if est > 0 else "-inf"),
            "std_error": self.std_error,
            "ci": self.ci.to_dict() if hasattr(self.ci, "to_dict") else self.ci,
            "iterations": self.iterations,
            "residual": self.residual,
            "diagnostics": self.diagnostics,
        }
        return out


@dataclass(frozen=True)
class ConfidenceSet:
    """An interval together with finitely many extra points (atoms)."""

    lower: float
    upper: float
    atoms: tuple = ()

    def contains(self, value, atol=0.0):
        if self.lower <= value <= self.upper:
            return True
        return any(abs(value - a) <= atol for a in self.atoms)

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def hull(self):
        pts = [self.lower, self.upper, *self.atoms]
        return min(pts), max(pts)

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "atoms": list(self.atoms)}
