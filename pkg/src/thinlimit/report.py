"""Energy evaluation reports shared by the energy and optimizer modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class TraceRow:
    iter: int
    energy: float
    grad_norm: float
    violation: float

    def as_line(self) -> str:
        return f"{self.iter},{self.energy!r},{self.grad_norm!r},{self.violation!r}"


@dataclass
class EnergyReport:
    """Result of an energy evaluation or minimization.

    ``value`` is +inf only when ``is_infinite`` is set (strict constraint
    violation); consumers must check the tag before doing arithmetic.
    """

    value: float
    terms: dict = field(default_factory=dict)
    violation_mean: float | None = None
    violation_max: float | None = None
    grad_norm: float | None = None
    is_infinite: bool = False
    flagged_nodes: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.is_infinite:
            self.value = math.inf
        elif not math.isfinite(self.value):
            raise ValueError("finite report with non-finite value")

    @property
    def finite_value(self) -> float:
        if self.is_infinite:
            raise ValueError("energy report is infinite: %s" % (self.meta,))
        return self.value
