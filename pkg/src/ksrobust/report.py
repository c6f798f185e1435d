"""Per-iteration run records shared by the control drivers and the CSV writer."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

REPORT_COLUMNS = (
    "iter",
    "Jr_total",
    "tracking",
    "control_cost",
    "disturbance_gain",
    "grad_v_norm",
    "grad_psi_norm",
    "G",
    "terminal_error",
    "alpha",
    "beta_step",
)


@dataclass
class IterRecord:
    """One row of a run report; ``None`` marks a column that does not apply."""

    iter: int
    Jr_total: float | None = None
    tracking: float | None = None
    control_cost: float | None = None
    disturbance_gain: float | None = None
    grad_v_norm: float | None = None
    grad_psi_norm: float | None = None
    G: float | None = None
    terminal_error: float | None = None
    alpha: float | None = None
    beta_step: float | None = None
    # leader gradient norm; kept in memory, not part of the CSV layout
    grad_G_norm: float | None = None


assert tuple(f.name for f in fields(IterRecord))[: len(REPORT_COLUMNS)] == REPORT_COLUMNS


@dataclass
class RunReport:
    rows: list[IterRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    elapsed: float = 0.0
    notes: dict = field(default_factory=dict)

    def append(self, row: IterRecord):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)
