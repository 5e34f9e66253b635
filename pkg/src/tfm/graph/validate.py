from __future__ import annotations

from dataclasses import dataclass, field

from .snapshot import DEFAULT_WINDOW, apply_events, empty_snapshot
from .types import EventLog, GraphError


@dataclass(frozen=True)
class Violation:
    index: int
    time: float
    ordinal: int
    error: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(
            f"#{v.index} (t={v.time}, i={v.ordinal}) {v.error}: {v.message}" for v in self.violations
        )


def validate_log(log: EventLog, window: int = DEFAULT_WINDOW) -> ValidationReport:
    """Replay a log event by event and collect every integrity violation.

    Offending events are skipped so later problems are still reported.
    """
    report = ValidationReport()
    snap = empty_snapshot(log.step_duration, window)
    for index, ev in enumerate(log.events):
        try:
            snap = apply_events(snap, [ev])
        except GraphError as exc:
            report.violations.append(
                Violation(index, ev.time, ev.ordinal, type(exc).__name__, str(exc))
            )
    return report
