"""Common result record for all certification checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

__all__ = ["Certificate"]


@dataclass
class Certificate:
    """Outcome of one certification check.

    ``margin`` is the check's distance to failure in its own units (positive
    iff the check passed, when a margin is meaningful).  ``details`` carries
    check-specific numbers for reporting; ``reason`` is set when the check
    could not be completed (for example an equilibrium that did not
    converge), in which case ``passed`` is False.
    """

    name: str
    passed: bool
    margin: float | None = None
    details: dict[str, Any] = field(default_factory=dict)
    reason: str | None = None

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = [f"{status} {self.name}"]
        if self.margin is not None:
            parts.append(f"margin={self.margin:.6g}")
        if self.reason:
            parts.append(f"({self.reason})")
        return " ".join(parts)
