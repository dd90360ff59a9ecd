"""Pass/fail records shared by the validators."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    severity: str = "error"  # "error" or "warning"

    def line(self):
        tag = "PASS" if self.passed else ("WARN" if self.severity == "warning" else "FAIL")
        return f"[{tag}] {self.name}: {self.detail}"

    def to_dict(self):
        return asdict(self)


def all_passed(checks):
    return all(c.passed or c.severity == "warning" for c in checks)
