"""Structured experiment output serialized to JSON (and CSV for curves)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from . import __version__

SCHEMA = 1

# keys excluded when comparing reports for byte-level determinism
VOLATILE_KEYS = ("runtime_s",)


@dataclass
class Report:
    experiment: str
    scalars: dict = field(default_factory=dict)  # name -> value
    error_bars: dict = field(default_factory=dict)  # name -> half-width
    verdicts: dict = field(default_factory=dict)  # name -> bool
    claims: list = field(default_factory=list)  # human-readable statements checked
    curves: dict = field(default_factory=dict)  # name -> list of rows
    config: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def add_scalar(self, name, value, err=None):
        self.scalars[name] = float(value)
        if err is not None:
            self.error_bars[name] = float(err)

    def add_verdict(self, name, ok):
        self.verdicts[name] = bool(ok)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "version": __version__,
            "experiment": self.experiment,
            "config": self.config,
            "scalars": self.scalars,
            "error_bars": self.error_bars,
            "verdicts": self.verdicts,
            "claims": self.claims,
            "passed": self.passed(),
            "runtime_s": self.runtime_s,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_csv(self, path):
        """One CSV holding every curve, long format: curve, columns..."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["curve", "col0", "col1", "col2"])
            for name, rows in self.curves.items():
                for row in rows:
                    padded = list(row) + [""] * (3 - len(row))
                    writer.writerow([name] + padded[:3])

    @staticmethod
    def from_json(text: str) -> dict:
        return json.loads(text)


def stable_json(report: Report) -> str:
    """JSON with volatile fields removed; byte-identical across reruns."""
    d = report.to_dict()
    for key in VOLATILE_KEYS:
        d.pop(key, None)
    return json.dumps(d, sort_keys=True, indent=2)
