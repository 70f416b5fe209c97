"""Per-patient longitudinal trial data and its CSV format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

VISIT_WEEKS = (2.0, 4.0, 8.0, 12.0)


@dataclass(frozen=True)
class TrialDataset:
    """Outcomes are raw post-baseline values; ``NaN`` marks a missing visit."""

    patient_id: np.ndarray
    arm: np.ndarray
    recruit_week: np.ndarray
    baseline: np.ndarray
    outcomes: np.ndarray
    visit_weeks: tuple = VISIT_WEEKS
    n_arms: Optional[int] = None

    def __post_init__(self):
        n = len(self.patient_id)
        outcomes = np.asarray(self.outcomes, dtype=float).reshape(n, len(self.visit_weeks))
        object.__setattr__(self, "patient_id", np.asarray(self.patient_id, dtype=int))
        object.__setattr__(self, "arm", np.asarray(self.arm, dtype=int))
        object.__setattr__(self, "recruit_week", np.asarray(self.recruit_week, dtype=float))
        object.__setattr__(self, "baseline", np.asarray(self.baseline, dtype=float))
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "visit_weeks", tuple(float(w) for w in self.visit_weeks))
        if self.n_arms is None:
            object.__setattr__(self, "n_arms", int(self.arm.max()) + 1 if n else 0)
        for name in ("arm", "recruit_week", "baseline"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per patient")
        if n and (self.arm.min() < 0 or self.arm.max() >= self.n_arms):
            raise ValueError("arm index out of range")

    @property
    def n(self) -> int:
        return len(self.patient_id)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.outcomes)

    @property
    def changes(self) -> np.ndarray:
        """Change from baseline at each post-baseline visit."""
        return self.outcomes - self.baseline[:, None]

    def subset(self, mask) -> "TrialDataset":
        mask = np.asarray(mask)
        return replace(
            self,
            patient_id=self.patient_id[mask],
            arm=self.arm[mask],
            recruit_week=self.recruit_week[mask],
            baseline=self.baseline[mask],
            outcomes=self.outcomes[mask],
        )

    def censor(self, tau: float) -> "TrialDataset":
        """Data as seen at calendar time ``tau``: later visits masked, later recruits dropped."""
        keep = self.recruit_week <= tau
        sub = self.subset(keep)
        due = sub.recruit_week[:, None] + np.asarray(sub.visit_weeks)[None, :]
        out = np.where(due <= tau, sub.outcomes, np.nan)
        return replace(sub, outcomes=out)

    def to_csv(self, path) -> None:
        cols = ["patient_id", "arm", "recruit_week", "baseline"] + [f"y_w{w:g}" for w in self.visit_weeks]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(self.n):
                ys = ["" if math.isnan(v) else repr(float(v)) for v in self.outcomes[i]]
                w.writerow([int(self.patient_id[i]), int(self.arm[i]), repr(float(self.recruit_week[i])),
                            repr(float(self.baseline[i]))] + ys)

    @classmethod
    def from_csv(cls, path, n_arms: Optional[int] = None) -> "TrialDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            fixed = ["patient_id", "arm", "recruit_week", "baseline"]
            if header[:4] != fixed or len(header) < 5:
                raise ValueError(f"{path}: expected columns {fixed} followed by y_w<week> columns")
            try:
                weeks = tuple(float(h[3:]) for h in header[4:] if h.startswith("y_w"))
            except ValueError:
                raise ValueError(f"{path}: bad visit column in header {header}") from None
            if len(weeks) != len(header) - 4:
                raise ValueError(f"{path}: unexpected columns {header[4:]}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                rows.append(row)
        ids = [int(r[0]) for r in rows]
        arm = [int(r[1]) for r in rows]
        rec = [float(r[2]) for r in rows]
        base = [float(r[3]) for r in rows]
        ys = [[float(v) if v.strip() else np.nan for v in r[4:]] for r in rows]
        return cls(np.array(ids), np.array(arm), np.array(rec), np.array(base),
                   np.array(ys, dtype=float).reshape(len(rows), len(weeks)), weeks, n_arms)
