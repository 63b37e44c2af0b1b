"""First-occurrence labeling, observation windows and stratified splits."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from dateutil.relativedelta import relativedelta

from .ehr_core import Gender, MedicalCode, PatientHistory, TruncationPolicy, Visit, truncate_code
from .errors import ConfigError, DataError

SPLIT_NAMES = ("train", "validation", "test")


def add_months(date: dt.date, months: int) -> dt.date:
    """Calendar month shift, clamping the day (May 31 - 3 months -> Feb 28/29)."""
    return date + relativedelta(months=months)


@dataclass(frozen=True)
class CohortSpec:
    target_codes: frozenset[MedicalCode]
    negative_index_date: dt.date
    history_months: int = 24
    delta_months: int = 3
    min_history_visits: int = 2
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    split_seed: int = 0
    # targets stay at ICD3 even when features use full codes
    target_policy: TruncationPolicy = TruncationPolicy.ICD3

    def __post_init__(self):
        object.__setattr__(self, "target_codes", frozenset(self.target_codes))
        object.__setattr__(self, "target_policy", TruncationPolicy(self.target_policy))
        if not self.target_codes:
            raise ConfigError("at least one target code is required", "cohort.target_codes")
        if self.history_months < 1:
            raise ConfigError("must be >= 1", "cohort.history_months")
        if self.delta_months < 0:
            raise ConfigError("must be >= 0", "cohort.delta_months")
        if self.min_history_visits < 0:
            raise ConfigError("must be >= 0", "cohort.min_history_visits")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("need three positive fractions summing to 1", "cohort.split_fractions")
        object.__setattr__(self, "split_fractions", fr)

    def window(self, index_date: dt.date) -> tuple[dt.date, dt.date]:
        """Half-open observation window ``[start, end)`` for an index date."""
        end = add_months(index_date, -self.delta_months)
        start = add_months(index_date, -(self.history_months + self.delta_months))
        return start, end


@dataclass(frozen=True)
class LabeledExample:
    patient_id: str
    label: int
    index_date: dt.date
    window_visits: tuple[Visit, ...]
    age_at_index: int
    gender: Gender


def find_first_occurrence(
    history: PatientHistory,
    target_codes: Iterable[MedicalCode],
    policy: TruncationPolicy | str = TruncationPolicy.ICD3,
) -> dt.date | None:
    """Date of the earliest visit holding any target code (after truncation)."""
    targets = {truncate_code(c, policy) for c in target_codes}
    for visit in history.visits:
        if any(truncate_code(c, policy) in targets for c in visit.codes):
            return visit.date
    return None


def _example(history: PatientHistory, label: int, index_date: dt.date, spec: CohortSpec):
    start, end = spec.window(index_date)
    visits = tuple(v for v in history.visits if start <= v.date < end)
    if len(visits) < max(spec.min_history_visits, 1):
        return None
    return LabeledExample(
        patient_id=history.patient_id,
        label=label,
        index_date=index_date,
        window_visits=visits,
        age_at_index=index_date.year - history.birth_year,
        gender=history.gender,
    )


def build_cohort(patients: Sequence[PatientHistory], spec: CohortSpec) -> list[LabeledExample]:
    """Label every patient and cut its observation window.

    Positives are anchored at their first occurrence, negatives (never
    diagnosed) at ``spec.negative_index_date``. Anyone with too little
    history in the window is dropped; a positive is never relabeled.
    """
    targets = {truncate_code(c, spec.target_policy) for c in spec.target_codes}
    examples = []
    for history in patients:
        first = find_first_occurrence(history, targets, spec.target_policy)
        if first is None:
            ex = _example(history, 0, spec.negative_index_date, spec)
        else:
            ex = _example(history, 1, first, spec)
        if ex is not None:
            examples.append(ex)
    if not examples:
        raise DataError("cohort is empty; check target codes, window lengths and index date")
    return examples


def largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer allocation of ``total`` proportional to ``fractions``.

    Leftover units go to the largest fractional remainders, earlier parts
    winning ties.
    """
    quotas = [total * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(
    examples: Sequence[LabeledExample], spec: CohortSpec
) -> tuple[list[LabeledExample], list[LabeledExample], list[LabeledExample]]:
    parts: tuple[list, list, list] = ([], [], [])
    rng = np.random.default_rng(spec.split_seed)
    for label in (0, 1):
        members = sorted((e for e in examples if e.label == label), key=lambda e: e.patient_id)
        if len(members) < len(parts):
            raise DataError(
                f"class {label} has {len(members)} examples; need at least {len(parts)} to split"
            )
        perm = rng.permutation(len(members))
        counts = largest_remainder(len(members), spec.split_fractions)
        start = 0
        for part, n in zip(parts, counts):
            part.extend(members[i] for i in perm[start : start + n])
            start += n
    for part in parts:
        part.sort(key=lambda e: e.patient_id)
    return parts


def leaked_positives(examples: Iterable[LabeledExample], spec: CohortSpec) -> list[str]:
    """Patient ids of positives whose window contains a target code."""
    targets = {truncate_code(c, spec.target_policy) for c in spec.target_codes}
    bad = []
    for ex in examples:
        if ex.label != 1:
            continue
        if any(
            truncate_code(c, spec.target_policy) in targets for v in ex.window_visits for c in v.codes
        ):
            bad.append(ex.patient_id)
    return bad


def write_labels(splits: dict[str, Sequence[LabeledExample]], path: str | Path) -> None:
    """Audit file ``patient_id,label,index_date,split``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "label", "index_date", "split"])
        rows = [(e.patient_id, e.label, e.index_date.isoformat(), name)
                for name, exs in splits.items() for e in exs]
        for row in sorted(rows):
            w.writerow(row)


def read_labels(path: str | Path) -> dict[str, tuple[int, dt.date, str]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["patient_id"]] = (
                int(row["label"]), dt.date.fromisoformat(row["index_date"]), row["split"]
            )
    return out
