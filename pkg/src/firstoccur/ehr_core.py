"""Data model and CSV ingestion for longitudinal medical-event data."""

from __future__ import annotations

import csv
import datetime as dt
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, ParseError

PATIENTS_HEADER = ["patient_id", "birth_year", "gender"]
EVENTS_HEADER = ["patient_id", "date", "code_type", "code"]


class CodeType(str, Enum):
    ICD = "ICD"
    CPT = "CPT"
    RX = "RX"
    LAB = "LAB"


class Gender(str, Enum):
    MALE = "M"
    FEMALE = "F"


class TruncationPolicy(str, Enum):
    ICD3 = "ICD3"
    FULL = "Full"


@dataclass(frozen=True, order=True)
class MedicalCode:
    code_type: CodeType
    value: str

    def __post_init__(self):
        if not isinstance(self.code_type, CodeType):
            object.__setattr__(self, "code_type", CodeType(self.code_type))
        if not self.value or any(c.isspace() for c in self.value):
            raise ValueError(f"invalid code value {self.value!r}")

    def __str__(self) -> str:
        return f"{self.code_type.value}/{self.value}"


@dataclass(frozen=True)
class Visit:
    """One dated encounter. ``codes`` is a multiset kept as a sorted tuple."""

    date: dt.date
    codes: tuple[MedicalCode, ...]

    def __post_init__(self):
        if not self.codes:
            raise ValueError(f"visit on {self.date} has no codes")
        object.__setattr__(self, "codes", tuple(sorted(self.codes)))


@dataclass(frozen=True)
class PatientHistory:
    patient_id: str
    birth_year: int
    gender: Gender
    visits: tuple[Visit, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.visits:
            raise ValueError(f"patient {self.patient_id} has no visits")
        visits = tuple(sorted(self.visits, key=lambda v: v.date))
        dates = [v.date for v in visits]
        if len(set(dates)) != len(dates):
            raise ValueError(f"patient {self.patient_id} has two visits on one date")
        object.__setattr__(self, "visits", visits)
        object.__setattr__(self, "gender", Gender(self.gender))


def truncate_code(code: MedicalCode, policy: TruncationPolicy | str) -> MedicalCode:
    """Normalize a code under ``policy``.

    ICD3 keeps the part of an ICD value before the first dot, cut to three
    characters ("250.31" -> "250"). Non-ICD codes and the Full policy pass
    through unchanged.
    """
    policy = TruncationPolicy(policy)
    if policy is TruncationPolicy.FULL or code.code_type is not CodeType.ICD:
        return code
    head = code.value.split(".", 1)[0][:3]
    if head == code.value or not head:  # nothing before the dot: leave as is
        return code
    return MedicalCode(CodeType.ICD, head)


def _parse_date(text: str, path: str, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"malformed date {text!r}", path, line) from None


def _read_rows(path: Path, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise ParseError(f"expected header {','.join(header)}", str(path), 1)
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", str(path), reader.line_num
                )
            yield reader.line_num, row


def parse_cohort(patients_file: str | Path, events_file: str | Path) -> list[PatientHistory]:
    """Read the two-file CSV format into patient histories.

    Events sharing a (patient_id, date) pair are merged into one visit.
    Patients are returned in patients-file order.
    """
    patients_file, events_file = Path(patients_file), Path(events_file)
    for p in (patients_file, events_file):
        if not p.is_file():
            raise DataError(f"missing input file {p}")

    demographics: dict[str, tuple[int, Gender, int]] = {}
    for line, (pid, birth_year, gender) in _read_rows(patients_file, PATIENTS_HEADER):
        if not pid:
            raise ParseError("empty patient_id", str(patients_file), line)
        if pid in demographics:
            raise ParseError(f"duplicate patient_id {pid!r}", str(patients_file), line)
        try:
            year = int(birth_year)
        except ValueError:
            raise ParseError(f"malformed birth_year {birth_year!r}", str(patients_file), line) from None
        try:
            sex = Gender(gender)
        except ValueError:
            raise ParseError(f"unknown gender {gender!r}", str(patients_file), line) from None
        demographics[pid] = (year, sex, line)

    grouped: dict[str, dict[dt.date, list[MedicalCode]]] = defaultdict(lambda: defaultdict(list))
    for line, (pid, date_text, code_type, value) in _read_rows(events_file, EVENTS_HEADER):
        if pid not in demographics:
            raise ParseError(f"event for unknown patient_id {pid!r}", str(events_file), line)
        date = _parse_date(date_text, str(events_file), line)
        try:
            ctype = CodeType(code_type)
        except ValueError:
            raise ParseError(f"unknown code_type {code_type!r}", str(events_file), line) from None
        try:
            code = MedicalCode(ctype, value)
        except ValueError as exc:
            raise ParseError(str(exc), str(events_file), line) from None
        grouped[pid][date].append(code)

    patients = []
    for pid, (year, sex, line) in demographics.items():
        by_date = grouped.get(pid)
        if not by_date:
            raise ParseError(f"patient {pid!r} has no events", str(patients_file), line)
        visits = tuple(Visit(d, tuple(codes)) for d, codes in by_date.items())
        patients.append(PatientHistory(pid, year, sex, visits))
    return patients


def write_cohort(
    patients: Sequence[PatientHistory], patients_file: str | Path, events_file: str | Path
) -> None:
    """Write histories in the format read by :func:`parse_cohort`."""
    with open(patients_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATIENTS_HEADER)
        for p in patients:
            w.writerow([p.patient_id, p.birth_year, p.gender.value])
    with open(events_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for p in patients:
            for visit in p.visits:
                iso = visit.date.isoformat()
                for code in visit.codes:
                    w.writerow([p.patient_id, iso, code.code_type.value, code.value])
