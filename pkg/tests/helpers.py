"""Small builders shared by the tests."""

from __future__ import annotations

import datetime as dt

from firstoccur.cohort_builder import LabeledExample
from firstoccur.ehr_core import CodeType, Gender, MedicalCode, PatientHistory, Visit


def icd(value: str) -> MedicalCode:
    return MedicalCode(CodeType.ICD, value)


def d(text: str) -> dt.date:
    return dt.date.fromisoformat(text)


def visit(date: str, *codes: MedicalCode) -> Visit:
    return Visit(d(date), tuple(codes))


def patient(pid: str, *visits: Visit, birth_year: int = 1960, gender: Gender = Gender.MALE) -> PatientHistory:
    return PatientHistory(pid, birth_year, gender, tuple(visits))


def example(pid: str, label: int, *visits: Visit, age: int = 50, gender: Gender = Gender.MALE,
            index: str = "2021-12-31") -> LabeledExample:
    return LabeledExample(pid, label, d(index), tuple(visits), age, gender)
