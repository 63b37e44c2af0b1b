"""Aggregate observation windows into one sparse count (or binary) row per patient."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cohort_builder import LabeledExample
from .ehr_core import CodeType, Gender, MedicalCode, TruncationPolicy, truncate_code
from .errors import DataError, ModelFormatError

VOCAB_FORMAT_VERSION = 1


class Encoding(str, Enum):
    COUNT = "Count"
    BINARY = "Binary"


@dataclass(frozen=True)
class Vocabulary:
    """Code columns ``0..V-1`` followed by ``age`` (V) and ``gender`` (V+1)."""

    codes: tuple[MedicalCode, ...]
    policy: TruncationPolicy = TruncationPolicy.ICD3
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "policy", TruncationPolicy(self.policy))
        index = {c: i for i, c in enumerate(self.codes)}
        if len(index) != len(self.codes):
            raise ValueError("duplicate codes in vocabulary")
        object.__setattr__(self, "index", index)

    @property
    def n_codes(self) -> int:
        return len(self.codes)

    @property
    def n_cols(self) -> int:
        return len(self.codes) + 2

    @property
    def age_col(self) -> int:
        return len(self.codes)

    @property
    def gender_col(self) -> int:
        return len(self.codes) + 1

    def column_of(self, code: MedicalCode) -> int | None:
        return self.index.get(truncate_code(code, self.policy))

    def feature_names(self) -> list[str]:
        return [str(c) for c in self.codes] + ["age", "gender"]

    def to_dict(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "policy": self.policy.value,
            "codes": [[c.code_type.value, c.value] for c in self.codes],
        }

    @classmethod
    def from_dict(cls, doc: dict, path: str = "$.vocabulary") -> "Vocabulary":
        if not isinstance(doc, dict):
            raise ModelFormatError("expected an object", path)
        if doc.get("version") != VOCAB_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported version {doc.get('version')!r}", f"{path}.version")
        try:
            policy = TruncationPolicy(doc["policy"])
        except (KeyError, ValueError):
            raise ModelFormatError("missing or unknown policy", f"{path}.policy") from None
        codes = []
        for i, item in enumerate(doc.get("codes", [])):
            try:
                codes.append(MedicalCode(CodeType(item[0]), item[1]))
            except (TypeError, ValueError, IndexError):
                raise ModelFormatError("malformed code entry", f"{path}.codes[{i}]") from None
        return cls(tuple(codes), policy)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class FeatureMatrix:
    """CSR rows over a fitted vocabulary, with aligned labels and patient ids."""

    X: sp.csr_matrix
    labels: np.ndarray
    patient_ids: list[str]
    vocabulary_digest: str = ""
    n_unknown_codes: int = 0

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


def fit_vocabulary(
    train_examples: Sequence[LabeledExample],
    policy: TruncationPolicy | str = TruncationPolicy.ICD3,
    min_code_count: int = 1,
) -> Vocabulary:
    """Collect the normalized codes seen in training windows.

    A code needs at least ``min_code_count`` total occurrences across the
    training windows to get a column.
    """
    if not train_examples:
        raise DataError("cannot fit a vocabulary on an empty training set")
    policy = TruncationPolicy(policy)
    counts: Counter[MedicalCode] = Counter()
    for ex in train_examples:
        for visit in ex.window_visits:
            counts.update(truncate_code(c, policy) for c in visit.codes)
    codes = tuple(sorted(c for c, n in counts.items() if n >= min_code_count))
    if not codes:
        raise DataError("vocabulary is empty")
    return Vocabulary(codes, policy)


def vectorize(
    example: LabeledExample,
    vocab: Vocabulary,
    encoding: Encoding | str = Encoding.COUNT,
    tally: Counter | None = None,
) -> list[tuple[int, float]]:
    """Sparse row as ``(column, value)`` pairs sorted by column.

    Codes outside the vocabulary are dropped and counted in ``tally`` under
    the key ``"unknown"``. Age and gender are always present, even when the
    gender value is 0.
    """
    encoding = Encoding(encoding)
    counts: Counter[int] = Counter()
    unknown = 0
    for visit in example.window_visits:
        for code in visit.codes:
            col = vocab.column_of(code)
            if col is None:
                unknown += 1
            else:
                counts[col] += 1
    if tally is not None and unknown:
        tally["unknown"] += unknown
    if encoding is Encoding.BINARY:
        row = [(col, 1.0) for col in sorted(counts)]
    else:
        row = [(col, float(n)) for col, n in sorted(counts.items())]
    row.append((vocab.age_col, float(example.age_at_index)))
    row.append((vocab.gender_col, 1.0 if example.gender is Gender.FEMALE else 0.0))
    return row


def build_matrix(
    examples: Sequence[LabeledExample], vocab: Vocabulary, encoding: Encoding | str = Encoding.COUNT
) -> FeatureMatrix:
    tally: Counter = Counter()
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for ex in examples:
        for col, val in vectorize(ex, vocab, encoding, tally):
            indices.append(col)
            data.append(val)
        indptr.append(len(indices))
    X = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
        shape=(len(examples), vocab.n_cols),
    )
    return FeatureMatrix(
        X=X,
        labels=np.array([ex.label for ex in examples], dtype=np.int8),
        patient_ids=[ex.patient_id for ex in examples],
        vocabulary_digest=vocab.digest(),
        n_unknown_codes=tally["unknown"],
    )


def write_matrix(fm: FeatureMatrix, path) -> None:
    """JSON-lines dump: a header line, then one sparse row per line."""
    X = fm.X
    with open(path, "w", encoding="utf-8") as fh:
        header = {"vocabulary_digest": fm.vocabulary_digest, "n_cols": fm.n_cols, "n_rows": fm.n_rows}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(fm.n_rows):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            rec = {
                "patient_id": fm.patient_ids[i],
                "label": int(fm.labels[i]),
                "indices": X.indices[lo:hi].tolist(),
                "values": X.data[lo:hi].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_matrix(path) -> FeatureMatrix:
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed feature file ({exc})") from None
    indptr = np.cumsum([0] + [len(r["indices"]) for r in rows])
    indices = np.fromiter((c for r in rows for c in r["indices"]), dtype=np.int32, count=indptr[-1])
    data = np.fromiter((v for r in rows for v in r["values"]), dtype=np.float64, count=indptr[-1])
    X = sp.csr_matrix((data, indices, indptr), shape=(len(rows), header["n_cols"]))
    return FeatureMatrix(
        X=X,
        labels=np.array([r["label"] for r in rows], dtype=np.int8),
        patient_ids=[r["patient_id"] for r in rows],
        vocabulary_digest=header["vocabulary_digest"],
    )
