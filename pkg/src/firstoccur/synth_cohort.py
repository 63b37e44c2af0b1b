"""Reproducible synthetic longitudinal cohorts with a planted risk structure.

None of the distributional choices below come from real data; they are
stand-ins chosen so that the labeling and windowing logic downstream has
something learnable to work on.

Generative story, per patient:

* age uniform in 18..90 at ``study_end``, gender a fair coin;
* a utilization level ``u ~ Gamma(2, 1/2)`` scaling the number of visits
  in the observation region;
* each risk code is "exposed" with probability ``risk_exposure``; exposure
  multiplies that code's sampling weight, making its counts overdispersed;
* the label is Bernoulli with log-odds
  ``intercept + risk_log_odds * (sum_j min(count_j, risk_count_cap)
  + synergy_weight * [at least synergy_min_codes risk codes present])
  + age_log_odds * (age - 54) / 10``, where ``count_j`` counts code ``j`` over
  the visits laid out in the 24-month region ending 3 months before the
  patient's anchor date. The intercept is solved so that the expected
  prevalence equals ``prevalence``. The co-occurrence bonus is an
  interaction that a linear model cannot represent;
* positives get their first target diagnosis at an anchor date in the last
  ``onset_spread_months`` of the study; negatives are anchored at
  ``study_end``. Every patient also gets one lead-in visit more than 27
  months before the anchor, and possibly one visit in the 3-month gap.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .cohort_builder import add_months
from .ehr_core import CodeType, Gender, MedicalCode, PatientHistory, Visit, write_cohort
from .errors import ConfigError

HISTORY_MONTHS = 24
DELTA_MONTHS = 3


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 2000
    study_start: dt.date = dt.date(2015, 1, 1)
    study_end: dt.date = dt.date(2021, 12, 31)
    target_code: str = "250.00"
    prevalence: float = 0.12
    n_icd: int = 60
    n_cpt: int = 20
    n_rx: int = 20
    n_lab: int = 10
    n_risk_codes: int = 10
    risk_log_odds: float = 1.0
    visits_per_patient: float = 8.0
    codes_per_visit: float = 4.0
    seed: int = 42
    age_log_odds: float = 0.0
    risk_count_cap: int = 3
    risk_exposure: float = 0.10
    exposure_multiplier: float = 12.0
    onset_spread_months: int = 12
    synergy_weight: float = 3.0
    synergy_min_codes: int = 3

    def __post_init__(self):
        for name in ("study_start", "study_end"):
            value = getattr(self, name)
            if isinstance(value, str):
                try:
                    object.__setattr__(self, name, dt.date.fromisoformat(value))
                except ValueError:
                    raise ConfigError(f"not an ISO date: {value!r}", f"generator.{name}") from None
        checks = [
            ("n_patients", self.n_patients >= 1),
            ("prevalence", 0 < self.prevalence < 1),
            ("n_icd", self.n_icd >= 1 and self.n_icd <= 800),
            ("n_cpt", self.n_cpt >= 0),
            ("n_rx", self.n_rx >= 0),
            ("n_lab", self.n_lab >= 0),
            ("n_risk_codes", 0 <= self.n_risk_codes <= self.n_icd),
            ("visits_per_patient", self.visits_per_patient > 0),
            ("codes_per_visit", self.codes_per_visit > 0),
            ("risk_count_cap", self.risk_count_cap >= 1),
            ("risk_exposure", 0 <= self.risk_exposure <= 1),
            ("exposure_multiplier", self.exposure_multiplier > 0),
            ("onset_spread_months", self.onset_spread_months >= 0),
            ("synergy_weight", self.synergy_weight >= 0),
            ("synergy_min_codes", self.synergy_min_codes >= 1),
            ("study_end", self.study_start < self.study_end),
            ("target_code", bool(self.target_code) and not any(c.isspace() for c in self.target_code)),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value {getattr(self, name)!r}", f"generator.{name}")
        earliest_anchor = add_months(self.study_end, -self.onset_spread_months)
        if add_months(self.study_start, HISTORY_MONTHS + DELTA_MONTHS + 1) > earliest_anchor:
            raise ConfigError(
                "study period too short for a 27-month history before the onset window",
                "generator.study_end",
            )

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["study_start"] = self.study_start.isoformat()
        doc["study_end"] = self.study_end.isoformat()
        return doc


def _code_table(cfg: GeneratorConfig, rng: np.random.Generator):
    """Feature vocabulary, sampling weights and planted risk codes."""
    target_class = cfg.target_code.split(".", 1)[0][:3]
    classes = [c for c in range(100, 1000) if f"{c:03d}" != target_class][: cfg.n_icd]
    subs = rng.integers(0, 10, size=cfg.n_icd)
    codes = [MedicalCode(CodeType.ICD, f"{c:03d}.{s}") for c, s in zip(classes, subs)]
    codes += [MedicalCode(CodeType.CPT, f"{99000 + i}") for i in range(cfg.n_cpt)]
    codes += [MedicalCode(CodeType.RX, f"{100 + i}") for i in range(cfg.n_rx)]
    codes += [MedicalCode(CodeType.LAB, f"{1000 + i}-{i % 10}") for i in range(cfg.n_lab)]
    # Zipf-like popularity in a random order
    weights = 1.0 / np.arange(1, len(codes) + 1) ** 0.8
    weights = weights[rng.permutation(len(codes))]
    risk = np.sort(rng.choice(cfg.n_icd, size=cfg.n_risk_codes, replace=False))
    return codes, weights / weights.sum(), risk


def _trunc_poisson(rng: np.random.Generator, lam: float) -> int:
    while True:
        k = int(rng.poisson(lam))
        if k >= 1:
            return k


def _random_day(rng: np.random.Generator, lo: dt.date, hi: dt.date) -> dt.date:
    """Uniform date in ``[lo, hi)``."""
    return lo + dt.timedelta(days=int(rng.integers(0, (hi - lo).days)))


@dataclass
class _Draft:
    """One patient before the label is known."""

    birth_year: int
    gender: Gender
    window_offsets: np.ndarray  # days after the window start, distinct
    window_codes: list[np.ndarray]
    lead_codes: np.ndarray
    gap_codes: np.ndarray | None
    score: float
    u_label: float
    rng: np.random.Generator


def _draft_patient(cfg: GeneratorConfig, rng: np.random.Generator, weights: np.ndarray,
                   risk: np.ndarray) -> _Draft:
    age = int(rng.integers(18, 91))
    gender = Gender.FEMALE if rng.random() < 0.5 else Gender.MALE
    u = rng.gamma(2.0, 0.5)
    exposed = risk[rng.random(len(risk)) < cfg.risk_exposure]
    w = weights.copy()
    w[exposed] *= cfg.exposure_multiplier * rng.gamma(1.0, 1.0, size=len(exposed))
    w /= w.sum()

    def draw_visit():
        return rng.choice(len(w), size=_trunc_poisson(rng, cfg.codes_per_visit), p=w)

    n_window = _trunc_poisson(rng, cfg.visits_per_patient * u)
    # the shortest 24-month span has 730 days
    n_window = min(n_window, 700)
    offsets = np.sort(rng.choice(730, size=n_window, replace=False))
    window_codes = [draw_visit() for _ in range(n_window)]
    lead_codes = draw_visit()
    gap_codes = draw_visit() if rng.random() < 0.3 else None

    counts = np.zeros(len(w), dtype=np.int64)
    for v in window_codes:
        np.add.at(counts, v, 1)
    capped = float(np.minimum(counts[risk], cfg.risk_count_cap).sum())
    synergy = float((counts[risk] > 0).sum() >= cfg.synergy_min_codes)
    score = cfg.risk_log_odds * (capped + cfg.synergy_weight * synergy)
    score += cfg.age_log_odds * (age - 54) / 10.0
    return _Draft(cfg.study_end.year - age, gender, offsets, window_codes, lead_codes, gap_codes,
                  score, float(rng.random()), rng)


def _solve_intercept(scores: np.ndarray, prevalence: float) -> float:
    f = lambda b: float(expit(b + scores).mean()) - prevalence
    lo, hi = -50.0 - scores.max(), 50.0 - scores.min()
    return brentq(f, lo, hi, xtol=1e-12)


def generate_cohort(config: GeneratorConfig) -> tuple[list[PatientHistory], dict[MedicalCode, float]]:
    """Generate ``config.n_patients`` histories plus the planted log-odds per risk code.

    Every patient draws from its own substream of ``config.seed``, so the
    output does not depend on generation order.
    """
    cfg = config
    codes, weights, risk = _code_table(cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,))))
    drafts = [
        _draft_patient(cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, i))),
                       weights, risk)
        for i in range(cfg.n_patients)
    ]
    scores = np.array([d.score for d in drafts])
    intercept = _solve_intercept(scores, cfg.prevalence)
    probs = expit(intercept + scores)

    target_class = cfg.target_code.split(".", 1)[0]
    target_variants = sorted({cfg.target_code, f"{target_class}.0", f"{target_class}.9"})
    onset_lo = add_months(cfg.study_end, -cfg.onset_spread_months)
    width = len(str(cfg.n_patients))
    patients = []
    for i, (d, p) in enumerate(zip(drafts, probs)):
        rng = d.rng
        positive = d.u_label < p
        anchor = _random_day(rng, onset_lo, cfg.study_end) if positive and cfg.onset_spread_months else cfg.study_end
        w_start = add_months(anchor, -(HISTORY_MONTHS + DELTA_MONTHS))
        w_end = add_months(anchor, -DELTA_MONTHS)

        visits = []
        for off, idx in zip(d.window_offsets, d.window_codes):
            day = w_start + dt.timedelta(days=int(off))
            if day >= w_end:  # spans shorter than 730 days
                day = w_end - dt.timedelta(days=1 + int(off) % 7)
            visits.append((day, [codes[j] for j in idx]))
        lead = _random_day(rng, cfg.study_start, w_start)
        while add_months(lead, HISTORY_MONTHS + DELTA_MONTHS) >= anchor:
            lead -= dt.timedelta(days=1)
        visits.append((lead, [codes[j] for j in d.lead_codes]))
        if d.gap_codes is not None and (anchor - w_end).days > 1:
            visits.append((_random_day(rng, w_end, anchor), [codes[j] for j in d.gap_codes]))
        if positive:
            target = MedicalCode(CodeType.ICD, target_variants[int(rng.integers(len(target_variants)))])
            extra = rng.choice(len(codes), size=int(rng.poisson(2.0)), p=weights)
            visits.append((anchor, [target] + [codes[j] for j in extra]))
            follow = anchor + dt.timedelta(days=int(rng.integers(30, 366)))
            if rng.random() < 0.5 and follow <= cfg.study_end:
                visits.append((follow, [target]))

        merged: dict[dt.date, list[MedicalCode]] = {}
        for day, cs in visits:
            merged.setdefault(day, []).extend(cs)
        patients.append(PatientHistory(
            patient_id=f"P{i + 1:0{width}d}",
            birth_year=d.birth_year,
            gender=d.gender,
            visits=tuple(Visit(day, tuple(cs)) for day, cs in merged.items()),
        ))
    ground_truth = {codes[j]: cfg.risk_log_odds for j in risk}
    return patients, ground_truth


def write_ground_truth(ground_truth: dict[MedicalCode, float], path: str | Path) -> None:
    """One JSON record per line: ``{"code_type", "code", "log_odds"}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for code in sorted(ground_truth):
            rec = {"code_type": code.code_type.value, "code": code.value, "log_odds": ground_truth[code]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_ground_truth(path: str | Path) -> dict[MedicalCode, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[MedicalCode(CodeType(rec["code_type"]), rec["code"])] = float(rec["log_odds"])
    return out


def write_generated(patients: Sequence[PatientHistory], ground_truth: dict[MedicalCode, float],
                    out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "patients": out_dir / "patients.csv",
        "events": out_dir / "events.csv",
        "ground_truth": out_dir / "ground_truth.jsonl",
    }
    write_cohort(patients, paths["patients"], paths["events"])
    write_ground_truth(ground_truth, paths["ground_truth"])
    return paths
