import math

import numpy as np
import pytest

from firstoccur.cohort_builder import CohortSpec, add_months, build_cohort, stratified_split
from firstoccur.ehr_core import CodeType, MedicalCode, parse_cohort, truncate_code
from firstoccur.errors import ConfigError
from firstoccur.feature_builder import build_matrix, fit_vocabulary
from firstoccur.gbdt import TrainParams, train
from firstoccur.linear_baseline import train_logistic
from firstoccur.metrics import roc_auc
from firstoccur.synth_cohort import GeneratorConfig, generate_cohort, read_ground_truth, write_generated

TARGET = MedicalCode(CodeType.ICD, "250")


def is_positive(patient):
    return any(truncate_code(c, "ICD3") == TARGET for v in patient.visits for c in v.codes)


@pytest.fixture(scope="module")
def large():
    cfg = GeneratorConfig(n_patients=20000)
    patients, truth = generate_cohort(cfg)
    return cfg, patients, truth


def model_data(cfg, patients):
    spec = CohortSpec(frozenset([TARGET]), cfg.study_end)
    tr, va, te = stratified_split(build_cohort(patients, spec), spec)
    vocab = fit_vocabulary(tr)
    return vocab, build_matrix(tr, vocab), build_matrix(te, vocab)


def test_prevalence_within_binomial_band(large):
    cfg, patients, _ = large
    rate = np.mean([is_positive(p) for p in patients])
    sigma = math.sqrt(cfg.prevalence * (1 - cfg.prevalence) / cfg.n_patients)
    assert abs(rate - cfg.prevalence) <= 3 * sigma


def test_timeline_invariants(large):
    cfg, patients, _ = large
    for p in patients:
        assert any(cfg.study_start <= v.date <= cfg.study_end for v in p.visits)
        assert all(v.date <= cfg.study_end for v in p.visits)
        if is_positive(p):
            first = min(v.date for v in p.visits if any(truncate_code(c, "ICD3") == TARGET for c in v.codes))
            assert first > add_months(p.visits[0].date, 27)


def test_planted_codes_recovered_by_logistic_fit(large):
    cfg, patients, truth = large
    vocab, Xtr, _ = model_data(cfg, patients)
    lr = train_logistic(Xtr.X, Xtr.labels)
    planted = {truncate_code(c, "ICD3") for c in truth}
    order = np.argsort(-lr.weights[: vocab.n_codes], kind="stable")[:5]
    top = {vocab.codes[j] for j in order}
    assert len(top & planted) >= 3


def test_same_seed_same_output():
    cfg = GeneratorConfig(n_patients=300, seed=42)
    assert generate_cohort(cfg) == generate_cohort(cfg)
    assert generate_cohort(cfg)[0] != generate_cohort(GeneratorConfig(n_patients=300, seed=43))[0]


def test_patient_streams_do_not_depend_on_cohort_size():
    small, _ = generate_cohort(GeneratorConfig(n_patients=50, seed=5))
    # intercept calibration couples patients, so compare label-independent parts
    big, _ = generate_cohort(GeneratorConfig(n_patients=99, seed=5))
    for a, b in zip(small, big):
        assert (a.birth_year, a.gender) == (b.birth_year, b.gender)


def test_no_signal_gives_chance_auc():
    cfg = GeneratorConfig(n_patients=20000, risk_log_odds=0.0, seed=8)
    patients, truth = generate_cohort(cfg)
    assert set(truth.values()) == {0.0}
    _, Xtr, Xte = model_data(cfg, patients)
    lr = train_logistic(Xtr.X, Xtr.labels)
    gb = train(Xtr.X, Xtr.labels, TrainParams())
    assert abs(roc_auc(lr.predict_proba(Xte.X), Xte.labels) - 0.5) <= 0.03
    assert abs(roc_auc(gb.predict_margin(Xte.X), Xte.labels) - 0.5) <= 0.03


def test_files_round_trip(tmp_path):
    cfg = GeneratorConfig(n_patients=120, seed=2)
    patients, truth = generate_cohort(cfg)
    paths = write_generated(patients, truth, tmp_path)
    assert parse_cohort(paths["patients"], paths["events"]) == patients
    assert read_ground_truth(paths["ground_truth"]) == truth
    again = tmp_path / "again"
    write_generated(*generate_cohort(cfg), again)
    for name in ("patients.csv", "events.csv", "ground_truth.jsonl"):
        assert (again / name).read_bytes() == (tmp_path / name).read_bytes()


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"prevalence": 1.0}, "generator.prevalence"),
        ({"n_risk_codes": 70}, "generator.n_risk_codes"),
        ({"study_start": "2022-01-01"}, "generator.study_end"),
        ({"study_end": "not a date"}, "generator.study_end"),
        ({"target_code": "250 1"}, "generator.target_code"),
    ],
)
def test_config_validation_names_field(kwargs, field):
    with pytest.raises(ConfigError) as err:
        GeneratorConfig(**kwargs)
    assert err.value.field == field
