"""Headline acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line (visible even under
pytest's output capture) before asserting. The ordering, encoding and local
accuracy checks share one 20000-patient cohort and its tuned models.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from firstoccur.cli import EXIT_OK, main
from firstoccur.cohort_builder import CohortSpec, add_months, build_cohort, leaked_positives, stratified_split
from firstoccur.ehr_core import CodeType, MedicalCode, truncate_code
from firstoccur.explain import LocalExplanation, shap_matrix
from firstoccur.feature_builder import Encoding, build_matrix, fit_vocabulary
from firstoccur.gbdt import TrainParams, logloss_grad_hess, train
from firstoccur.greedy_tuner import SearchSpace, greedy_tune
from firstoccur.linear_baseline import train_logistic
from firstoccur.metrics import recall_at_deciles, roc_auc
from firstoccur.synth_cohort import GeneratorConfig, generate_cohort

from oracles import brute_force_shap, finite_difference_grad_hess, pairwise_auc, recall_by_enumeration

ROOT = Path(__file__).resolve().parents[1]
TARGET = MedicalCode(CodeType.ICD, "250")
N_ESTIMATORS_GRID = (100, 200, 300)


@pytest.fixture
def verdict(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return emit


# --------------------------------------------------------------------------
# shared 20000-patient experiment


def _fit(train_data, params, _validation):
    return train(train_data[0], train_data[1], params)


@pytest.fixture(scope="module")
def experiment():
    started = time.perf_counter()
    cfg = GeneratorConfig(n_patients=20000, seed=42)
    patients, _ = generate_cohort(cfg)
    spec = CohortSpec(frozenset([TARGET]), cfg.study_end, split_seed=0)
    examples = build_cohort(patients, spec)
    tr, va, te = stratified_split(examples, spec)
    vocab = fit_vocabulary(tr, "ICD3")
    out = {"patients": patients, "spec": spec, "examples": examples}
    for enc in (Encoding.COUNT, Encoding.BINARY):
        t0 = time.perf_counter()
        Mtr, Mva, Mte = (build_matrix(s, vocab, enc) for s in (tr, va, te))
        space = SearchSpace.default(grids={"n_estimators": N_ESTIMATORS_GRID})
        best, trace = greedy_tune((Mtr.X, Mtr.labels), (Mva.X, Mva.labels), space, _fit)
        tuned = train(Mtr.X, Mtr.labels, best)
        default = train(Mtr.X, Mtr.labels, TrainParams())
        linear = train_logistic(Mtr.X, Mtr.labels)
        out[enc] = {
            "test": Mte,
            "tuned": tuned,
            "trace": trace,
            "space": space,
            "auc": {
                "linear": roc_auc(linear.predict_proba(Mte.X), Mte.labels),
                "default": roc_auc(default.predict_proba(Mte.X), Mte.labels),
                "tuned": roc_auc(tuned.predict_proba(Mte.X), Mte.labels),
            },
            "seconds": time.perf_counter() - t0,
        }
    out["seconds"] = time.perf_counter() - started
    return out


def test_ordering_reproduction(experiment, verdict):
    auc = experiment[Encoding.COUNT]["auc"]
    seconds = experiment[Encoding.COUNT]["seconds"]
    ok = auc["linear"] < auc["default"] < auc["tuned"] and auc["tuned"] - auc["linear"] >= 0.02
    verdict("ordering LR < default < tuned, tuned - LR >= 0.02, <= 10 min", ok and seconds <= 600,
            f"LR {auc['linear']:.4f}, default {auc['default']:.4f}, tuned {auc['tuned']:.4f}, "
            f"gap {auc['tuned'] - auc['linear']:.4f}, {seconds:.0f}s")
    assert seconds <= 600
    assert auc["tuned"] - auc["linear"] >= 0.02
    assert auc["linear"] < auc["default"] < auc["tuned"]


def test_count_vs_binary(experiment, verdict):
    count = experiment[Encoding.COUNT]["auc"]["tuned"]
    binary = experiment[Encoding.BINARY]["auc"]["tuned"]
    note = "" if count >= binary else " (count below binary, within the documented 0.005 band)"
    verdict("count >= binary tuned test AUC", count >= binary - 0.005,
            f"count {count:.4f}, binary {binary:.4f}{note}")
    assert count >= binary - 0.005


def test_shapley_local_accuracy(experiment, verdict):
    run = experiment[Encoding.COUNT]
    Mte = run["test"]
    rng = np.random.default_rng(0)
    rows = np.sort(rng.choice(Mte.X.shape[0], size=1000, replace=False))
    base, phi, margins = shap_matrix(run["tuned"], Mte.X[rows])
    worst = float(np.max(np.abs(base + phi.sum(axis=1) - margins)))
    verdict("Shapley local accuracy <= 1e-6 (1000 test rows)", worst <= 1e-6, f"max gap {worst:.2e}")
    assert worst <= 1e-6


def test_shapley_matches_subset_enumeration(verdict):
    rng = np.random.default_rng(11)
    X = rng.integers(0, 4, size=(400, 10)).astype(float)
    y = ((X[:, 0] * X[:, 1] + X[:, 2] - X[:, 3] + X[:, 7] + rng.normal(size=400)) > 4).astype(int)
    model = train(X, y, TrainParams(n_estimators=5, max_depth=5, min_child_weight=0.3, subsample=0.9,
                                    colsample_bytree=0.9, seed=3))
    rows = X[rng.choice(400, size=100, replace=False)]
    base, phi, _ = shap_matrix(model, rows)
    worst = 0.0
    for i, x in enumerate(rows):
        ref_base, ref = brute_force_shap(model, x)
        worst = max(worst, abs(ref_base - base), float(np.max(np.abs(ref - phi[i]))))
    used = len({int(f) for t in model.trees for f in t.feature if f >= 0})
    verdict("Shapley vs 2^F enumeration <= 1e-9 (10 features, 5 trees, 100 rows)", worst <= 1e-9,
            f"max error {worst:.2e}, {used} features split on")
    assert model.n_features <= 10 and len(model.trees) <= 5
    assert worst <= 1e-9


def _random_scores(rng):
    n = int(rng.integers(2, 120))
    labels = rng.integers(0, 2, size=n)
    labels[rng.integers(n)] = 1
    labels[rng.integers(n)] = 0
    if labels.sum() in (0, n):
        labels[0], labels[-1] = 1, 0
    # coarse grids make ties common
    scores = rng.integers(0, int(rng.choice([3, 10, 1000])), size=n) / 7.0
    return scores, labels


def test_auc_matches_pairwise(verdict):
    rng = np.random.default_rng(2024)
    worst, tied = 0.0, 0
    for _ in range(500):
        scores, labels = _random_scores(rng)
        tied += len(np.unique(scores)) < len(scores)
        worst = max(worst, abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)))
    verdict("ROC-AUC vs pairwise <= 1e-12 (500 sets)", worst <= 1e-12, f"max error {worst:.1e}, {tied} sets with ties")
    assert tied > 100
    assert worst <= 1e-12


def test_recall_matches_enumeration(verdict):
    rng = np.random.default_rng(99)
    mismatches, full = 0, True
    for _ in range(500):
        scores, labels = _random_scores(rng)
        for k in range(1, 11):
            mismatches += recall_at_deciles(scores, labels, k) != recall_by_enumeration(list(scores), list(labels), k)
        full &= recall_at_deciles(scores, labels, 10) == 1.0
    verdict("Recall@K exact vs enumeration, Recall@10 deciles = 1", mismatches == 0 and full,
            f"{mismatches} mismatches over 5000 (set, K) pairs")
    assert mismatches == 0
    assert full


def test_gradient_hessian_finite_differences(verdict):
    rng = np.random.default_rng(5)
    margins = rng.uniform(-10, 10, size=1000)
    labels = rng.integers(0, 2, size=1000)
    worst = 0.0
    for m, y in zip(margins, labels):
        g, h = logloss_grad_hess(m, y)
        fd_g, fd_h = finite_difference_grad_hess(float(m), int(y))
        worst = max(worst, abs(g - fd_g), abs(h - fd_h))
    verdict("gradient/Hessian vs finite differences <= 1e-6 (1000 pairs)", worst <= 1e-6, f"max error {worst:.2e}")
    assert worst <= 1e-6


def _cheap_trainer(rng_seed):
    # deterministic pseudo-AUC per parameter setting; ties are frequent on purpose
    def fit(_train, params, _validation):
        key = hash((rng_seed, tuple(sorted(params.to_dict().items())))) % 7
        return key / 10.0
    return fit


def test_tuner_monotone_and_counts_fits(experiment, verdict):
    traces = [(experiment[e]["trace"], experiment[e]["space"]) for e in (Encoding.COUNT, Encoding.BINARY)]
    for seed in range(20):
        space = SearchSpace.default(grids={"n_estimators": N_ESTIMATORS_GRID})
        _, trace = greedy_tune(None, None, space, _cheap_trainer(seed), scorer=lambda m, _v: m)
        traces.append((trace, space))
    bad = 0
    for trace, space in traces:
        best = [s.best_so_far for s in trace.stages]
        bad += any(b < a for a, b in zip(best, best[1:])) or trace.n_fits != space.total_candidates
    verdict("tuner best-so-far non-decreasing, fits = sum of grid sizes", bad == 0,
            f"{len(traces)} runs, {traces[0][0].n_fits} fits per full run, {bad} violations")
    assert bad == 0


def test_pipeline_determinism(tmp_path, verdict):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["pipeline", "--config", str(ROOT / "configs/demo.json"), "--out", str(d)]) for d in dirs]
    assert codes == [EXIT_OK, EXIT_OK]
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    differing = [str(rel) for rel in files if (dirs[0] / rel).read_bytes() != (dirs[1] / rel).read_bytes()]
    checked = [f for f in files if f.parts[0] in ("models", "reports")]
    verdict("pipeline twice gives byte-identical artifacts", not differing and len(checked) > 0,
            f"{len(files)} files compared ({len(checked)} models/reports), differing: {differing or 'none'}")
    assert sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file()) == files
    assert not differing


def test_no_leaked_positives(experiment, verdict):
    spec = experiment["spec"]
    by_id = {p.patient_id: p for p in experiment["patients"]}
    leaked = set(leaked_positives(experiment["examples"], spec))
    positives = [ex for ex in experiment["examples"] if ex.label == 1]
    # independent scan of the raw histories against each positive's window
    for ex in positives:
        start, end = add_months(ex.index_date, -27), add_months(ex.index_date, -3)
        for v in by_id[ex.patient_id].visits:
            if start <= v.date < end and any(truncate_code(c, "ICD3") == TARGET for c in v.codes):
                leaked.add(ex.patient_id)
    verdict("zero positives with a target code in the window", not leaked,
            f"{len(positives)} positives scanned, {len(leaked)} leaked")
    assert not leaked


def test_sigmoid_of_reported_margin(verdict):
    p = LocalExplanation(3.85, np.zeros(1), 3.85).output_probability
    ok = abs(p - 0.979) <= 0.001
    verdict("margin 3.85 -> probability 0.979 +- 0.001", ok, f"p = {p:.5f}")
    assert math.isclose(p, 0.979, abs_tol=0.001)
