"""Command-line driver: ``firstoccur <command> --config <path> [--set k=v]... [--out <dir>]``.

Artifacts land under the output directory::

    cohort/      patients.csv, events.csv, ground_truth.jsonl
    prepared/    labels.csv, vocabulary.json, {train,validation,test}.jsonl
    models/      linear.json, gbdt_default.json, gbdt_tuned.json
    reports/     <model>_<split>.json, <model>_<split>_roc.csv, comparison.{json,txt}
    tuning/      trace.json, trace.txt
    explain/     global_importance.csv, force_<id>.json, visits_<id>.json
    manifest.json

JSON artifacts carry a ``provenance`` block (tool version, config hash,
seeds); every artifact, CSV and JSONL included, is listed in
``manifest.json`` with its SHA-256 and the same provenance.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import re
import statistics
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .cohort_builder import (
    SPLIT_NAMES,
    CohortSpec,
    build_cohort,
    leaked_positives,
    stratified_split,
    write_labels,
)
from .ehr_core import CodeType, MedicalCode, TruncationPolicy, parse_cohort
from .errors import ConfigError, DataError, FirstOccurError
from .explain import force_plot_export, global_importance, shap_values, visit_importance
from .feature_builder import Encoding, FeatureMatrix, Vocabulary, build_matrix, fit_vocabulary, read_matrix, write_matrix
from .gbdt import BoostedModel, TrainParams, deserialize, serialize, train
from .greedy_tuner import DEFAULT_GRIDS, DEFAULT_ORDER, SearchSpace, dumps_trace, greedy_tune
from .linear_baseline import LinearModel, deserialize_linear, train_logistic
from .metrics import dumps_report, evaluate
from .synth_cohort import GeneratorConfig, generate_cohort, write_generated

logger = logging.getLogger("firstoccur")

COMMANDS = ("synth", "prepare", "train", "tune", "evaluate", "explain", "pipeline")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULTS: dict[str, dict[str, Any]] = {
    "generator": GeneratorConfig().to_dict(),
    "cohort": {
        "target_codes": ["ICD/250"],
        "negative_index_date": None,  # defaults to generator.study_end
        "history_months": 24,
        "delta_months": 3,
        "min_history_visits": 2,
        "split_fractions": [0.70, 0.15, 0.15],
        "split_seed": 0,
        "target_policy": "ICD3",
    },
    "features": {"policy": "ICD3", "encoding": "Count", "min_code_count": 1},
    "train": TrainParams().to_dict(),
    "baseline": {"l2_strength": 1.0, "max_iters": 2000, "tolerance": 1e-5},
    "search": {"order": list(DEFAULT_ORDER), "grids": {k: list(v) for k, v in DEFAULT_GRIDS.items()}},
    "evaluation": {"k_deciles": [3], "n_replicates": 3, "model": None, "split": "test"},
    "explain": {"patient_ids": [], "n_patients": 1, "top_m": 5},
    "paths": {"cohort_dir": None, "out": "firstoccur-run"},
}


# --------------------------------------------------------------------------
# configuration


def strip_comments(text: str) -> str:
    """Drop ``//`` and ``/* */`` comments that sit outside JSON strings."""
    token = re.compile(r'"(?:\\.|[^"\\])*"|//[^\n]*|/\*.*?\*/', re.S)
    return token.sub(lambda m: m.group(0) if m.group(0).startswith('"') else "", text)


def _merge(base: dict, update: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError("unknown key", path)
        if isinstance(base[key], dict) and path != "search.grids":
            if not isinstance(value, dict):
                raise ConfigError("expected an object", path)
            out[key] = _merge(base[key], value, path)
        elif path == "search.grids":
            if not isinstance(value, dict):
                raise ConfigError("expected an object", path)
            for name in value:
                if name not in DEFAULT_GRIDS:
                    raise ConfigError("not a tunable parameter", f"{path}.{name}")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def _parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"expected section.key=value, got {item!r}", "--set")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"expected section.key=value, got {item!r}", "--set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def load_config(path: str | Path | None, overrides: Sequence[str] = (), out: str | None = None) -> dict:
    doc: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", "--config") from None
        try:
            doc = json.loads(strip_comments(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "--config") from None
        if not isinstance(doc, dict):
            raise ConfigError("top level must be an object", "--config")
    config = _merge(DEFAULTS, doc, "")
    for item in overrides:
        parts, value = _parse_override(item)
        nested: Any = value
        for p in reversed(parts):
            nested = {p: nested}
        config = _merge(config, nested, "")
    if out is not None:
        config["paths"]["out"] = out
    return config


def config_hash(config: dict) -> str:
    """Digest of everything except output locations."""
    relevant = {k: v for k, v in config.items() if k != "paths"}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_code(text: str, field: str) -> MedicalCode:
    try:
        kind, value = text.split("/", 1)
        return MedicalCode(CodeType(kind), value)
    except (ValueError, AttributeError):
        raise ConfigError(f"expected TYPE/value, got {text!r}", field) from None


def _date(value, field: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except (TypeError, ValueError):
        raise ConfigError(f"not an ISO date: {value!r}", field) from None


def _construct(cls, doc: dict, section: str):
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc), section) from None


class Run:
    """Resolved configuration plus the output directory it writes into."""

    def __init__(self, config: dict):
        self.config = config
        self.hash = config_hash(config)
        self.generator = _construct(GeneratorConfig, config["generator"], "generator")
        c = config["cohort"]
        codes = c["target_codes"]
        if not isinstance(codes, list):
            raise ConfigError("expected a list", "cohort.target_codes")
        neg = c["negative_index_date"]
        try:
            self.cohort = CohortSpec(
                target_codes=frozenset(_parse_code(t, "cohort.target_codes") for t in codes),
                negative_index_date=self.generator.study_end if neg is None
                else _date(neg, "cohort.negative_index_date"),
                history_months=int(c["history_months"]),
                delta_months=int(c["delta_months"]),
                min_history_visits=int(c["min_history_visits"]),
                split_fractions=tuple(c["split_fractions"]),
                split_seed=int(c["split_seed"]),
                target_policy=c["target_policy"],
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "cohort") from None
        f = config["features"]
        try:
            self.policy = TruncationPolicy(f["policy"])
        except ValueError:
            raise ConfigError(f"unknown policy {f['policy']!r}", "features.policy") from None
        try:
            self.encoding = Encoding(f["encoding"])
        except ValueError:
            raise ConfigError(f"unknown encoding {f['encoding']!r}", "features.encoding") from None
        if not isinstance(f["min_code_count"], int) or f["min_code_count"] < 1:
            raise ConfigError("must be a positive integer", "features.min_code_count")
        self.params = TrainParams.from_dict(config["train"])
        s = config["search"]
        grids = s["grids"]
        try:
            self.space = SearchSpace([(name, tuple(grids[name])) for name in s["order"]], self.params)
        except KeyError as exc:
            raise ConfigError(f"no grid for {exc.args[0]}", "search.order") from None
        b = config["baseline"]
        if not (b["l2_strength"] >= 0 and b["max_iters"] >= 1 and b["tolerance"] > 0):
            raise ConfigError("need l2_strength >= 0, max_iters >= 1, tolerance > 0", "baseline")
        e = config["evaluation"]
        if not e["k_deciles"] or not all(isinstance(k, int) and 1 <= k <= 10 for k in e["k_deciles"]):
            raise ConfigError("deciles must be integers in 1..10", "evaluation.k_deciles")
        if not isinstance(e["n_replicates"], int) or e["n_replicates"] < 1:
            raise ConfigError("must be a positive integer", "evaluation.n_replicates")
        if e["split"] not in SPLIT_NAMES:
            raise ConfigError(f"must be one of {SPLIT_NAMES}", "evaluation.split")
        x = config["explain"]
        if not isinstance(x["top_m"], int) or x["top_m"] < 1:
            raise ConfigError("must be a positive integer", "explain.top_m")
        if not isinstance(x["patient_ids"], list):
            raise ConfigError("expected a list", "explain.patient_ids")
        self.out = Path(config["paths"]["out"])
        cohort_dir = config["paths"]["cohort_dir"]
        self.cohort_dir = Path(cohort_dir) if cohort_dir else self.out / "cohort"

    # -- provenance and artifact IO -----------------------------------------

    @property
    def provenance(self) -> dict:
        return {
            "tool_version": __version__,
            "config_hash": self.hash,
            "seed": self.params.seed,
            "generator_seed": self.generator.seed,
            "split_seed": self.cohort.split_seed,
        }

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, *rels: str) -> None:
        manifest_path = self.out / "manifest.json"
        manifest = {}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        for rel in rels:
            digest = hashlib.sha256((self.out / rel).read_bytes()).hexdigest()
            manifest[rel] = {"sha256": digest, **self.provenance}
        manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def write_text(self, rel: str, text: str) -> None:
        self.path(rel).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        self.record(rel)

    def require(self, rel: str | Path) -> Path:
        p = rel if isinstance(rel, Path) else self.out / rel
        if not p.exists():
            raise DataError(f"missing upstream artifact {p}; run the earlier command first")
        return p


# --------------------------------------------------------------------------
# steps


def _read_examples(run: Run):
    patients = parse_cohort(run.require(run.cohort_dir / "patients.csv"),
                            run.require(run.cohort_dir / "events.csv"))
    return build_cohort(patients, run.cohort)


def cmd_synth(run: Run) -> None:
    patients, truth = generate_cohort(run.generator)
    files = write_generated(patients, truth, run.out / "cohort")
    run.record(*(f.relative_to(run.out).as_posix() for f in files.values()))
    print(f"synth: {len(patients)} patients -> {run.out / 'cohort'}")


def _prepare_splits(run: Run, split_seed: int | None = None):
    examples = _read_examples(run)
    spec = run.cohort
    if split_seed is not None:
        spec = dataclasses.replace(spec, split_seed=split_seed)
    leaked = leaked_positives(examples, spec)
    if leaked:
        raise DataError(f"target codes inside observation windows for {len(leaked)} positives")
    splits = dict(zip(SPLIT_NAMES, stratified_split(examples, spec)))
    vocab = fit_vocabulary(splits["train"], run.policy, run.config["features"]["min_code_count"])
    mats = {name: build_matrix(ex, vocab, run.encoding) for name, ex in splits.items()}
    return splits, vocab, mats


def cmd_prepare(run: Run) -> None:
    splits, vocab, mats = _prepare_splits(run)
    write_labels(splits, run.path("prepared/labels.csv"))
    run.record("prepared/labels.csv")
    run.write_text("prepared/vocabulary.json",
                   json.dumps({**vocab.to_dict(), "provenance": run.provenance}, indent=1, sort_keys=True))
    for name, fm in mats.items():
        write_matrix(fm, run.path(f"prepared/{name}.jsonl"))
        run.record(f"prepared/{name}.jsonl")
    sizes = ", ".join(f"{n}={fm.n_rows}" for n, fm in mats.items())
    print(f"prepare: {sizes}; vocabulary {vocab.n_codes} codes")


def _load_split(run: Run, name: str) -> FeatureMatrix:
    return read_matrix(run.require(f"prepared/{name}.jsonl"))


def _load_vocabulary(run: Run) -> Vocabulary:
    doc = json.loads(run.require("prepared/vocabulary.json").read_text(encoding="utf-8"))
    doc.pop("provenance", None)
    return Vocabulary.from_dict(doc)


def _save_model(run: Run, name: str, model) -> None:
    if isinstance(model, BoostedModel):
        model.metadata["provenance"] = run.provenance
        blob = serialize(model)
    else:
        doc = model.to_dict()
        doc["metadata"]["provenance"] = run.provenance
        blob = json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()
    rel = f"models/{name}.json"
    run.path(rel).write_bytes(blob)
    run.record(rel)


def _load_model(run: Run, name_or_path: str):
    p = Path(name_or_path)
    if not p.suffix:
        p = run.out / "models" / f"{name_or_path}.json"
    blob = run.require(p).read_bytes()
    doc = json.loads(blob)
    return deserialize_linear(blob) if doc.get("model_type") == "linear" else deserialize(blob)


def _report(run: Run, name: str, split: str, model, fm: FeatureMatrix):
    check_vocabulary(model, fm)
    report = evaluate(model.predict_proba(fm), fm.labels, run.config["evaluation"]["k_deciles"])
    stem = f"reports/{name}_{split}"
    run.write_text(f"{stem}.json", dumps_report(report, model=name, split=split, provenance=run.provenance))
    report.write_roc_csv(run.path(f"{stem}_roc.csv"))
    run.record(f"{stem}_roc.csv")
    recall = ", ".join(f"Recall@{10 * k} {v:.4f}" for k, v in report.recall_at_deciles.items())
    print(f"{name} on {split}: ROC-AUC {report.roc_auc:.4f}, {recall}")
    return report


def check_vocabulary(model, fm: FeatureMatrix) -> None:
    vocab = model.vocabulary
    if vocab is None:
        return
    if fm.vocabulary_digest and vocab.digest() != fm.vocabulary_digest:
        raise DataError("model vocabulary does not match the prepared features (digest mismatch)")


def _fit_linear(run: Run, fm: FeatureMatrix, vocab: Vocabulary) -> LinearModel:
    b = run.config["baseline"]
    return train_logistic(fm.X, fm.labels, b["l2_strength"], b["max_iters"], b["tolerance"], vocab)


def _fit_gbdt(params: TrainParams, fm: FeatureMatrix, vocab: Vocabulary, valid: FeatureMatrix | None):
    eval_set = None
    if params.early_stopping_rounds is not None and valid is not None:
        eval_set = (valid.X, valid.labels)
    return train(fm.X, fm.labels, params, eval_set=eval_set, vocabulary=vocab)


def cmd_train(run: Run) -> None:
    vocab = _load_vocabulary(run)
    tr, va, te = (_load_split(run, s) for s in SPLIT_NAMES)
    linear = _fit_linear(run, tr, vocab)
    _save_model(run, "linear", linear)
    _report(run, "linear", "test", linear, te)
    model = _fit_gbdt(run.params, tr, vocab, va)
    _save_model(run, "gbdt_default", model)
    _report(run, "gbdt_default", "test", model, te)


def _tuned_params(run: Run) -> TrainParams:
    doc = json.loads(run.require("tuning/trace.json").read_text(encoding="utf-8"))
    return TrainParams.from_dict(doc["best_params"])


def cmd_tune(run: Run) -> None:
    vocab = _load_vocabulary(run)
    tr, va, te = (_load_split(run, s) for s in SPLIT_NAMES)

    def trainer(data, params, validation):
        eval_set = validation if params.early_stopping_rounds is not None else None
        return train(data[0], data[1], params, eval_set=eval_set)

    best, trace = greedy_tune((tr.X, tr.labels), (va.X, va.labels), run.space, trainer)
    run.write_text("tuning/trace.json", dumps_trace(trace, best, provenance=run.provenance))
    run.write_text("tuning/trace.txt", trace.to_table())
    model = _fit_gbdt(best, tr, vocab, va)
    _save_model(run, "gbdt_tuned", model)
    print(f"tune: {trace.n_fits} fits, validation ROC-AUC {trace.stages[-1].best_so_far:.4f}"
          if trace.stages else "tune: empty search space")
    _report(run, "gbdt_tuned", "test", model, te)


def _default_model_name(run: Run) -> str:
    name = run.config["evaluation"]["model"]
    if name:
        return name
    return "gbdt_tuned" if (run.out / "models/gbdt_tuned.json").exists() else "gbdt_default"


def cmd_evaluate(run: Run) -> None:
    name = _default_model_name(run)
    split = run.config["evaluation"]["split"]
    model = _load_model(run, name)
    _report(run, Path(name).stem, split, model, _load_split(run, split))


def cmd_explain(run: Run) -> None:
    name = _default_model_name(run)
    model = _load_model(run, name)
    if not isinstance(model, BoostedModel):
        raise ConfigError("explanations need a boosted-tree model", "evaluation.model")
    vocab = _load_vocabulary(run)
    if model.vocabulary is None or model.vocabulary.digest() != vocab.digest():
        raise DataError("model vocabulary does not match the prepared vocabulary (digest mismatch)")
    names = vocab.feature_names()
    run.write_text("explain/global_importance.csv", global_importance(model, names).to_csv())

    mats = {s: _load_split(run, s) for s in SPLIT_NAMES}
    for fm in mats.values():
        check_vocabulary(model, fm)
    wanted = list(run.config["explain"]["patient_ids"])
    if not wanted:
        # highest-scoring positives of the evaluation split
        te = mats[run.config["evaluation"]["split"]]
        p = model.predict_proba(te)
        pos = np.flatnonzero(te.labels == 1)
        order = pos[np.lexsort((pos, -p[pos]))]
        wanted = [te.patient_ids[i] for i in order[: run.config["explain"]["n_patients"]]]
    examples = {ex.patient_id: ex for ex in _read_examples(run)}
    where = {pid: (fm, i) for fm in mats.values() for i, pid in enumerate(fm.patient_ids)}
    for pid in wanted:
        if pid not in where or pid not in examples:
            raise DataError(f"patient {pid!r} is not in the prepared cohort")
        fm, i = where[pid]
        expl = shap_values(model, fm.X[i])
        force = json.loads(force_plot_export(expl, names))
        force.update(patient_id=pid, label=int(fm.labels[i]), provenance=run.provenance)
        run.write_text(f"explain/force_{pid}.json", json.dumps(force, indent=1))
        visits = visit_importance(expl, examples[pid], vocab, run.config["explain"]["top_m"])
        run.write_text(f"explain/visits_{pid}.json", json.dumps(
            {"patient_id": pid, **visits.to_dict(), "provenance": run.provenance}, indent=1))
        print(f"explain {pid}: margin {expl.base_value:.3f} -> {expl.output_margin:.3f} "
              f"(p={expl.output_probability:.3f}), {len(visits.flagged_visits)} visits flagged")


def _mean_sd(values: list[float]) -> tuple[float, float]:
    return statistics.fmean(values), statistics.stdev(values) if len(values) > 1 else 0.0


def cmd_compare(run: Run) -> None:
    """Seed replicates: re-split and re-fit the baseline, default and tuned models."""
    tuned = _tuned_params(run)
    n_rep = run.config["evaluation"]["n_replicates"]
    ks = run.config["evaluation"]["k_deciles"]
    rows: dict[str, dict[str, list[float]]] = {}
    for r in range(n_rep):
        splits, vocab, mats = _prepare_splits(run, run.cohort.split_seed + r)
        tr, va, te = (mats[s] for s in SPLIT_NAMES)
        fits = {
            "linear": _fit_linear(run, tr, vocab),
            "gbdt_default": _fit_gbdt(run.params.replace(seed=run.params.seed + r), tr, vocab, va),
            "gbdt_tuned": _fit_gbdt(tuned.replace(seed=tuned.seed + r), tr, vocab, va),
        }
        for name, model in fits.items():
            rep = evaluate(model.predict_proba(te), te.labels, ks)
            row = rows.setdefault(name, {})
            row.setdefault("roc_auc", []).append(rep.roc_auc)
            for k, v in rep.recall_at_deciles.items():
                row.setdefault(f"recall_at_{10 * k}", []).append(v)
    summary = {name: {m: dict(zip(("mean", "stdev"), _mean_sd(v)), values=v) for m, v in row.items()}
               for name, row in rows.items()}
    run.write_text("reports/comparison.json", json.dumps(
        {"n_replicates": n_rep, "methods": summary, "provenance": run.provenance}, indent=1, sort_keys=True))
    metrics = list(next(iter(rows.values())))
    lines = [f"{'method':<14}" + "".join(f"{m:>24}" for m in metrics)]
    for name, row in summary.items():
        cells = "".join(f"{row[m]['mean']:>14.4f} ± {row[m]['stdev']:.4f}" for m in metrics)
        lines.append(f"{name:<14}{cells}")
    table = "\n".join(lines)
    run.write_text("reports/comparison.txt", table)
    print(table)


def cmd_pipeline(run: Run) -> None:
    if run.config["paths"]["cohort_dir"] is None:
        cmd_synth(run)
    for step in (cmd_prepare, cmd_train, cmd_tune, cmd_evaluate, cmd_explain, cmd_compare):
        step(run)


HANDLERS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firstoccur", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config (comments allowed)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                        help="override a config value, e.g. train.max_depth=4")
    parser.add_argument("--out", help="output directory (overrides paths.out)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_command(command: str, config_path=None, overrides: Sequence[str] = (), out=None) -> int:
    try:
        run = Run(load_config(config_path, overrides, out))
        HANDLERS[command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FirstOccurError, Exception) as exc:  # noqa: BLE001 - mapped to an exit code
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run_command(args.command, args.config, args.overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())
