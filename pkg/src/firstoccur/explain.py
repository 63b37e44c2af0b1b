"""Global split importance, exact per-row Shapley attribution and visit flagging.

Local attributions use the path-dependent conditional expectation: for a
feature outside the conditioning set the expectation at a split is the
cover-weighted average of both children. Per leaf, each distinct feature
``k`` on the root-to-leaf path contributes a "zero fraction" ``z_k`` (the
product of the cover ratios along its edges) and a "one fraction" ``o_k``
(1 when the row follows every split on ``k`` towards the leaf). The leaf's
share of ``v(S)`` is then ``value * prod_k (o_k if k in S else z_k)``, and
the Shapley value of ``i`` follows from the coefficients of
``prod_{k != i} (z_k + o_k t)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .cohort_builder import LabeledExample
from .ehr_core import MedicalCode, truncate_code
from .feature_builder import Vocabulary
from .gbdt import BoostedModel, Tree, dense_blocks

FORCE_PLOT_VERSION = 1


def _feature_names(model: BoostedModel, names: Sequence[str] | None = None) -> list[str]:
    if names is not None:
        return list(names)
    if model.vocabulary is not None and model.vocabulary.n_cols == model.n_features:
        return model.vocabulary.feature_names()
    return [f"f{j}" for j in range(model.n_features)]


# --------------------------------------------------------------------------
# global importance


@dataclass
class GlobalImportance:
    feature_names: list[str]
    gain: np.ndarray
    cover: np.ndarray
    frequency: np.ndarray

    def ranked(self, by: str = "gain") -> list[tuple[str, float]]:
        """Features that split at least once, highest ``by`` first (ties by column)."""
        values = {"gain": self.gain, "cover": self.cover, "frequency": self.frequency}[by]
        used = np.flatnonzero(self.frequency > 0)
        order = used[np.lexsort((used, -values[used]))]
        return [(self.feature_names[j], float(values[j])) for j in order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "gain", "cover", "frequency"])
        for name, _ in self.ranked("gain"):
            j = self.feature_names.index(name)
            w.writerow([name, repr(float(self.gain[j])), repr(float(self.cover[j])), int(self.frequency[j])])
        return buf.getvalue()


def global_importance(model: BoostedModel, feature_names: Sequence[str] | None = None) -> GlobalImportance:
    F = model.n_features
    gain = np.zeros(F)
    cover = np.zeros(F)
    freq = np.zeros(F, dtype=np.int64)
    for tree in model.trees:
        inner = tree.feature >= 0
        f = tree.feature[inner]
        np.add.at(gain, f, tree.gain[inner])
        np.add.at(cover, f, tree.cover[inner])
        np.add.at(freq, f, 1)
    return GlobalImportance(_feature_names(model, feature_names), gain, cover, freq)


# --------------------------------------------------------------------------
# Shapley values


@dataclass
class LocalExplanation:
    base_value: float
    contributions: np.ndarray
    output_margin: float
    feature_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def output_probability(self) -> float:
        return float(expit(self.output_margin))

    def accuracy_gap(self) -> float:
        return abs(self.base_value + float(self.contributions.sum()) - self.output_margin)


@dataclass
class _LeafPath:
    value: float
    features: np.ndarray  # distinct features on the path
    zero: np.ndarray  # z_k per distinct feature
    # per distinct feature, the (node, go_left) conditions the row must meet
    conditions: list[list[tuple[int, bool]]]


def _leaf_paths(tree: Tree) -> list[_LeafPath]:
    out = []
    stack: list[tuple[int, list[tuple[int, bool]]]] = [(0, [])]
    while stack:
        node, path = stack.pop()
        f = tree.feature[node]
        if f >= 0:
            stack.append((int(tree.right[node]), path + [(node, False)]))
            stack.append((int(tree.left[node]), path + [(node, True)]))
            continue
        feats: list[int] = []
        zero: list[float] = []
        conds: list[list[tuple[int, bool]]] = []
        for parent, went_left in path:
            k = int(tree.feature[parent])
            child = tree.left[parent] if went_left else tree.right[parent]
            ratio = tree.cover[child] / tree.cover[parent] if tree.cover[parent] > 0 else 0.0
            if k in feats:
                pos = feats.index(k)
                zero[pos] *= ratio
                conds[pos].append((parent, went_left))
            else:
                feats.append(k)
                zero.append(ratio)
                conds.append([(parent, went_left)])
        out.append(_LeafPath(float(tree.value[node]), np.array(feats, dtype=np.int64),
                             np.array(zero), conds))
    return out


def _shapley_weights(d: int) -> np.ndarray:
    """``s! (d-1-s)! / d!`` for ``s = 0..d-1``."""
    return np.array([math.factorial(s) * math.factorial(d - 1 - s) / math.factorial(d)
                     for s in range(d)])


def _tree_shap(tree: Tree, X: np.ndarray, phi: np.ndarray) -> float:
    """Add this tree's attributions for the rows of ``X`` into ``phi``; return its v(empty)."""
    n = X.shape[0]
    expected = 0.0
    for leaf in _leaf_paths(tree):
        d = len(leaf.features)
        expected += leaf.value * float(np.prod(leaf.zero))
        if d == 0 or leaf.value == 0.0:
            continue
        ones = np.ones((n, d))
        for pos, conds in enumerate(leaf.conditions):
            for node, went_left in conds:
                goes_left = X[:, tree.feature[node]] < tree.threshold[node]
                ones[:, pos] *= goes_left == went_left
        weights = _shapley_weights(d)
        for pos in range(d):
            # coefficients of prod_{k != pos} (z_k + o_k t), one row per sample
            poly = np.zeros((n, d))
            poly[:, 0] = 1.0
            for k in range(d):
                if k == pos:
                    continue
                shifted = np.zeros_like(poly)
                shifted[:, 1:] = poly[:, :-1] * ones[:, k : k + 1]
                poly = poly * leaf.zero[k] + shifted
            phi[:, leaf.features[pos]] += (
                leaf.value * (ones[:, pos] - leaf.zero[pos]) * (poly @ weights)
            )
    return expected


def shap_matrix(model: BoostedModel, X) -> tuple[float, np.ndarray, np.ndarray]:
    """Attributions for many rows: ``(base_value, phi[n, F], margins[n])``."""
    blocks = list(dense_blocks(X, model.n_features))
    n = sum(b.shape[0] for _, b in blocks)
    phi = np.zeros((n, model.n_features))
    base = float(model.base_margin)
    for b_index, (start, block) in enumerate(blocks):
        part = phi[start : start + block.shape[0]]
        expected = sum(_tree_shap(tree, block, part) for tree in model.trees)
        if b_index == 0:
            base += expected
    margins = np.asarray(model.predict_margin(X), dtype=np.float64).reshape(-1)
    return base, phi, margins


def shap_values(model: BoostedModel, row) -> LocalExplanation:
    """Exact path-dependent Shapley attribution of one row's margin."""
    x = row.toarray().ravel() if hasattr(row, "toarray") else np.asarray(row, dtype=np.float64).ravel()
    base, phi, margins = shap_matrix(model, x[None, :])
    return LocalExplanation(base, phi[0], float(margins[0]), x)


# --------------------------------------------------------------------------
# force-plot export


def force_plot_export(explanation: LocalExplanation, feature_names: Sequence[str]) -> str:
    """JSON with everything needed to redraw a force plot elsewhere.

    Positive contributions are listed largest first, negative ones most
    negative first; exact zeros are omitted.
    """
    phi = explanation.contributions
    if len(feature_names) != len(phi):
        raise ValueError("feature_names and contributions differ in length")
    values = explanation.feature_values

    def entry(j):
        item = {"index": int(j), "feature": feature_names[j], "contribution": float(phi[j])}
        if values is not None:
            item["value"] = float(values[j])
        return item

    idx = np.arange(len(phi))
    pos = idx[phi > 0]
    neg = idx[phi < 0]
    doc = {
        "version": FORCE_PLOT_VERSION,
        "base_value": float(explanation.base_value),
        "output_margin": float(explanation.output_margin),
        "output_probability": explanation.output_probability,
        "n_features": len(phi),
        "positive": [entry(j) for j in pos[np.lexsort((pos, -phi[pos]))]],
        "negative": [entry(j) for j in neg[np.lexsort((neg, phi[neg]))]],
    }
    return json.dumps(doc, indent=1)


def parse_force_plot(text: str) -> tuple[LocalExplanation, list[str]]:
    """Inverse of :func:`force_plot_export`; unnamed features come back as ``""``."""
    doc = json.loads(text)
    n = int(doc["n_features"])
    phi = np.zeros(n)
    names = [""] * n
    values = None
    for item in doc["positive"] + doc["negative"]:
        j = item["index"]
        phi[j] = item["contribution"]
        names[j] = item["feature"]
        if "value" in item:
            values = np.zeros(n) if values is None else values
            values[j] = item["value"]
    return LocalExplanation(doc["base_value"], phi, doc["output_margin"], values), names


# --------------------------------------------------------------------------
# visit-level attribution


@dataclass(frozen=True)
class VisitFlag:
    date: object
    matched: tuple[MedicalCode, ...]

    @property
    def flagged(self) -> bool:
        return bool(self.matched)


@dataclass
class VisitAttribution:
    top_features: list[tuple[str, float]]
    visits: list[VisitFlag]
    demographics: dict[str, float]

    @property
    def flagged_visits(self) -> list[VisitFlag]:
        return [v for v in self.visits if v.flagged]

    def to_dict(self) -> dict:
        return {
            "top_features": [{"feature": n, "contribution": c} for n, c in self.top_features],
            "demographics": self.demographics,
            "visits": [
                {"date": v.date.isoformat(), "flagged": v.flagged, "matched": [str(c) for c in v.matched]}
                for v in self.visits
            ],
        }


def visit_importance(explanation: LocalExplanation, example: LabeledExample, vocab: Vocabulary,
                     top_m: int) -> VisitAttribution:
    """Rank features by |contribution|, then flag window visits holding a top code.

    Age and gender can occupy top-m slots but never flag a visit; their
    contributions are always reported under ``demographics``.
    """
    if top_m < 1:
        raise ValueError("top_m must be at least 1")
    phi = explanation.contributions
    if len(phi) != vocab.n_cols:
        raise ValueError("explanation does not match the vocabulary")
    names = vocab.feature_names()
    nz = np.flatnonzero(phi != 0)
    top = nz[np.lexsort((nz, -np.abs(phi[nz])))][:top_m]
    top_codes = {vocab.codes[j] for j in top if j < vocab.n_codes}
    visits = []
    for visit in example.window_visits:
        matched = sorted({truncate_code(c, vocab.policy) for c in visit.codes} & top_codes)
        visits.append(VisitFlag(visit.date, tuple(matched)))
    return VisitAttribution(
        top_features=[(names[j], float(phi[j])) for j in top],
        visits=visits,
        demographics={"age": float(phi[vocab.age_col]), "gender": float(phi[vocab.gender_col])},
    )
