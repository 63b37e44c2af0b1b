"""Regularized second-order gradient-boosted trees for binary classification.

Split finding is exact greedy: every midpoint between consecutive distinct
values present at a node is a candidate. Internally each feature's distinct
values are ranked once, so per-node statistics become a lossless histogram
over those ranks; only stored (non-zero) entries of the sparse input are
touched, and the zero bin is recovered by subtraction from the node totals.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.special import expit

from .errors import ConfigError, DataError, ModelFormatError
from .feature_builder import FeatureMatrix, Vocabulary
from .metrics import roc_auc

FORMAT_VERSION = 1
HESSIAN_FLOOR = 1e-16
# rows per dense block during prediction is capped by this many cells
_DENSE_BLOCK_CELLS = 1 << 22


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.1
    n_estimators: int = 100
    max_depth: int = 3
    min_child_weight: float = 1.0
    gamma: float = 0.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    seed: int = 0
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        for name in ("n_estimators", "max_depth", "seed"):
            value = getattr(self, name)
            if isinstance(value, float) and value.is_integer():
                object.__setattr__(self, name, int(value))
            elif not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f"expected an integer, got {value!r}", f"train.{name}")
            else:
                object.__setattr__(self, name, int(value))
        for name in ("learning_rate", "min_child_weight", "gamma", "reg_alpha", "reg_lambda",
                     "subsample", "colsample_bytree"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
                raise ConfigError(f"expected a number, got {value!r}", f"train.{name}")
            object.__setattr__(self, name, float(value))
        checks = [
            ("learning_rate", self.learning_rate > 0),
            ("n_estimators", self.n_estimators >= 0),
            ("max_depth", self.max_depth >= 1),
            ("min_child_weight", self.min_child_weight >= 0),
            ("gamma", self.gamma >= 0),
            ("reg_alpha", self.reg_alpha >= 0),
            ("reg_lambda", self.reg_lambda >= 0),
            ("subsample", 0 < self.subsample <= 1),
            ("colsample_bytree", 0 < self.colsample_bytree <= 1),
        ]
        for name, ok in checks:
            if not ok or not math.isfinite(getattr(self, name)):
                raise ConfigError(f"out of range: {getattr(self, name)!r}", f"train.{name}")
        esr = self.early_stopping_rounds
        if esr is not None:
            if isinstance(esr, bool) or int(esr) != esr or esr < 1:
                raise ConfigError("must be a positive integer or null", "train.early_stopping_rounds")
            object.__setattr__(self, "early_stopping_rounds", int(esr))

    def replace(self, **changes) -> "TrainParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "train")
        return cls(**doc)


# --- objective and closed forms -------------------------------------------


def logloss_grad_hess(margin, label):
    """Gradient and (floored) hessian of the logistic loss w.r.t. the margin."""
    p = expit(np.asarray(margin, dtype=np.float64))
    g = p - label
    h = np.maximum(p * (1.0 - p), HESSIAN_FLOOR)
    if np.ndim(g) == 0:
        return float(g), float(h)
    return g, h


def logloss(margin, label) -> float:
    """Mean binary cross-entropy computed from margins."""
    m = np.asarray(margin, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    # log(1 + e^m) - y*m, stable for large |m|
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def _soft_threshold(G, alpha):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _score(G, H, params: TrainParams):
    t = _soft_threshold(G, params.reg_alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = H + params.reg_lambda
        return np.where(denom > 0, t * t / np.where(denom > 0, denom, 1.0), 0.0)


def leaf_weight(G: float, H: float, params: TrainParams) -> float:
    denom = H + params.reg_lambda
    if denom <= 0:
        return 0.0
    # + 0.0 turns a negative zero into a plain zero
    return float(-_soft_threshold(G, params.reg_alpha) / denom) + 0.0


def split_gain(G_L: float, H_L: float, G_R: float, H_R: float, params: TrainParams) -> float:
    """Loss reduction of a split, net of the ``gamma`` complexity charge."""
    total = _score(G_L + G_R, H_L + H_R, params)
    return float(0.5 * (_score(G_L, H_L, params) + _score(G_R, H_R, params) - total) - params.gamma)


def split_admissible(gain: float, H_L: float, H_R: float, params: TrainParams) -> bool:
    return gain > 0 and H_L >= params.min_child_weight and H_R >= params.min_child_weight


# --- trees ----------------------------------------------------------------


@dataclass
class Tree:
    """Index-linked binary tree; ``feature[i] == -1`` marks a leaf.

    A row goes left at node ``i`` iff ``x[feature[i]] < threshold[i]``.
    Leaf ``value`` already includes the learning rate.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray
    max_depth: int = field(init=False)

    def __post_init__(self):
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):  # preorder: parents precede children
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        self.max_depth = int(depth.max())

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of the dense block ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth):
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r = rows[inner]
            n = node[inner]
            go_left = X[r, feat[inner]] < self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_nodes(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf": float(self.value[i]), "cover": float(self.cover[i])})
            else:
                nodes.append({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "cover": float(self.cover[i]),
                    "gain": float(self.gain[i]),
                })
        return nodes

    @classmethod
    def from_nodes(cls, nodes: list, path: str, n_features: int) -> "Tree":
        if not isinstance(nodes, list) or not nodes:
            raise ModelFormatError("expected a non-empty node list", path)
        n = len(nodes)
        arrays = {k: np.zeros(n) for k in ("threshold", "value", "cover", "gain")}
        feature = np.full(n, -1, dtype=np.int64)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        for i, node in enumerate(nodes):
            p = f"{path}[{i}]"
            if not isinstance(node, dict):
                raise ModelFormatError("expected an object", p)
            arrays["cover"][i] = _number(node, "cover", p)
            if "leaf" in node:
                arrays["value"][i] = _number(node, "leaf", p)
                continue
            f = _integer(node, "feature", p)
            if not 0 <= f < n_features:
                raise ModelFormatError(f"feature {f} out of range", f"{p}.feature")
            feature[i] = f
            arrays["threshold"][i] = _number(node, "threshold", p)
            arrays["gain"][i] = _number(node, "gain", p)
            for side, arr in (("left", left), ("right", right)):
                c = _integer(node, side, p)
                if not i < c < n:
                    raise ModelFormatError(f"child index {c} out of range", f"{p}.{side}")
                arr[i] = c
        return cls(feature, arrays["threshold"], left, right, arrays["value"], arrays["cover"],
                   arrays["gain"])


def _number(doc: dict, key: str, path: str) -> float:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ModelFormatError("expected a finite number", f"{path}.{key}")
    return float(v)


def _integer(doc: dict, key: str, path: str) -> int:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelFormatError("expected an integer", f"{path}.{key}")
    return v


def _as_csr(X) -> sp.csr_matrix:
    if isinstance(X, FeatureMatrix):
        X = X.X
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=np.float64)
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return sp.csr_matrix(arr)


def dense_blocks(X, n_cols: int):
    """Yield ``(start, dense_block)`` pairs covering ``X`` row-wise."""
    if isinstance(X, FeatureMatrix):
        X = X.X
    if not sp.issparse(X):
        arr = np.asarray(X, dtype=np.float64)
        yield 0, arr[None, :] if arr.ndim == 1 else arr
        return
    X = sp.csr_matrix(X)
    step = max(1, _DENSE_BLOCK_CELLS // max(n_cols, 1))
    for start in range(0, X.shape[0], step):
        yield start, X[start : start + step].toarray()


@dataclass
class BoostedModel:
    base_margin: float
    trees: list[Tree]
    params: TrainParams
    n_features: int
    vocabulary: Vocabulary | None = None
    metadata: dict = field(default_factory=dict)

    def predict_margin(self, X) -> np.ndarray | float:
        single = not isinstance(X, FeatureMatrix) and not sp.issparse(X) and np.ndim(X) == 1
        n_rows = 1 if single else (X.n_rows if isinstance(X, FeatureMatrix) else X.shape[0])
        out = np.full(n_rows, self.base_margin)
        for start, block in dense_blocks(X, self.n_features):
            if block.shape[1] != self.n_features:
                raise DataError(f"expected {self.n_features} columns, got {block.shape[1]}")
            acc = out[start : start + block.shape[0]]
            for tree in self.trees:
                acc += tree.predict(block)
        return float(out[0]) if single else out

    def predict_proba(self, X) -> np.ndarray | float:
        m = self.predict_margin(X)
        return float(expit(m)) if np.ndim(m) == 0 else expit(m)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_type": "gbdt",
            "base_margin": float(self.base_margin),
            "n_features": int(self.n_features),
            "params": self.params.to_dict(),
            "vocabulary": None if self.vocabulary is None else self.vocabulary.to_dict(),
            "trees": [t.to_nodes() for t in self.trees],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: Any) -> "BoostedModel":
        if not isinstance(doc, dict):
            raise ModelFormatError("expected an object")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported format_version {doc.get('format_version')!r}", "$.format_version"
            )
        if doc.get("model_type", "gbdt") != "gbdt":
            raise ModelFormatError("not a boosted-tree model", "$.model_type")
        base = _number(doc, "base_margin", "$")
        n_features = _integer(doc, "n_features", "$")
        try:
            params = TrainParams.from_dict(doc.get("params") or {})
        except (ConfigError, TypeError) as exc:
            raise ModelFormatError(str(exc), "$.params") from None
        vocab = doc.get("vocabulary")
        vocab = None if vocab is None else Vocabulary.from_dict(vocab)
        trees_doc = doc.get("trees")
        if not isinstance(trees_doc, list):
            raise ModelFormatError("expected a list", "$.trees")
        trees = [Tree.from_nodes(t, f"$.trees[{i}]", n_features) for i, t in enumerate(trees_doc)]
        metadata = doc.get("metadata") or {}
        return cls(base, trees, params, n_features, vocab, metadata)


def serialize(model) -> bytes:
    return json.dumps(model.to_dict(), separators=(",", ":"), sort_keys=True).encode("utf-8")


def deserialize(blob: bytes | str) -> BoostedModel:
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON ({exc.msg})") from None
    return BoostedModel.from_dict(doc)


def predict_margin(model: BoostedModel, row) -> float:
    return model.predict_margin(row)


def predict_proba(model: BoostedModel, row) -> float:
    return model.predict_proba(row)


# --- training ---------------------------------------------------------------


class _Binned:
    """Ranks of distinct values for the stored entries of ``X``, per feature.

    Feature ``f`` owns the global bins ``offsets[f]:offsets[f + 1]``, one per
    distinct value (0 included) in ascending order.
    """

    def __init__(self, X: sp.csr_matrix):
        Xc = sp.csc_matrix(X, dtype=np.float64, copy=True)
        Xc.eliminate_zeros()
        Xc.sort_indices()
        self.n_rows, self.n_features = Xc.shape
        self.indptr = Xc.indptr.astype(np.int64)
        self.rows = Xc.indices.astype(np.int64)
        self.data = Xc.data
        self.feat = np.repeat(np.arange(self.n_features, dtype=np.int64), np.diff(self.indptr))
        self.bin = np.empty(len(self.data), dtype=np.int64)
        self.zero_bin = np.empty(self.n_features, dtype=np.int64)
        offsets = [0]
        values = []
        for f in range(self.n_features):
            lo, hi = self.indptr[f], self.indptr[f + 1]
            u = np.unique(np.append(self.data[lo:hi], 0.0))
            self.bin[lo:hi] = offsets[-1] + np.searchsorted(u, self.data[lo:hi])
            self.zero_bin[f] = offsets[-1] + np.searchsorted(u, 0.0)
            offsets.append(offsets[-1] + len(u))
            values.append(u)
        self.offsets = np.array(offsets, dtype=np.int64)
        self.bin_values = np.concatenate(values)
        self.n_bins = int(self.offsets[-1])

    def column(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[f], self.indptr[f + 1]
        return self.rows[lo:hi], self.data[lo:hi]


@njit(cache=True)
def _histograms(rows, feat, bins, row_slot, col_used, g, h, n_slots, n_bins):
    hG = np.zeros((n_slots, n_bins))
    hH = np.zeros((n_slots, n_bins))
    hC = np.zeros((n_slots, n_bins))
    for e in range(rows.shape[0]):
        r = rows[e]
        s = row_slot[r]
        if s < 0 or not col_used[feat[e]]:
            continue
        b = bins[e]
        hG[s, b] += g[r]
        hH[s, b] += h[r]
        hC[s, b] += 1.0
    return hG, hH, hC


@njit(cache=True)
def _score_nb(G, H, lam, alpha):
    if G > alpha:
        t = G - alpha
    elif G < -alpha:
        t = G + alpha
    else:
        t = 0.0
    d = H + lam
    if d <= 0.0:
        return 0.0
    return t * t / d


@njit(cache=True)
def _best_splits(hG, hH, hC, Gt, Ht, Ct, cols, offsets, zero_bin, lam, alpha, gamma, mcw):
    """Best admissible split per node as (gain, column, left bin, next bin).

    Candidates are scanned in (feature, threshold) order and only a strictly
    larger gain replaces the incumbent, so ties go to the lower feature index
    and then the lower threshold. Gain is -inf where no split is admissible.
    """
    n_slots = Gt.shape[0]
    best_gain = np.full(n_slots, -np.inf)
    best_col = np.full(n_slots, -1)
    best_bin = np.full(n_slots, -1)
    best_next = np.full(n_slots, -1)
    for a in range(n_slots):
        parent = _score_nb(Gt[a], Ht[a], lam, alpha)
        for c in cols:
            lo = offsets[c]
            hi = offsets[c + 1]
            z = zero_bin[c]
            sg = 0.0
            sh = 0.0
            sc = 0.0
            for b in range(lo, hi):
                if b != z:
                    sg += hG[a, b]
                    sh += hH[a, b]
                    sc += hC[a, b]
            # zero-valued rows are never scattered; recover them from the totals
            hG[a, z] = Gt[a] - sg
            hH[a, z] = Ht[a] - sh
            hC[a, z] = Ct[a] - sc
            gl = 0.0
            hl = 0.0
            prev = -1
            for b in range(lo, hi):
                if hC[a, b] <= 0.0:
                    continue
                if prev >= 0:
                    gr = Gt[a] - gl
                    hr = Ht[a] - hl
                    if hl >= mcw and hr >= mcw:
                        gain = 0.5 * (_score_nb(gl, hl, lam, alpha) + _score_nb(gr, hr, lam, alpha)
                                      - parent) - gamma
                        if gain > 0.0 and gain > best_gain[a]:
                            best_gain[a] = gain
                            best_col[a] = c
                            best_bin[a] = prev
                            best_next[a] = b
                gl += hG[a, b]
                hl += hH[a, b]
                prev = b
    return best_gain, best_col, best_bin, best_next


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover, self.gain = [], [], []

    def add(self) -> int:
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1),
                       (self.value, 0.0), (self.cover, 0.0), (self.gain, 0.0)):
            lst.append(v)
        return len(self.feature) - 1

    def finish(self) -> tuple[Tree, np.ndarray]:
        """Recompute covers bottom-up and renumber nodes in preorder.

        Returns the tree and the old->new node id map.
        """
        feature = np.array(self.feature, dtype=np.int64)
        left = np.array(self.left, dtype=np.int64)
        right = np.array(self.right, dtype=np.int64)
        cover = np.array(self.cover, dtype=np.float64)
        order = []
        stack = [0]
        while stack:
            i = stack.pop()
            order.append(i)
            if feature[i] >= 0:
                stack.append(right[i])
                stack.append(left[i])
        for i in reversed(order):
            if feature[i] >= 0:
                cover[i] = cover[left[i]] + cover[right[i]]
        new_id = np.empty(len(order), dtype=np.int64)
        new_id[order] = np.arange(len(order))
        order = np.array(order)
        is_leaf = feature[order] < 0
        tree = Tree(
            feature=feature[order],
            threshold=np.where(is_leaf, 0.0, np.array(self.threshold)[order]),
            left=np.where(is_leaf, -1, new_id[np.where(is_leaf, 0, left[order])]),
            right=np.where(is_leaf, -1, new_id[np.where(is_leaf, 0, right[order])]),
            value=np.where(is_leaf, np.array(self.value)[order], 0.0),
            cover=cover[order],
            gain=np.where(is_leaf, 0.0, np.array(self.gain)[order]),
        )
        return tree, new_id


def _grow_tree(data: _Binned, g: np.ndarray, h: np.ndarray, sampled: np.ndarray,
               cols: np.ndarray, params: TrainParams) -> tuple[Tree, np.ndarray]:
    """Grow one tree level by level; returns it with every training row's leaf.

    Nodes never interact, so growing breadth-first yields the same tree as
    depth-first recursion. Unsampled rows carry no gradient weight but are
    still routed, which gives their leaf for the margin update.
    """
    n = data.n_rows
    w = sampled.astype(np.float64)
    gs, hs = g * w, h * w
    col_used = np.zeros(data.n_features, dtype=np.bool_)
    col_used[cols] = True

    builder = _TreeBuilder()
    builder.add()
    row_node = np.zeros(n, dtype=np.int64)
    active = [0]
    for depth in range(params.max_depth + 1):
        if not active:
            break
        A = len(active)
        node_slot = np.full(len(builder.feature), -1, dtype=np.int64)
        node_slot[active] = np.arange(A)
        r_slot = node_slot[row_node]
        live = (r_slot >= 0) & sampled
        Gt = np.bincount(r_slot[live], weights=gs[live], minlength=A)
        Ht = np.bincount(r_slot[live], weights=hs[live], minlength=A)
        Ct = np.bincount(r_slot[live], minlength=A).astype(np.float64)
        for a, node in enumerate(active):
            builder.value[node] = params.learning_rate * leaf_weight(Gt[a], Ht[a], params)
            builder.cover[node] = Ht[a]
        if depth == params.max_depth:
            break

        hG, hH, hC = _histograms(data.rows, data.feat, data.bin, np.where(live, r_slot, -1),
                                 col_used, gs, hs, A, data.n_bins)
        best_gain, best_col, best_bin, best_next = _best_splits(
            hG, hH, hC, Gt, Ht, Ct, cols, data.offsets, data.zero_bin, params.reg_lambda,
            params.reg_alpha, params.gamma, params.min_child_weight)

        order = np.argsort(r_slot, kind="stable")
        bounds = np.searchsorted(r_slot[order], np.arange(A + 1))
        next_active = []
        for a, node in enumerate(active):
            if not np.isfinite(best_gain[a]):
                continue
            f = int(best_col[a])
            thr = 0.5 * (data.bin_values[best_bin[a]] + data.bin_values[best_next[a]])
            lchild, rchild = builder.add(), builder.add()
            builder.feature[node] = f
            builder.threshold[node] = float(thr)
            builder.gain[node] = float(best_gain[a])
            builder.left[node], builder.right[node] = lchild, rchild
            # rows with an implicit zero first, then the stored entries of f
            col_rows, col_vals = data.column(f)
            here = row_node[col_rows] == node
            row_node[order[bounds[a] : bounds[a + 1]]] = lchild if 0.0 < thr else rchild
            row_node[col_rows[here]] = np.where(col_vals[here] < thr, lchild, rchild)
            next_active += [lchild, rchild]
        active = next_active

    tree, new_id = builder.finish()
    return tree, new_id[row_node]


def train(X, labels, params: TrainParams | None = None, eval_set=None,
          vocabulary: Vocabulary | None = None) -> BoostedModel:
    """Fit a boosted ensemble on the rows of ``X`` (sparse or dense).

    With ``eval_set=(X_val, y_val)`` the validation ROC-AUC is recorded per
    round; if ``params.early_stopping_rounds`` is set, training stops once
    it has not improved for that many rounds and the best prefix is kept.
    """
    params = params or TrainParams()
    Xs = _as_csr(X)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if Xs.shape[0] == 0:
        raise DataError("training matrix is empty")
    if len(y) != Xs.shape[0]:
        raise DataError("labels are not aligned with the training matrix")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("training labels contain a single class")
    n, n_features = Xs.shape
    base = math.log(n_pos / n_neg)
    margin = np.full(n, base)

    eval_X = eval_y = eval_margin = None
    if eval_set is not None:
        ex, ey = eval_set
        eval_X = list(dense_blocks(ex, n_features))
        eval_y = np.asarray(ey).ravel()
        eval_margin = np.full(len(eval_y), base)

    rng = np.random.default_rng(params.seed)
    data = _Binned(Xs) if params.n_estimators > 0 else None
    n_cols = max(1, math.ceil(params.colsample_bytree * n_features - 1e-9))
    trees: list[Tree] = []
    curve: list[float] = []
    best_auc, best_round = -np.inf, -1
    for rnd in range(params.n_estimators):
        sampled = rng.random(n) < params.subsample
        cols = np.sort(rng.choice(n_features, size=n_cols, replace=False))
        g, h = logloss_grad_hess(margin, y)
        tree, leaf = _grow_tree(data, g, h, sampled, cols, params)
        trees.append(tree)
        margin += tree.value[leaf]
        if eval_X is not None:
            for start, block in eval_X:
                eval_margin[start : start + block.shape[0]] += tree.predict(block)
            auc = roc_auc(eval_margin, eval_y)
            curve.append(auc)
            if auc > best_auc:
                best_auc, best_round = auc, rnd
            elif (params.early_stopping_rounds is not None
                  and rnd - best_round >= params.early_stopping_rounds):
                break
    rounds = len(trees)
    best_iteration = None
    if eval_X is not None and params.early_stopping_rounds is not None and trees:
        trees = trees[: best_round + 1]
        best_iteration = best_round + 1
    metadata = {"rounds_trained": rounds, "best_iteration": best_iteration,
                "validation_auc_curve": curve}
    return BoostedModel(base, trees, params, n_features, vocabulary, metadata)
