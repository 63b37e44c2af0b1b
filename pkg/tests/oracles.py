"""Slow reference implementations used to cross-check the package."""

from __future__ import annotations

import itertools
import math

import numpy as np

from firstoccur.gbdt import BoostedModel, Tree


def pairwise_auc(scores, labels) -> float:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def recall_by_enumeration(scores, labels, k: int) -> float:
    n = len(scores)
    ranked = sorted(range(n), key=lambda i: (-scores[i], i))
    top = math.ceil(k * n / 10)
    return sum(labels[i] for i in ranked[:top]) / sum(labels)


def _expected(tree: Tree, x: np.ndarray, known: set[int], node: int = 0) -> float:
    f = tree.feature[node]
    if f < 0:
        return float(tree.value[node])
    left, right = tree.left[node], tree.right[node]
    if f in known:
        return _expected(tree, x, known, left if x[f] < tree.threshold[node] else right)
    c = tree.cover[node]
    return (tree.cover[left] * _expected(tree, x, known, left)
            + tree.cover[right] * _expected(tree, x, known, right)) / c


def conditional_margin(model: BoostedModel, x: np.ndarray, known: set[int]) -> float:
    return model.base_margin + sum(_expected(t, x, known) for t in model.trees)


def brute_force_shap(model: BoostedModel, x) -> tuple[float, np.ndarray]:
    """Shapley values by enumerating every subset of features."""
    x = np.asarray(x, dtype=float)
    F = model.n_features
    values = {}
    for r in range(F + 1):
        for S in itertools.combinations(range(F), r):
            values[S] = conditional_margin(model, x, set(S))
    phi = np.zeros(F)
    fact = [math.factorial(k) for k in range(F + 1)]
    for i in range(F):
        others = [j for j in range(F) if j != i]
        for r in range(F):
            w = fact[r] * fact[F - 1 - r] / fact[F]
            for S in itertools.combinations(others, r):
                with_i = tuple(sorted(S + (i,)))
                phi[i] += w * (values[with_i] - values[S])
    return values[()], phi


def _reference_node(X, g, h, sampled, rows, cols, params, depth, out):
    """Depth-first exact greedy growth; appends preorder node dicts to ``out``."""
    from firstoccur.gbdt import leaf_weight, split_admissible, split_gain

    live = rows[sampled[rows]]
    G, H = float(g[live].sum()), float(h[live].sum())
    me = len(out)
    out.append(None)
    best = None
    if depth < params.max_depth:
        for f in cols:
            values = np.unique(X[live, f])
            for a, b in zip(values[:-1], values[1:]):
                thr = 0.5 * (a + b)
                left = live[X[live, f] < thr]
                right = live[X[live, f] >= thr]
                GL, HL = float(g[left].sum()), float(h[left].sum())
                GR, HR = float(g[right].sum()), float(h[right].sum())
                gain = split_gain(GL, HL, GR, HR, params)
                if split_admissible(gain, HL, HR, params) and (best is None or gain > best[0]):
                    best = (gain, int(f), float(thr))
    if best is None:
        out[me] = {"leaf": params.learning_rate * leaf_weight(G, H, params), "cover": H}
        return
    gain, f, thr = best
    go_left = X[rows, f] < thr
    node = {"feature": f, "threshold": thr, "gain": gain, "cover": H}
    out[me] = node
    node["left"] = len(out)
    _reference_node(X, g, h, sampled, rows[go_left], cols, params, depth + 1, out)
    node["right"] = len(out)
    _reference_node(X, g, h, sampled, rows[~go_left], cols, params, depth + 1, out)


def _reference_predict(nodes, x):
    i = 0
    while "leaf" not in nodes[i]:
        i = nodes[i]["left"] if x[nodes[i]["feature"]] < nodes[i]["threshold"] else nodes[i]["right"]
    return nodes[i]["leaf"]


def reference_train(X, y, params):
    """Plain exact-greedy boosting with the same random draws as the package trainer.

    Returns ``(base_margin, [tree node lists])``.
    """
    from firstoccur.gbdt import logloss_grad_hess

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, F = X.shape
    base = math.log(y.sum() / (n - y.sum()))
    margin = np.full(n, base)
    rng = np.random.default_rng(params.seed)
    n_cols = max(1, math.ceil(params.colsample_bytree * F - 1e-9))
    trees = []
    for _ in range(params.n_estimators):
        sampled = rng.random(n) < params.subsample
        cols = np.sort(rng.choice(F, size=n_cols, replace=False))
        g, h = logloss_grad_hess(margin, y)
        nodes = []
        _reference_node(X, g, h, sampled, np.arange(n), cols, params, 0, nodes)
        trees.append(nodes)
        margin += np.array([_reference_predict(nodes, x) for x in X])
    return base, trees


def logloss_decimal(margin, label, prec: int = 60):
    """Logistic loss ``log(1 + e^m) - y m`` in high-precision decimal arithmetic."""
    from decimal import Decimal, localcontext

    with localcontext() as ctx:
        ctx.prec = prec
        m = Decimal(margin)
        return (Decimal(1) + m.exp()).ln() - Decimal(int(label)) * m


def finite_difference_grad_hess(margin: float, label: int, step: float = 1e-6):
    """Central first and second differences of the loss, evaluated exactly enough
    that the only error left is the truncation error of the stencil."""
    from decimal import Decimal, localcontext

    with localcontext() as ctx:
        ctx.prec = 60
        e = Decimal(step)
        m = Decimal(margin)
        up, mid, down = (logloss_decimal(m + e, label), logloss_decimal(m, label),
                         logloss_decimal(m - e, label))
        g = (up - down) / (2 * e)
        h = (up - 2 * mid + down) / (e * e)
        return float(g), float(h)


def grid_minimize_1d(f, lo: float, hi: float, step: float) -> float:
    grid = np.arange(lo, hi + step / 2, step)
    return float(grid[np.argmin([f(w) for w in grid])])


def zoom_grid_minimize(f, center, radius: float, points: int = 21, rounds: int = 7):
    """Coarse-to-fine grid search: each round shrinks the box around the best point."""
    center = np.asarray(center, dtype=float)
    for _ in range(rounds):
        axes = [np.linspace(c - radius, c + radius, points) for c in center]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(center))
        values = np.array([f(p) for p in mesh])
        center = mesh[np.argmin(values)]
        radius *= 4.0 / (points - 1)
    return center
