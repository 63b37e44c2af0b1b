"""L2-regularized logistic regression fit by gradient descent with backtracking."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DataError, ModelFormatError
from .feature_builder import FeatureMatrix, Vocabulary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _dense(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        X = X.X
    if sp.issparse(X):
        return X.toarray()
    arr = np.asarray(X, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    l2_strength: float
    mean: np.ndarray
    scale: np.ndarray
    vocabulary: Vocabulary | None = None
    converged: bool = False
    n_iter: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def standardize(self, X) -> np.ndarray:
        return (_dense(X) - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        return self.standardize(X) @ self.weights + self.bias

    def predict_proba(self, X):
        single = not isinstance(X, FeatureMatrix) and not sp.issparse(X) and np.ndim(X) == 1
        p = expit(self.decision_function(X))
        return float(p[0]) if single else p

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_type": "linear",
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "l2_strength": self.l2_strength,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "vocabulary": None if self.vocabulary is None else self.vocabulary.to_dict(),
            "metadata": {"converged": self.converged, "n_iter": self.n_iter},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearModel":
        if not isinstance(doc, dict) or doc.get("model_type") != "linear":
            raise ModelFormatError("not a linear model", "$.model_type")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError("unsupported format_version", "$.format_version")
        try:
            arrays = {k: np.asarray(doc[k], dtype=np.float64) for k in ("weights", "mean", "scale")}
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"bad array ({exc})", "$") from None
        if not all(a.shape == arrays["weights"].shape for a in arrays.values()):
            raise ModelFormatError("weights, mean and scale differ in length", "$.weights")
        vocab = doc.get("vocabulary")
        meta = doc.get("metadata") or {}
        return cls(
            weights=arrays["weights"],
            bias=float(doc["bias"]),
            l2_strength=float(doc["l2_strength"]),
            mean=arrays["mean"],
            scale=arrays["scale"],
            vocabulary=None if vocab is None else Vocabulary.from_dict(vocab),
            converged=bool(meta.get("converged", False)),
            n_iter=int(meta.get("n_iter", 0)),
        )


def objective(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean logistic loss plus ``l2 / (2n) * ||w||^2`` (bias unpenalized)."""
    m = Z @ w + b
    n = len(y)
    return float(np.mean(np.logaddexp(0.0, m) - y * m) + 0.5 * l2 / n * (w @ w))


def _gradient(w, b, Z, y, l2):
    n = len(y)
    r = expit(Z @ w + b) - y
    return Z.T @ r / n + l2 / n * w, float(r.mean())


def train_logistic(X, labels, l2_strength: float = 1.0, max_iters: int = 2000,
                   tolerance: float = 1e-5, vocabulary: Vocabulary | None = None) -> LinearModel:
    """Fit on train-standardized columns.

    Stops when the gradient max-norm drops below ``tolerance`` or after
    ``max_iters`` accepted steps; ``converged`` records which happened.
    Each step starts from twice the previous step size and halves it until
    the Armijo condition holds.
    """
    Xd = _dense(X)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(y) != Xd.shape[0]:
        raise DataError("labels are not aligned with the training matrix")
    if y.min() == y.max():
        raise DataError("training labels contain a single class")
    mean = Xd.mean(axis=0)
    scale = Xd.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (Xd - mean) / scale

    w = np.zeros(Z.shape[1])
    b = 0.0
    f = objective(w, b, Z, y, l2_strength)
    trace = [f]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gw, gb = _gradient(w, b, Z, y, l2_strength)
        gnorm = max(np.abs(gw).max(initial=0.0), abs(gb))
        if gnorm < tolerance:
            converged = True
            it -= 1
            break
        sq = gw @ gw + gb * gb
        step *= 2.0
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            f_new = objective(w_new, b_new, Z, y, l2_strength)
            if f_new <= f - 0.5 * step * sq or step < 1e-12:
                break
            step *= 0.5
        if f_new > f:
            break  # line search failed to make progress
        w, b, f = w_new, b_new, f_new
        trace.append(f)
    if not converged:
        logger.info("logistic regression stopped after %d iterations without converging", it)
    return LinearModel(w, b, l2_strength, mean, scale, vocabulary, converged, it, trace)


def predict_linear(model: LinearModel, row) -> float:
    return model.predict_proba(row)


def serialize_linear(model: LinearModel) -> bytes:
    return json.dumps(model.to_dict(), separators=(",", ":"), sort_keys=True).encode("utf-8")


def deserialize_linear(blob: bytes | str) -> LinearModel:
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON ({exc.msg})") from None
    return LinearModel.from_dict(doc)
