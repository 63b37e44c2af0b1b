"""One-pass greedy (coordinate-wise) hyperparameter search on validation ROC-AUC."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .errors import ConfigError, FirstOccurError
from .gbdt import TrainParams
from .metrics import roc_auc

logger = logging.getLogger(__name__)

# tuning order, one stage per parameter
DEFAULT_ORDER = (
    "learning_rate",
    "n_estimators",
    "max_depth",
    "min_child_weight",
    "gamma",
    "reg_alpha",
    "reg_lambda",
    "subsample",
    "colsample_bytree",
)

DEFAULT_GRIDS: dict[str, tuple] = {
    "learning_rate": (0.01, 0.05, 0.1),
    "n_estimators": (100, 500, 1000, 2000),
    "max_depth": (3, 4, 5, 6),
    "min_child_weight": (1, 2, 4, 6),
    "gamma": (0, 0.1, 0.4, 1),
    "reg_alpha": (0, 1e-5, 1, 6),
    "reg_lambda": (1, 10, 100),
    "subsample": (0.7, 0.8, 0.9, 0.95, 1),
    "colsample_bytree": (0.45, 0.6, 0.9, 1),
}


@dataclass
class SearchSpace:
    grids: list[tuple[str, tuple]]
    base: TrainParams = field(default_factory=TrainParams)

    def __post_init__(self):
        names = set()
        for name, grid in self.grids:
            if name in names:
                raise ConfigError(f"{name} listed twice", "search.order")
            names.add(name)
            if not hasattr(self.base, name) or name in ("seed", "early_stopping_rounds"):
                raise ConfigError(f"not a tunable parameter: {name}", "search.order")
            if not grid:
                raise ConfigError("empty grid", f"search.grids.{name}")
            if getattr(self.base, name) not in grid:
                raise ConfigError(
                    f"grid must contain the base value {getattr(self.base, name)!r}",
                    f"search.grids.{name}",
                )

    @classmethod
    def default(cls, base: TrainParams | None = None, order: Sequence[str] = DEFAULT_ORDER,
                grids: dict[str, Sequence] | None = None) -> "SearchSpace":
        merged = {**DEFAULT_GRIDS, **(grids or {})}
        return cls([(name, tuple(merged[name])) for name in order], base or TrainParams())

    @property
    def total_candidates(self) -> int:
        return sum(len(g) for _, g in self.grids)


@dataclass
class StageRecord:
    param: str
    candidates: list
    validation_auc: list[float]
    chosen: Any
    best_so_far: float


@dataclass
class TuneTrace:
    stages: list[StageRecord] = field(default_factory=list)
    n_fits: int = 0

    def to_dict(self) -> dict:
        return {
            "n_fits": self.n_fits,
            "stages": [
                {
                    "param": s.param,
                    "candidates": s.candidates,
                    "validation_auc": s.validation_auc,
                    "chosen": s.chosen,
                    "best_so_far": s.best_so_far,
                }
                for s in self.stages
            ],
        }

    def to_table(self) -> str:
        lines = [f"{'param':<18} {'candidate':>10} {'val_auc':>9}  chosen"]
        for s in self.stages:
            for c, auc in zip(s.candidates, s.validation_auc):
                mark = "*" if c == s.chosen else ""
                lines.append(f"{s.param:<18} {c!s:>10} {auc:>9.5f}  {mark}")
            lines.append(f"{'':<18} {'best':>10} {s.best_so_far:>9.5f}")
        return "\n".join(lines) + "\n"


class TuningError(FirstOccurError):
    def __init__(self, param: str, candidate, cause: Exception):
        self.param = param
        self.candidate = candidate
        super().__init__(f"fit failed for {param}={candidate!r}: {cause}")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FIRSTOCCUR_THREADS", "1")))
    except ValueError:
        return 1


def _validation_auc(model, validation) -> float:
    X, y = validation
    return roc_auc(model.predict_proba(X), y)


def greedy_tune(
    train,
    validation,
    space: SearchSpace,
    trainer: Callable[[Any, TrainParams, Any], Any],
    scorer: Callable[[Any, Any], float] = _validation_auc,
    workers: int | None = None,
) -> tuple[TrainParams, TuneTrace]:
    """Optimize one hyperparameter at a time, in ``space`` order.

    ``trainer(train, params, validation)`` returns a fitted model and
    ``scorer(model, validation)`` its validation AUC. Within a stage every
    candidate is fitted with the other parameters at their current values;
    the best AUC wins, ties going to the incumbent and then to the smaller
    candidate.
    """
    current = space.base
    trace = TuneTrace()
    workers = workers or default_workers()

    def fit_one(name, value):
        try:
            model = trainer(train, current.replace(**{name: value}), validation)
            return scorer(model, validation)
        except FirstOccurError as exc:
            raise TuningError(name, value, exc) from exc
        except (ValueError, ArithmeticError) as exc:
            raise TuningError(name, value, exc) from exc

    for name, grid in space.grids:
        if workers > 1 and len(grid) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                aucs = list(pool.map(lambda v: fit_one(name, v), grid))
        else:
            aucs = [fit_one(name, v) for v in grid]
        trace.n_fits += len(grid)
        incumbent = getattr(current, name)
        ranked = sorted(zip(grid, aucs), key=lambda ca: (-ca[1], ca[0] != incumbent, ca[0]))
        chosen, best = ranked[0]
        current = current.replace(**{name: chosen})
        trace.stages.append(StageRecord(name, list(grid), [float(a) for a in aucs], chosen, float(best)))
        logger.info("stage %s: chose %r (validation AUC %.5f)", name, chosen, best)
    return current, trace


def dumps_trace(trace: TuneTrace, best: TrainParams, **extra) -> str:
    doc = {"trace": trace.to_dict(), "best_params": best.to_dict(), **extra}
    return json.dumps(doc, indent=1, sort_keys=True)
