"""Accuracy bookkeeping and subject-wise cross-validation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .latent import even_split, infer_all
from .network import ModelConfig, Parameters, init_params, network_forward
from .training import TrainConfig, lsbp_train

log = logging.getLogger(__name__)


def predict(samples, params: Parameters, config: ModelConfig, mode="lsbp", threads=1):
    """Labels for ``samples``.

    Structured models search labels and segmentations jointly; ``fixed_even``
    models are scored at the even split they were trained with.
    """
    if mode == "lsbp":
        return [y for y, _, _ in infer_all(samples, params, config, threads)]
    out = []
    for s in samples:
        H = even_split(s.frames.shape[1], config.M, config.m, config.tau)
        out.append(int(np.argmax(network_forward(s, params, H, config))) + 1)
    return out


def confusion_matrix(truth, predicted, K: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes, 1-based labels."""
    cm = np.zeros((K, K), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[t - 1, p - 1] += 1
    return cm


def per_class_accuracy(cm: np.ndarray) -> np.ndarray:
    totals = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.diag(cm) / totals
    return np.where(totals > 0, acc, np.nan)


def accuracy(truth, predicted) -> float:
    truth, predicted = list(truth), list(predicted)
    if not truth:
        raise ValueError("no samples to score")
    return sum(int(a == b) for a, b in zip(truth, predicted)) / len(truth)


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    confusion: np.ndarray
    iterations: int


@dataclass
class CrossValidation:
    folds: List[FoldResult]
    K: int

    @property
    def mean_accuracy(self) -> float:
        """Mean of the per-fold accuracies, not pooled over samples."""
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def confusion(self) -> np.ndarray:
        return sum(f.confusion for f in self.folds)

    def report(self, class_names: Optional[List[str]] = None) -> str:
        """Per-class accuracy table then the pooled K x K confusion matrix, as CSV."""
        names = class_names or [str(k) for k in range(1, self.K + 1)]
        cm = self.confusion
        lines = ["class,accuracy"]
        for name, a in zip(names, per_class_accuracy(cm)):
            lines.append(f"{name},{a:.4f}")
        for f in self.folds:
            lines.append(f"fold{f.fold},{f.accuracy:.4f}")
        lines.append(f"mean,{self.mean_accuracy:.4f}")
        lines.append("")
        lines.append("true\\pred," + ",".join(names))
        for name, row in zip(names, cm):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines)


def cross_validate(samples, folds, config: ModelConfig, train_config: TrainConfig,
                   init=None, threads=1, log_sink=None) -> CrossValidation:
    """Train on every fold but one, test on the held-out fold, for each fold.

    ``folds`` gives each sample's fold id. ``init`` is an optional callable
    returning the starting parameters (defaults to a seeded random init).
    """
    folds = list(folds)
    ids = sorted(set(folds))
    results = []
    for k in ids:
        train = [s for s, f in zip(samples, folds) if f != k]
        test = [s for s, f in zip(samples, folds) if f == k]
        if not train or not test:
            raise ValueError(f"fold {k} leaves an empty train or test split")
        start = init() if init is not None else init_params(config, seed=train_config.seed)
        params, state = lsbp_train(train, start, train_config, config, threads=threads,
                                   log_sink=log_sink)
        pred = predict(test, params, config, train_config.mode, threads)
        truth = [s.label for s in test]
        res = FoldResult(k, accuracy(truth, pred), confusion_matrix(truth, pred, config.K),
                         state.iteration)
        log.info("fold %d: accuracy %.4f after %d iterations", k, res.accuracy, res.iterations)
        results.append(res)
    return CrossValidation(results, config.K)
