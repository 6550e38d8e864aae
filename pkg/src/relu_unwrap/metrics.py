"""Performance measures: MSE and the Mann-Whitney AUC with midrank ties."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def mse(y, pred) -> float:
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    return float(np.mean((y - pred) ** 2))


def auc(y, score) -> float:
    """Area under the ROC curve; NaN when only one class is present."""
    y = np.asarray(y)
    score = np.asarray(score, dtype=np.float64)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(score)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auc_columns(y, scores) -> np.ndarray:
    """AUC of every column of ``scores`` (n, k) against the same labels."""
    y = np.asarray(y)
    scores = np.asarray(scores, dtype=np.float64)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return np.full(scores.shape[1], np.nan)
    ranks = rankdata(scores, axis=0)
    return (ranks[pos].sum(axis=0) - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def performance(task: str, y, pred) -> float:
    """MSE for regression, AUC for classification."""
    return mse(y, pred) if task == "regression" else auc(y, pred)


def higher_is_better(task: str) -> bool:
    return task == "classification"
