"""Per-row training weights.

FairBalanceClass gives every (group, class) cell the same total weight, so the
learner sees neither group-size differences nor per-group class imbalance.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .dataset import DatasetTable, iter_cells

logger = logging.getLogger(__name__)

STRATEGIES = ("none", "fairbalanceclass")


def fair_balance_class(train: DatasetTable, expect_all_cells: bool = False) -> np.ndarray:
    """Weight each row by ``1 / |cell|`` for its (group, class) cell.

    Only occupied cells get weights. With ``expect_all_cells`` a warning lists
    the cells missing from the full ``2**k * 2`` grid.
    """
    weights = np.zeros(train.row_count)
    seen = set()
    for key, c, rows in iter_cells(train):
        weights[rows] = 1.0 / rows.size
        seen.add((key, c))
    if expect_all_cells:
        k = train.sensitive.shape[1]
        grid = {(tuple((g >> j) & 1 for j in range(k)), c) for g in range(2**k) for c in (0, 1)}
        absent = sorted(grid - seen)
        if absent:
            warnings.warn(f"FairBalanceClass: empty (group, class) cells {absent}", stacklevel=2)
    return weights


def uniform_weights(train: DatasetTable) -> np.ndarray:
    return np.ones(train.row_count)


def compute_weights(train: DatasetTable, strategy: str) -> np.ndarray:
    if strategy == "fairbalanceclass":
        return fair_balance_class(train)
    if strategy == "none":
        return uniform_weights(train)
    raise ValueError(f"unknown reweighing strategy {strategy!r}; expected one of {STRATEGIES}")
