"""Synthetic unfair labels: seeded, directional label flipping on training rows."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from .dataset import DatasetTable


@dataclass(frozen=True)
class InjectionSpec:
    attribute: int  # column of the sensitive matrix
    favored_side: int
    degree: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.degree < 1.0:
            raise ValueError(f"injection degree must lie in [0, 1), got {self.degree}")
        if self.favored_side not in (0, 1):
            raise ValueError(f"favored_side must be 0 or 1, got {self.favored_side}")


@dataclass(frozen=True)
class FlipLog:
    attribute: int
    favored_side: int
    degree: float
    promoted: tuple[int, ...]  # row positions flipped 0 -> 1 on the favored side
    demoted: tuple[int, ...]  # row positions flipped 1 -> 0 on the other side

    def to_json(self, table: DatasetTable | None = None) -> dict:
        doc = {
            "attribute": self.attribute,
            "favored_side": self.favored_side,
            "degree": self.degree,
            "promoted": list(self.promoted),
            "demoted": list(self.demoted),
        }
        if table is not None:
            doc["attribute_name"] = table.sensitive_names[self.attribute]
            doc["promoted_source_rows"] = [int(table.row_ids[i]) for i in self.promoted]
            doc["demoted_source_rows"] = [int(table.row_ids[i]) for i in self.demoted]
        return doc


def flip_count(degree: float, cell_size: int) -> int:
    """``round(degree * cell_size)`` with halves rounded up.

    The product is taken in decimal on the shortest repr of ``degree`` so
    that e.g. 0.7 * 5 counts as 3.5 (-> 4), not 3.4999999999999996.
    """
    exact = Decimal(repr(float(degree))) * cell_size
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _pick(rng: np.random.Generator, pool: np.ndarray, degree: float) -> np.ndarray:
    k = flip_count(degree, pool.size)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(pool, size=k, replace=False))


def inject_bias(train: DatasetTable, spec: InjectionSpec) -> tuple[DatasetTable, FlipLog]:
    """Promote favored-side negatives and demote other-side positives.

    Exactly ``round(degree * |cell|)`` rows of each of the two cells flip;
    features and every other row are left untouched.
    """
    if train.row_count == 0:
        raise ValueError("cannot inject bias into an empty table")
    if not 0 <= spec.attribute < train.sensitive.shape[1]:
        raise ValueError(f"attribute index {spec.attribute} out of range")
    a = train.sensitive[:, spec.attribute]
    y = train.labels
    favored_neg = np.flatnonzero((a == spec.favored_side) & (y == 0))
    other_pos = np.flatnonzero((a != spec.favored_side) & (y == 1))

    rng = np.random.default_rng(spec.seed)
    promoted = _pick(rng, favored_neg, spec.degree)
    demoted = _pick(rng, other_pos, spec.degree)

    labels = np.array(y, copy=True)
    labels[promoted] = 1
    labels[demoted] = 0
    log = FlipLog(
        spec.attribute, spec.favored_side, spec.degree,
        tuple(int(i) for i in promoted), tuple(int(i) for i in demoted),
    )
    return train.with_labels(labels), log


def inject_multi(train: DatasetTable, specs: Sequence[InjectionSpec]) -> tuple[DatasetTable, list[FlipLog]]:
    """Apply specs in list order, each on the labels left by the previous one."""
    attrs = [s.attribute for s in specs]
    if len(set(attrs)) != len(attrs):
        raise ValueError(f"each sensitive attribute may be injected at most once, got {attrs}")
    logs = []
    for spec in specs:
        train, log = inject_bias(train, spec)
        logs.append(log)
    return train, logs
