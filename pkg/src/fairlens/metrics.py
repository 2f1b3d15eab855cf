"""Group confusion counts and the fairness/performance metrics built on them.

Every difference is reported as side 1 minus side 0 of the sensitive
attribute. Rates with an empty denominator raise ``UndefinedMetricError``
instead of defaulting to 0, which would read as perfectly fair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    def __init__(self, metric: str, side: int, attribute: str | None = None):
        self.metric = metric
        self.side = side
        self.attribute = attribute
        where = f"attribute {attribute!r} " if attribute else ""
        super().__init__(f"{metric} undefined for {where}side {side}: empty denominator")


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class GroupedConfusion:
    sides: tuple[Confusion, Confusion]
    attribute: str | None = None

    def __getitem__(self, side: int) -> Confusion:
        return self.sides[side]

    def swapped(self) -> "GroupedConfusion":
        return GroupedConfusion((self.sides[1], self.sides[0]), self.attribute)


def _binary(name: str, v) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(bool)


def _check_lengths(**arrays) -> None:
    sizes = {k: len(v) for k, v in arrays.items()}
    if len(set(sizes.values())) > 1:
        raise ValueError(f"length mismatch: {sizes}")


def confusion(y_true, y_pred) -> Confusion:
    t, p = _binary("y_true", y_true), _binary("y_pred", y_pred)
    _check_lengths(y_true=t, y_pred=p)
    return Confusion(
        tp=int(np.count_nonzero(t & p)),
        fp=int(np.count_nonzero(~t & p)),
        tn=int(np.count_nonzero(~t & ~p)),
        fn=int(np.count_nonzero(t & ~p)),
    )


def grouped_confusion(y_true, y_pred, a, attribute: str | None = None) -> GroupedConfusion:
    t, p, s = _binary("y_true", y_true), _binary("y_pred", y_pred), _binary("a", a)
    _check_lengths(y_true=t, y_pred=p, a=s)
    return GroupedConfusion((confusion(t[~s], p[~s]), confusion(t[s], p[s])), attribute)


def tpr(c: Confusion, side: int = 0, attribute: str | None = None) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("TPR", side, attribute)
    return c.tp / (c.tp + c.fn)


def fpr(c: Confusion, side: int = 0, attribute: str | None = None) -> float:
    if c.fp + c.tn == 0:
        raise UndefinedMetricError("FPR", side, attribute)
    return c.fp / (c.fp + c.tn)


def _rates(gc: GroupedConfusion, rate) -> tuple[float, float]:
    return rate(gc[0], 0, gc.attribute), rate(gc[1], 1, gc.attribute)


def eod(gc: GroupedConfusion) -> float:
    """Equal opportunity difference, ``TPR_1 - TPR_0``."""
    t0, t1 = _rates(gc, tpr)
    return t1 - t0


def aod(gc: GroupedConfusion) -> float:
    """Average odds difference, ``((FPR_1 - FPR_0) + (TPR_1 - TPR_0)) / 2``."""
    t0, t1 = _rates(gc, tpr)
    f0, f1 = _rates(gc, fpr)
    return 0.5 * ((f1 - f0) + (t1 - t0))


def spd(y_pred, a, attribute: str | None = None) -> float:
    """Statistical parity difference, ``P[C=1 | A=1] - P[C=1 | A=0]``."""
    p, s = _binary("y_pred", y_pred), _binary("a", a)
    _check_lengths(y_pred=p, a=s)
    rates = []
    for side, mask in ((0, ~s), (1, s)):
        n = int(np.count_nonzero(mask))
        if n == 0:
            raise UndefinedMetricError("positive rate", side, attribute)
        rates.append(np.count_nonzero(p & mask) / n)
    return rates[1] - rates[0]


def accuracy(y_true, y_pred) -> float:
    c = confusion(y_true, y_pred)
    if c.total == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return (c.tp + c.tn) / c.total


def f1(y_true, y_pred) -> float:
    """Harmonic mean of precision and recall; 0 when there are no true positives."""
    c = confusion(y_true, y_pred)
    denom = 2 * c.tp + c.fp + c.fn
    return 0.0 if c.tp == 0 else 2 * c.tp / denom


def present(x: float) -> int:
    """Table presentation value: ``round(100 * x)`` with halves away from zero."""
    v = 100.0 * x
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


@dataclass(frozen=True)
class AttributeMetrics:
    attribute: str
    eod: float | None
    aod: float | None
    spd: float | None
    error: str | None = None  # reason when some metric is undefined

    def to_json(self) -> dict:
        doc = {"attribute": self.attribute}
        for k in ("eod", "aod", "spd"):
            v = getattr(self, k)
            doc[k] = v
            doc[f"{k}_x100"] = None if v is None else present(v)
        if self.error:
            doc["error"] = self.error
        return doc


@dataclass(frozen=True)
class FairnessReport:
    attributes: tuple[AttributeMetrics, ...]
    accuracy: float
    f1: float

    def __getitem__(self, name: str) -> AttributeMetrics:
        for m in self.attributes:
            if m.attribute == name:
                return m
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "accuracy_x100": present(self.accuracy),
            "f1": self.f1,
            "f1_x100": present(self.f1),
            "attributes": [m.to_json() for m in self.attributes],
        }


def attribute_metrics(y_true, y_pred, a, attribute: str, strict: bool = True) -> AttributeMetrics:
    gc = grouped_confusion(y_true, y_pred, a, attribute)
    try:
        return AttributeMetrics(attribute, eod(gc), aod(gc), spd(y_pred, a, attribute))
    except UndefinedMetricError as exc:
        if strict:
            raise
        return AttributeMetrics(attribute, None, None, None, error=str(exc))


def fairness_report(y_true, y_pred, sensitive: np.ndarray, names: Sequence[str], strict: bool = True) -> FairnessReport:
    """Metrics for every column of ``sensitive``.

    With ``strict`` an undefined rate raises; otherwise the attribute is
    reported with ``None`` values and the reason.
    """
    sensitive = np.asarray(sensitive)
    if sensitive.ndim != 2 or sensitive.shape[1] != len(names):
        raise ValueError("sensitive must be a 2-D array with one column per name")
    attrs = tuple(
        attribute_metrics(y_true, y_pred, sensitive[:, j], name, strict) for j, name in enumerate(names)
    )
    return FairnessReport(attrs, accuracy(y_true, y_pred), f1(y_true, y_pred))
