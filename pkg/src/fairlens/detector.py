"""Turn metric values into a fair/unfair verdict per sensitive attribute."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .metrics import AttributeMetrics, FairnessReport

DEFAULT_EPSILON = 0.05

FAIR = "fair"
UNFAIR = "unfair"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class AttributeVerdict:
    attribute: str
    status: str
    epsilon: float
    magnitude: float | None = None  # max(|eod|, |aod|)
    direction: int | None = None  # favored side, only when unfair
    ambiguous: bool = False  # eod and aod disagree in sign
    side_names: tuple[str, str] | None = None
    reason: str | None = None

    @property
    def unfair(self) -> bool:
        return self.status == UNFAIR

    def describe(self) -> str:
        if self.status == INDETERMINATE:
            return f"{self.attribute}: indeterminate ({self.reason})"
        text = f"{self.attribute}: {self.status} (max |EOD|,|AOD| = {self.magnitude:.4f}, epsilon = {self.epsilon:g})"
        if self.direction is not None:
            side = self.side_names[self.direction] if self.side_names else str(self.direction)
            text += f", favors {side}"
            if self.ambiguous:
                text += " [EOD and AOD disagree in sign]"
        return text

    def to_json(self) -> dict:
        doc = {
            "attribute": self.attribute,
            "status": self.status,
            "epsilon": self.epsilon,
            "magnitude": self.magnitude,
            "direction": self.direction,
            "ambiguous": self.ambiguous,
        }
        if self.direction is not None and self.side_names:
            doc["favored"] = self.side_names[self.direction]
        if self.reason:
            doc["reason"] = self.reason
        return doc


@dataclass(frozen=True)
class Verdict:
    attributes: tuple[AttributeVerdict, ...]
    epsilon: float

    @property
    def any_unfair(self) -> bool:
        return any(v.unfair for v in self.attributes)

    def __getitem__(self, name: str) -> AttributeVerdict:
        for v in self.attributes:
            if v.attribute == name:
                return v
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "attributes": [v.to_json() for v in self.attributes]}


def assess_attribute(m: AttributeMetrics, epsilon: float = DEFAULT_EPSILON,
                     side_names: tuple[str, str] | None = None) -> AttributeVerdict:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if m.eod is None or m.aod is None:
        return AttributeVerdict(m.attribute, INDETERMINATE, epsilon, side_names=side_names,
                                reason=m.error or "metric undefined")
    magnitude = max(abs(m.eod), abs(m.aod))
    if magnitude < epsilon:
        return AttributeVerdict(m.attribute, FAIR, epsilon, magnitude, side_names=side_names)
    dominant = m.eod if abs(m.eod) >= abs(m.aod) else m.aod
    return AttributeVerdict(
        m.attribute, UNFAIR, epsilon, magnitude,
        direction=1 if dominant > 0 else 0,
        ambiguous=(m.eod > 0 and m.aod < 0) or (m.eod < 0 and m.aod > 0),
        side_names=side_names,
    )


def assess(report: FairnessReport, epsilon: float = DEFAULT_EPSILON,
           side_names: Sequence[tuple[str, str]] | None = None) -> Verdict:
    """Unfair iff ``|eod| >= epsilon`` or ``|aod| >= epsilon``.

    The favored side is side 1 when the larger-magnitude metric is positive,
    side 0 otherwise.
    """
    names = list(side_names) if side_names is not None else [None] * len(report.attributes)
    return Verdict(
        tuple(assess_attribute(m, epsilon, n) for m, n in zip(report.attributes, names)),
        epsilon,
    )
