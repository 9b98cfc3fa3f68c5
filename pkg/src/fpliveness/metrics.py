"""Fingerprint-level score aggregation and liveness error rates.

Live is the positive class. Rates are percentages and follow these
definitions:

    FAR = FP / (FP + TP)        FRR = FN / (FN + TN)
    ACE = (FAR + FRR) / 2       Accuracy = (TP + TN) / total
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from fpliveness.patches import Label

REPORT_KEYS = ("level", "tp", "tn", "fp", "fn", "far", "frr", "ace", "accuracy")


class NoPatchesError(ValueError):
    """A fingerprint produced no kept patches, so it cannot be scored."""


class UndefinedMetricError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PatchScore:
    live: float
    spoof: float

    @property
    def decision(self) -> Label:
        return Label.LIVE if self.live > self.spoof else Label.SPOOF


@dataclass
class FingerprintResult:
    source_id: str
    aggregate_live: float = 0.0
    aggregate_spoof: float = 0.0
    decision: Optional[Label] = None
    patch_count: int = 0
    per_patch: list = field(default_factory=list)
    error: Optional[str] = None

    @classmethod
    def from_scores(cls, source_id, origins, scores: Sequence[PatchScore]) -> "FingerprintResult":
        try:
            live, spoof = aggregate(scores)
        except NoPatchesError as exc:
            return cls(source_id, error=str(exc))
        per_patch = [(tuple(o), s, s.decision) for o, s in zip(origins, scores)]
        return cls(source_id, live, spoof, decide(live, spoof), len(scores), per_patch)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "aggregate_live": self.aggregate_live,
            "aggregate_spoof": self.aggregate_spoof,
            "decision": self.decision.value if self.decision else None,
            "patch_count": self.patch_count,
            "error": self.error,
            "patches": [
                {"cell_row": o[0], "cell_col": o[1], "live": s.live, "spoof": s.spoof, "decision": d.value}
                for o, s, d in self.per_patch
            ],
        }


def aggregate(scores: Sequence[PatchScore]) -> tuple[float, float]:
    if len(scores) == 0:
        raise NoPatchesError("no patches")
    live = sum(s.live for s in scores)
    spoof = sum(s.spoof for s in scores)
    return float(live), float(spoof)


def decide(aggregate_live: float, aggregate_spoof: float) -> Label:
    # ties fail closed
    return Label.LIVE if aggregate_live > aggregate_spoof else Label.SPOOF


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(truth: Sequence[Label], predicted: Sequence[Label]) -> ConfusionCounts:
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    tp = tn = fp = fn = 0
    for t, p in zip(truth, predicted):
        t, p = Label(t), Label(p)
        if t is Label.LIVE:
            if p is Label.LIVE:
                tp += 1
            else:
                fn += 1
        elif p is Label.LIVE:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def far(c: ConfusionCounts) -> float:
    if c.fp + c.tp == 0:
        raise UndefinedMetricError("FAR undefined: FP + TP = 0")
    return 100.0 * c.fp / (c.fp + c.tp)


def frr(c: ConfusionCounts) -> float:
    if c.fn + c.tn == 0:
        raise UndefinedMetricError("FRR undefined: FN + TN = 0")
    return 100.0 * c.fn / (c.fn + c.tn)


def ace(far_pct: Optional[float], frr_pct: Optional[float]) -> float:
    if far_pct is None or frr_pct is None:
        raise UndefinedMetricError("ACE undefined: FAR or FRR undefined")
    return (far_pct + frr_pct) / 2.0


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("accuracy undefined: empty evaluation")
    return 100.0 * (c.tp + c.tn) / c.total


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


@dataclass(frozen=True)
class EvalReport:
    """Error rates at one level; undefined rates are ``None``."""

    level: str
    counts: ConfusionCounts
    far: Optional[float]
    frr: Optional[float]
    ace: Optional[float]
    accuracy: Optional[float]

    @classmethod
    def from_counts(cls, level: str, counts: ConfusionCounts) -> "EvalReport":
        if level not in ("patch", "fingerprint"):
            raise ValueError(f"unknown level {level!r}")
        fa, fr = _maybe(far, counts), _maybe(frr, counts)
        return cls(level, counts, fa, fr, _maybe(ace, fa, fr), _maybe(accuracy, counts))

    @classmethod
    def from_labels(cls, level, truth, predicted) -> "EvalReport":
        return cls.from_counts(level, confusion(truth, predicted))

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "level": self.level, "tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn,
            "far": self.far, "frr": self.frr, "ace": self.ace, "accuracy": self.accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def csv_row(self) -> str:
        d = self.to_dict()
        return ",".join("" if d[k] is None else (f"{d[k]:.6f}" if isinstance(d[k], float) else str(d[k])) for k in REPORT_KEYS)


def csv_header() -> str:
    return ",".join(REPORT_KEYS)
