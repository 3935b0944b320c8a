"""Detection metrics on the binary attack-vs-normal view plus multi-class ACC.

Rates are kept at full precision; the display values are percentages rounded
half-up to two decimals using exact rational arithmetic. The displayed F1 is
the harmonic mean of the displayed precision and recall, which is how the
published result tables are tabulated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

UNDEFINED = "—"  # rendered for 0/0 rates
_CENT = Decimal("0.01")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn}


def confusion_binary(pred_classes, true_classes, normal_id: int) -> ConfusionCounts:
    pred = np.asarray(pred_classes)
    true = np.asarray(true_classes)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    pa = pred != normal_id
    ta = true != normal_id
    return ConfusionCounts(
        tp=int(np.sum(pa & ta)),
        tn=int(np.sum(~pa & ~ta)),
        fp=int(np.sum(pa & ~ta)),
        fn=int(np.sum(~pa & ta)),
    )


def _ratio(num: int, den: int) -> Optional[Fraction]:
    return None if den == 0 else Fraction(num, den)


def percent_display(r: Optional[Fraction]) -> Optional[Decimal]:
    """``r`` as a percentage rounded half-up to 2 decimals."""
    if r is None:
        return None
    exact = r * 100
    return (Decimal(exact.numerator) / Decimal(exact.denominator)).quantize(_CENT, rounding=ROUND_HALF_UP)


def _f(r: Optional[Fraction]) -> Optional[float]:
    return None if r is None else float(r)


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    n: int
    multiclass_correct: int
    acc: float
    dr: Optional[float]
    far: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    display: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    per_class: list = field(default_factory=list)

    @property
    def binary_accuracy(self) -> float:
        return (self.counts.tp + self.counts.tn) / self.n

    def display_value(self, key: str) -> str:
        v = self.display.get(key)
        return UNDEFINED if v is None else v

    def to_dict(self) -> dict:
        return {
            "N": self.n,
            "multiclass_correct": self.multiclass_correct,
            "counts": self.counts.to_dict(),
            "rates": {"ACC": self.acc, "DR": self.dr, "FAR": self.far, "Precision": self.precision,
                      "Recall": self.recall, "F1": self.f1},
            "display": {k: self.display_value(k) for k in DISPLAY_KEYS},
            "runtime_seconds": self.runtime_seconds,
            "per_class": self.per_class,
        }

    def to_json(self, **meta) -> str:
        d = self.to_dict()
        if meta:
            d["meta"] = meta
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


DISPLAY_KEYS = ("ACC", "DR", "FAR", "Precision", "Recall", "F1")


def compute_metrics(counts: ConfusionCounts, multiclass_correct: int, n: int,
                    runtime_seconds: float = 0.0, per_class: Sequence[dict] = ()) -> MetricsReport:
    """Derive DR, FAR, precision, recall, F1 and ACC.

    Zero denominators give ``None`` (shown as an em dash), never NaN.
    """
    if n <= 0:
        raise ValueError("cannot compute metrics over zero samples")
    if counts.total != n:
        raise ValueError(f"counts sum to {counts.total}, expected {n}")
    if not 0 <= multiclass_correct <= n:
        raise ValueError("multiclass_correct must lie in [0, N]")
    dr = _ratio(counts.tp, counts.tp + counts.fn)
    far = _ratio(counts.fp, counts.fp + counts.tn)
    prec = _ratio(counts.tp, counts.tp + counts.fp)
    f1 = None
    if prec is not None and dr is not None and prec + dr > 0:
        f1 = 2 * prec * dr / (prec + dr)
    acc = Fraction(multiclass_correct, n)

    shown = {"ACC": percent_display(acc), "DR": percent_display(dr), "FAR": percent_display(far),
             "Precision": percent_display(prec), "Recall": percent_display(dr)}
    p_d, r_d = shown["Precision"], shown["Recall"]
    if p_d is None or r_d is None or p_d + r_d == 0:
        shown["F1"] = None
    else:
        shown["F1"] = (2 * p_d * r_d / (p_d + r_d)).quantize(_CENT, rounding=ROUND_HALF_UP)
    return MetricsReport(
        counts=counts, n=n, multiclass_correct=multiclass_correct, acc=float(acc),
        dr=_f(dr), far=_f(far), precision=_f(prec), recall=_f(dr), f1=_f(f1),
        display={k: (None if v is None else str(v)) for k, v in shown.items()},
        runtime_seconds=float(runtime_seconds), per_class=list(per_class),
    )


def per_class_table(pred, true, labels: Sequence[str], normal_id: int) -> list[dict]:
    """Per true class: support, exact hits, and how many were flagged as attacks."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    rows = []
    for k, name in enumerate(labels):
        mask = true == k
        support = int(mask.sum())
        flagged = int(np.sum(pred[mask] != normal_id))
        row = {"class": name, "support": support, "correct": int(np.sum(pred[mask] == k))}
        if k == normal_id:
            row["false_alarms"] = flagged
        else:
            row["detected"] = flagged
            row["DR"] = None if support == 0 else flagged / support
        rows.append(row)
    return rows


def evaluate(pred, true, normal_id: int, labels: Optional[Sequence[str]] = None,
             runtime_seconds: float = 0.0) -> MetricsReport:
    pred = np.asarray(pred)
    true = np.asarray(true)
    counts = confusion_binary(pred, true, normal_id)
    per_class = per_class_table(pred, true, labels, normal_id) if labels is not None else []
    return compute_metrics(counts, int(np.sum(pred == true)), len(true), runtime_seconds, per_class)


def format_table(report: MetricsReport) -> str:
    """Aligned plain-text summary."""
    c = report.counts
    head = ["ACC%", "TP", "TN", "FP", "FN", "DR%", "FAR%", "Precision%", "Recall%", "F1", "Runtime/s"]
    vals = [report.display_value("ACC"), f"{c.tp:,}", f"{c.tn:,}", f"{c.fp:,}", f"{c.fn:,}",
            report.display_value("DR"), report.display_value("FAR"), report.display_value("Precision"),
            report.display_value("Recall"), report.display_value("F1"), f"{report.runtime_seconds:.2f}"]
    widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths)),
             "  ".join(v.rjust(w) for v, w in zip(vals, widths))]
    if report.per_class:
        lines.append("")
        lines.append(f"{'class':<20} {'support':>8} {'correct':>8} {'flagged':>8} {'DR%':>8}")
        for row in report.per_class:
            flagged = row.get("detected", row.get("false_alarms", 0))
            dr = row.get("DR")
            dr_s = UNDEFINED if "DR" in row and dr is None else ("" if dr is None else f"{100 * dr:.2f}")
            lines.append(f"{row['class']:<20} {row['support']:>8} {row['correct']:>8} {flagged:>8} {dr_s:>8}")
    return "\n".join(lines) + "\n"
