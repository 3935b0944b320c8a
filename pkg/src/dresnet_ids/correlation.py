"""Cross-layer alert correlation and True Detection Rate (TDR).

An attack counts as truly detected when the same class is alerted on the
edge, fog and cloud layers within a time window: one alert per layer, with
``max(t) - min(t) <= threshold``. Each alert joins at most one group.

Matching sweeps alerts in ``(timestamp, record_id)`` order, keeping a FIFO of
still-live alerts per layer; as soon as all three queues are non-empty the
oldest alert of each forms a group. Always consuming the alerts that expire
first yields the largest possible number of disjoint groups, so the group
count can only grow with the threshold.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

LAYERS = ("edge", "fog", "cloud")
DEFAULT_THRESHOLDS = (56000.0, 58000.0, 60000.0, 62000.0)
UNDEFINED = "—"


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class Alert:
    layer: str
    timestamp: float
    predicted_class: str
    record_id: str = ""

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise CorrelationError(f"unknown layer {self.layer!r}")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise CorrelationError(f"timestamp must be finite and non-negative, got {self.timestamp}")

    @property
    def sort_key(self):
        return (self.timestamp, self.record_id, LAYERS.index(self.layer))


@dataclass
class CorrelationConfig:
    threshold: float = 60000.0
    thresholds_to_sweep: Sequence[float] = DEFAULT_THRESHOLDS
    classes_in_scope: Optional[Sequence[str]] = None
    known_classes: Optional[Sequence[str]] = None

    def __post_init__(self):
        if not self.threshold > 0:
            raise CorrelationError("threshold must be > 0")


@dataclass(frozen=True)
class MatchedGroup:
    predicted_class: str
    edge: Alert
    fog: Alert
    cloud: Alert

    @property
    def span(self) -> float:
        ts = (self.edge.timestamp, self.fog.timestamp, self.cloud.timestamp)
        return max(ts) - min(ts)


@dataclass
class CorrelationResult:
    threshold: float
    groups: list[MatchedGroup]
    alerts_per_class: dict[str, dict[str, int]]
    unmatched: dict[str, int]
    detected_totals: dict[str, int]
    tdr: dict[str, Optional[float]] = field(default_factory=dict)
    overall_tdr: Optional[float] = None

    @property
    def matched_per_class(self) -> dict[str, int]:
        counts = {c: 0 for c in self.alerts_per_class}
        for g in self.groups:
            counts[g.predicted_class] = counts.get(g.predicted_class, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "matched_groups": len(self.groups),
            "matched_per_class": self.matched_per_class,
            "alerts_per_class": self.alerts_per_class,
            "unmatched_per_layer": self.unmatched,
            "detected_totals": self.detected_totals,
            "tdr": self.tdr,
            "overall_tdr": self.overall_tdr,
            "groups": [
                {"class": g.predicted_class, "span": g.span,
                 **{layer: {"timestamp": getattr(g, layer).timestamp,
                            "record_id": getattr(g, layer).record_id} for layer in LAYERS}}
                for g in self.groups
            ],
        }


def _match_class(alerts: list[Alert], threshold: float) -> list[tuple[Alert, Alert, Alert]]:
    queues = {layer: deque() for layer in LAYERS}
    out = []
    for a in sorted(alerts, key=lambda a: a.sort_key):
        t = a.timestamp
        for q in queues.values():
            while q and t - q[0].timestamp > threshold:
                q.popleft()
        queues[a.layer].append(a)
        if all(queues.values()):
            out.append(tuple(queues[layer].popleft() for layer in LAYERS))
    return out


def correlate(edge_alerts: Iterable[Alert], fog_alerts: Iterable[Alert], cloud_alerts: Iterable[Alert],
              config: Optional[CorrelationConfig] = None, threshold: Optional[float] = None,
              detected_totals: Optional[Mapping[str, int]] = None) -> CorrelationResult:
    """Group same-class alerts across the three layers within ``threshold``.

    ``detected_totals`` gives the TDR denominator per class; by default it is
    the largest per-layer alert count of that class.
    """
    config = config or CorrelationConfig()
    threshold = config.threshold if threshold is None else threshold
    if threshold < 0 or not math.isfinite(threshold):
        raise CorrelationError("threshold must be a non-negative number")
    streams = {"edge": list(edge_alerts), "fog": list(fog_alerts), "cloud": list(cloud_alerts)}
    known = set(config.known_classes) if config.known_classes is not None else None
    scope = set(config.classes_in_scope) if config.classes_in_scope is not None else None
    by_class: dict[str, list[Alert]] = {}
    for layer, stream in streams.items():
        for a in stream:
            if a.layer != layer:
                raise CorrelationError(f"{layer} stream contains a {a.layer} alert")
            if known is not None and a.predicted_class not in known:
                raise CorrelationError(f"unknown class {a.predicted_class!r}")
            if scope is not None and a.predicted_class not in scope:
                continue
            by_class.setdefault(a.predicted_class, []).append(a)
    if scope is not None:
        for c in scope:
            by_class.setdefault(c, [])
    groups = []
    per_class = {}
    for cls in sorted(by_class):
        alerts = by_class[cls]
        per_class[cls] = {layer: sum(a.layer == layer for a in alerts) for layer in LAYERS}
        groups.extend(MatchedGroup(cls, *triple) for triple in _match_class(alerts, threshold))
    used = {layer: sum(v[layer] for v in per_class.values()) - len(groups) for layer in LAYERS}
    totals = dict(detected_totals) if detected_totals is not None else {
        c: max(v.values()) for c, v in per_class.items()
    }
    result = CorrelationResult(threshold, groups, per_class, used, {c: int(totals.get(c, 0)) for c in per_class})
    result.tdr, result.overall_tdr = true_detection_rate(result, result.detected_totals)
    return result


def true_detection_rate(result: CorrelationResult, detected_totals: Mapping[str, int]):
    """Per-class ``matched / detected`` and the detection-weighted overall rate.

    A zero denominator gives ``None``.
    """
    matched = result.matched_per_class
    tdr: dict[str, Optional[float]] = {}
    num = den = 0
    for cls in sorted(set(matched) | set(detected_totals)):
        m = matched.get(cls, 0)
        total = int(detected_totals.get(cls, 0))
        if m > total:
            raise CorrelationError(f"class {cls!r}: {m} matched groups exceed {total} detections")
        tdr[cls] = None if total == 0 else m / total
        num += m
        den += total
    return tdr, (None if den == 0 else num / den)


@dataclass
class SweepTable:
    thresholds: list[float]
    results: list[CorrelationResult]

    @property
    def classes(self) -> list[str]:
        return sorted({c for r in self.results for c in r.tdr})

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds,
            "overall_tdr": [r.overall_tdr for r in self.results],
            "tdr": {c: [r.tdr.get(c) for r in self.results] for c in self.classes},
            "matched_groups": [len(r.groups) for r in self.results],
            "results": [r.to_dict() for r in self.results],
        }

    def format(self) -> str:
        def fmt(v):
            return UNDEFINED if v is None else f"{v:.4f}"

        head = ["class"] + [f"{t:g}" for t in self.thresholds]
        rows = [[c] + [fmt(r.tdr.get(c)) for r in self.results] for c in self.classes]
        rows.append(["overall"] + [fmt(r.overall_tdr) for r in self.results])
        widths = [max(len(str(row[i])) for row in [head, *rows]) for i in range(len(head))]
        lines = ["  ".join(str(v).ljust(w) if i == 0 else str(v).rjust(w)
                           for i, (v, w) in enumerate(zip(row, widths))) for row in [head, *rows]]
        return "TDR by threshold\n" + "\n".join(lines) + "\n"


def sweep_thresholds(edge_alerts, fog_alerts, cloud_alerts, config: Optional[CorrelationConfig] = None,
                     thresholds: Optional[Sequence[float]] = None,
                     detected_totals: Optional[Mapping[str, int]] = None) -> SweepTable:
    config = config or CorrelationConfig()
    ts = [float(t) for t in (thresholds if thresholds is not None else config.thresholds_to_sweep)]
    if not ts:
        raise CorrelationError("no thresholds to sweep")
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise CorrelationError("thresholds must be in ascending order")
    edge, fog, cloud = list(edge_alerts), list(fog_alerts), list(cloud_alerts)
    return SweepTable(ts, [correlate(edge, fog, cloud, config, t, detected_totals) for t in ts])


def load_alerts(path, layer: str) -> list[Alert]:
    """Read alerts from CSV or line-delimited JSON (``.jsonl``/``.ndjson``/``.json``).

    Fields: ``layer`` (optional, must match), ``timestamp``, ``class``, ``record_id``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read alert file {path}: {exc.strerror or exc}") from None
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorrelationError(f"{path}:{lineno}: {exc}") from None
    else:
        records = list(csv.DictReader(text.splitlines())) if text.strip() else []
    alerts = []
    for i, rec in enumerate(records):
        try:
            rec_layer = (rec.get("layer") or layer).strip().lower()
            if rec_layer != layer:
                raise CorrelationError(f"{path}: record {i} is a {rec_layer} alert, expected {layer}")
            alerts.append(Alert(layer, float(rec["timestamp"]), str(rec["class"]).strip(),
                                str(rec.get("record_id", i))))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CorrelationError):
                raise
            raise CorrelationError(f"{path}: malformed record {i}: {exc}") from None
    return alerts
