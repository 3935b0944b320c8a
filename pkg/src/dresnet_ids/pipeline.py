"""Tabular data interface: CSV ingestion, cleaning, label-to-index encoding
and standardization.

Statistics and vocabularies are fitted on the training table only and
persisted as a versioned JSON schema; the same schema then transforms any
split.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DATASET_MAGIC = b"DRNDSET\0"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<8sIQQQ32s")


class DataError(ValueError):
    """Malformed, missing or inconsistent input data."""


def _parse_float(cell: str) -> Optional[float]:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


@dataclass
class RawTable:
    """Rectangular table of raw cell strings (``None`` for missing cells).

    A column is numeric when every non-missing cell parses as a finite number;
    otherwise it is text. The label column is always kept as text.
    """

    columns: list[str]
    rows: list[tuple]
    label_column: Optional[str] = None
    kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {i} has {len(row)} cells, expected {width}")
        if not self.kinds:
            self.kinds = infer_kinds(self.columns, self.rows, self.label_column)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None
        return [row[j] for row in self.rows]

    @property
    def feature_columns(self) -> list[str]:
        return [c for c in self.columns if c != self.label_column]

    def typed_row(self, row: tuple) -> tuple:
        return tuple(
            _parse_float(cell) if cell is not None and self.kinds[c] == "numeric" else cell
            for c, cell in zip(self.columns, row)
        )

    def with_rows(self, rows: list[tuple]) -> "RawTable":
        return RawTable(list(self.columns), rows, self.label_column, dict(self.kinds))


def infer_kinds(columns: Sequence[str], rows: Sequence[tuple], label_column=None) -> dict[str, str]:
    kinds = {}
    for j, name in enumerate(columns):
        if name == label_column:
            kinds[name] = "label"
            continue
        numeric = True
        for row in rows:
            cell = row[j]
            if cell is not None and _parse_float(cell) is None:
                numeric = False
                break
        kinds[name] = "numeric" if numeric else "text"
    return kinds


def ingest_csv(
    path,
    delimiter: str = ",",
    header: bool = True,
    label_column: Optional[str] = None,
    drop_columns: Sequence[str] = (),
) -> RawTable:
    """Read a UTF-8 CSV file into a :class:`RawTable`.

    Cells are whitespace-stripped and empty cells become missing. Without a
    header, columns are named ``c0, c1, ...``.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            records = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise DataError(f"{path} is not valid UTF-8") from None
    records = [r for r in records if r]
    if header:
        if not records:
            raise DataError(f"{path}: no rows")
        columns = [c.strip() for c in records[0]]
        records = records[1:]
    else:
        columns = [f"c{i}" for i in range(len(records[0]))] if records else []
    if not records:
        raise DataError(f"{path}: no rows")
    if len(set(columns)) != len(columns):
        raise DataError(f"{path}: duplicate column names")
    width = len(columns)
    rows = []
    for lineno, rec in enumerate(records, start=2 if header else 1):
        if len(rec) != width:
            raise DataError(f"{path}: line {lineno} has {len(rec)} cells, expected {width}")
        rows.append(tuple(c.strip() or None for c in rec))
    if label_column is not None and label_column not in columns:
        raise DataError(f"{path}: label column {label_column!r} not found")
    unknown = [c for c in drop_columns if c not in columns]
    if unknown:
        raise DataError(f"{path}: cannot drop missing columns {unknown}")
    if drop_columns:
        keep = [j for j, c in enumerate(columns) if c not in set(drop_columns)]
        columns = [columns[j] for j in keep]
        rows = [tuple(row[j] for j in keep) for row in rows]
    return RawTable(columns, rows, label_column)


@dataclass
class NormalizationReport:
    rows_in: int
    nulls_dropped: int
    duplicates_dropped: int

    @property
    def rows_out(self) -> int:
        return self.rows_in - self.nulls_dropped - self.duplicates_dropped

    @property
    def empty(self) -> bool:
        return self.rows_out == 0


def normalize_content(table: RawTable) -> tuple[RawTable, NormalizationReport]:
    """Drop rows with any missing cell, then exact duplicates (first one kept)."""
    complete = [row for row in table.rows if None not in row]
    seen = set()
    kept = []
    for row in complete:
        key = table.typed_row(row)
        if key in seen:
            continue
        seen.add(key)
        kept.append(row)
    report = NormalizationReport(
        rows_in=len(table.rows),
        nulls_dropped=len(table.rows) - len(complete),
        duplicates_dropped=len(complete) - len(kept),
    )
    if report.empty:
        logger.warning("normalization left no rows")
    return table.with_rows(kept), report


@dataclass
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    vocabulary: dict[str, int] = field(default_factory=dict)
    mean: float = 0.0
    std: float = 0.0

    @property
    def constant(self) -> bool:
        return self.kind == "numeric" and self.std == 0.0

    @property
    def unseen_index(self) -> int:
        return len(self.vocabulary)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["vocabulary"] = list(self.vocabulary)
        else:
            d.update(mean=self.mean, std=self.std, constant=self.constant)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        if d["kind"] == "categorical":
            return cls(d["name"], "categorical", {v: i for i, v in enumerate(d["vocabulary"])})
        return cls(d["name"], "numeric", mean=float(d["mean"]), std=float(d["std"]))


@dataclass
class FeatureSchema:
    columns: list[ColumnSpec]
    label_column: str
    labels: list[str]
    normal_label: str
    version: int = SCHEMA_VERSION

    @property
    def normal_id(self) -> int:
        return self.labels.index(self.normal_label)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def encoded_width(self) -> int:
        return len(self.columns)

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def _content(self) -> dict:
        return {
            "version": self.version,
            "label_column": self.label_column,
            "labels": list(self.labels),
            "normal_label": self.normal_label,
            "normal_id": self.normal_id,
            "columns": [c.to_dict() for c in self.columns],
        }

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self._content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        d = self._content()
        d["fingerprint"] = self.fingerprint
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        if d.get("version") != SCHEMA_VERSION:
            raise DataError(f"unsupported schema version {d.get('version')!r}")
        schema = cls(
            columns=[ColumnSpec.from_dict(c) for c in d["columns"]],
            label_column=d["label_column"],
            labels=list(d["labels"]),
            normal_label=d["normal_label"],
        )
        if "fingerprint" in d and d["fingerprint"] != schema.fingerprint:
            raise DataError("schema fingerprint does not match its contents")
        return schema

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot load schema {path}: {exc}") from None


def fit_schema(
    train: RawTable,
    label_column: Optional[str] = None,
    normal_label: str = "normal",
    allow_missing_normal: bool = False,
) -> FeatureSchema:
    """Fit vocabularies (first-occurrence order) and population moments.

    ``normal_label`` must occur among the training labels unless
    ``allow_missing_normal`` declares an attack-only split, in which case it
    is appended to the label vocabulary.
    """
    label_column = label_column or train.label_column
    if not train.rows:
        raise DataError("cannot fit a schema on an empty training table")
    if label_column is None or label_column not in train.columns:
        raise DataError(f"label column {label_column!r} not in training table")
    specs = []
    for j, name in enumerate(train.columns):
        if name == label_column:
            continue
        cells = [row[j] for row in train.rows]
        if any(c is None for c in cells):
            raise DataError(f"column {name!r} has missing cells; normalize first")
        if train.kinds.get(name) == "numeric":
            values = np.array([float(c) for c in cells])
            specs.append(ColumnSpec(name, "numeric", mean=float(values.mean()), std=float(values.std())))
        else:
            vocab: dict[str, int] = {}
            for c in cells:
                if c not in vocab:
                    vocab[c] = len(vocab)
            specs.append(ColumnSpec(name, "categorical", vocab))
    labels: list[str] = []
    seen = set()
    for c in train.column(label_column):
        if c is None:
            raise DataError("label column has missing cells; normalize first")
        if c not in seen:
            seen.add(c)
            labels.append(c)
    if normal_label not in seen:
        if not allow_missing_normal:
            raise DataError(f"normal label {normal_label!r} does not occur in the training labels")
        labels.append(normal_label)
    return FeatureSchema(specs, label_column, labels, normal_label)


@dataclass
class EncodedDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    fingerprint: str

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise DataError("features must be N x F with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("label index out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def subsample(self, fraction: float, seed: int = 0) -> "EncodedDataset":
        """Random row subset (sorted back into original order)."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        n = max(1, int(round(fraction * len(self))))
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return EncodedDataset(self.features[idx], self.labels[idx], self.num_classes, self.fingerprint)


def transform(table: RawTable, schema: FeatureSchema) -> EncodedDataset:
    """Encode a table: categories to indices (unseen -> vocabulary size),
    numbers to z-scores (constant columns -> 0), labels to label indices."""
    expected = set(schema.feature_names)
    present = set(table.columns) - {schema.label_column}
    if present != expected:
        missing, extra = sorted(expected - present), sorted(present - expected)
        raise DataError(f"column mismatch with schema (missing {missing}, unexpected {extra})")
    if schema.label_column not in table.columns:
        raise DataError(f"label column {schema.label_column!r} missing")
    n = len(table.rows)
    X = np.empty((n, schema.encoded_width))
    for k, spec in enumerate(schema.columns):
        cells = table.column(spec.name)
        if any(c is None for c in cells):
            raise DataError(f"column {spec.name!r} has missing cells; normalize first")
        if spec.kind == "categorical":
            vocab, unseen = spec.vocabulary, spec.unseen_index
            X[:, k] = [vocab.get(c, unseen) for c in cells]
        else:
            values = np.empty(n)
            for i, c in enumerate(cells):
                v = _parse_float(c)
                if v is None:
                    raise DataError(f"column {spec.name!r} row {i}: {c!r} is not numeric")
                values[i] = v
            X[:, k] = 0.0 if spec.constant else (values - spec.mean) / spec.std
    label_index = {lab: i for i, lab in enumerate(schema.labels)}
    y = np.empty(n, dtype=np.int64)
    for i, c in enumerate(table.column(schema.label_column)):
        if c not in label_index:
            raise DataError(f"label {c!r} is not a known class")
        y[i] = label_index[c]
    return EncodedDataset(X, y, schema.num_classes, schema.fingerprint)


def binary_label_view(labels, schema_or_normal_id) -> np.ndarray:
    """Normal -> 0, every attack class -> 1."""
    normal_id = schema_or_normal_id.normal_id if isinstance(schema_or_normal_id, FeatureSchema) else int(schema_or_normal_id)
    return (np.asarray(labels) != normal_id).astype(np.int64)


def save_dataset(path, ds: EncodedDataset) -> None:
    """Flat little-endian matrix file: header, float64 features, int64 labels."""
    n, f = ds.features.shape
    header = _DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, f, ds.num_classes,
                                  bytes.fromhex(ds.fingerprint))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<i8").tobytes())


def load_dataset(path) -> EncodedDataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    if len(blob) < _DATASET_HEADER.size:
        raise DataError(f"{path}: truncated dataset header")
    magic, version, n, f, k, fp = _DATASET_HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise DataError(f"{path}: not a dataset file")
    if version != DATASET_VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    off = _DATASET_HEADER.size
    need = off + 8 * n * f + 8 * n
    if len(blob) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(blob)}")
    X = np.frombuffer(blob, dtype="<f8", count=n * f, offset=off).reshape(n, f)
    y = np.frombuffer(blob, dtype="<i8", count=n, offset=off + 8 * n * f)
    return EncodedDataset(X.astype(np.float64), y.astype(np.int64), int(k), fp.hex())


def load_split(path, schema: FeatureSchema, delimiter=",", drop_columns=()) -> tuple[EncodedDataset, NormalizationReport]:
    """Ingest, normalize and transform one split with an existing schema."""
    table = ingest_csv(path, delimiter=delimiter, label_column=schema.label_column,
                       drop_columns=drop_columns)
    table, report = normalize_content(table)
    return transform(table, schema), report
