"""CSV ingestion, schema-driven encoding, seeded splits and group partitions."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_MISSING = ("", "?")
GroupKey = tuple[int, ...]


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Predicates


_NUMERIC_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}
_OPS = tuple(_NUMERIC_OPS) + ("==", "!=", "in", "not_in")


@dataclass(frozen=True)
class Predicate:
    """A test on one raw string value, e.g. ``age > 25`` or ``race == White``.

    Numeric comparisons parse the raw value as a float; equality and
    membership compare strings.
    """

    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise SchemaError(f"unknown predicate op {self.op!r}; expected one of {_OPS}")
        if self.op in ("in", "not_in") and not isinstance(self.value, (list, tuple)):
            raise SchemaError(f"op {self.op!r} needs a list value")

    def __call__(self, raw: str) -> bool:
        if self.op in _NUMERIC_OPS:
            try:
                x = float(raw)
            except ValueError:
                raise DataError(f"non-numeric value {raw!r} for predicate {self.op} {self.value}") from None
            return _NUMERIC_OPS[self.op](x, float(self.value))
        if self.op == "==":
            return raw == str(self.value)
        if self.op == "!=":
            return raw != str(self.value)
        members = {str(v) for v in self.value}
        return (raw in members) if self.op == "in" else (raw not in members)

    def to_json(self) -> dict:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"op": self.op, "value": value}

    @classmethod
    def from_json(cls, doc: dict) -> "Predicate":
        value = doc["value"]
        return cls(doc["op"], tuple(value) if isinstance(value, list) else value)


# ---------------------------------------------------------------------------
# Schema


@dataclass(frozen=True)
class SensitiveSpec:
    column: str
    one_if: Predicate
    names: tuple[str, str] = ("0", "1")  # display names for side 0 and side 1

    def side_of(self, name: str) -> int:
        """Resolve a side given as display name or as ``"0"``/``"1"``."""
        name = str(name)
        for side, display in enumerate(self.names):
            if name.lower() == display.lower():
                return side
        if name in ("0", "1"):
            return int(name)
        raise SchemaError(f"{name!r} is not a side of sensitive attribute {self.column!r} {self.names}")


@dataclass(frozen=True)
class FeatureSpec:
    """A feature column.

    ``bins`` turns a numeric column into a categorical one: sorted cut points
    ``e1 < e2 < ...`` give the levels ``<e1``, ``[e1,e2)``, ..., ``>=ek``.
    """

    name: str
    kind: str  # "numeric" | "categorical"
    bins: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name!r}: kind must be numeric or categorical, got {self.kind!r}")
        if self.bins is not None:
            if self.kind != "categorical":
                raise SchemaError(f"feature {self.name!r}: bins need kind categorical")
            if not self.bins or any(b >= c for b, c in zip(self.bins, self.bins[1:])):
                raise SchemaError(f"feature {self.name!r}: bins must be strictly increasing")

    def bin_levels(self) -> list[str]:
        e = [f"{b:g}" for b in self.bins]
        return [f"<{e[0]}", *(f"[{lo},{hi})" for lo, hi in zip(e, e[1:])), f">={e[-1]}"]

    def to_json(self) -> dict:
        doc = {"name": self.name, "kind": self.kind}
        if self.bins is not None:
            doc["bins"] = list(self.bins)
        return doc


@dataclass(frozen=True)
class RowFilter:
    column: str
    keep_if: Predicate


@dataclass(frozen=True)
class DatasetSchema:
    label_column: str
    positive_label: str
    sensitive: tuple[SensitiveSpec, ...]
    features: tuple[FeatureSpec, ...]
    include_sensitive_as_features: bool = True
    negative_label: str | None = None
    filters: tuple[RowFilter, ...] = ()
    missing_values: tuple[str, ...] = DEFAULT_MISSING
    name: str = ""

    def __post_init__(self):
        if not self.sensitive:
            raise SchemaError("schema needs at least one sensitive attribute")
        names = [s.column for s in self.sensitive]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate sensitive columns: {names}")

    @property
    def sensitive_names(self) -> list[str]:
        return [s.column for s in self.sensitive]

    def sensitive_index(self, column: str) -> int:
        try:
            return self.sensitive_names.index(column)
        except ValueError:
            raise SchemaError(f"unknown sensitive attribute {column!r}; have {self.sensitive_names}") from None

    def resolve_side(self, name: str) -> tuple[int, int]:
        """Map a display name such as ``"Female"`` to ``(attribute index, side)``."""
        hits = []
        for i, spec in enumerate(self.sensitive):
            for side, display in enumerate(spec.names):
                if display.lower() == str(name).lower():
                    hits.append((i, side))
        if len(hits) != 1:
            raise SchemaError(f"side name {name!r} matches {len(hits)} sensitive sides")
        return hits[0]

    def required_columns(self) -> list[str]:
        cols = [self.label_column, *self.sensitive_names, *(f.name for f in self.features)]
        cols += [f.column for f in self.filters]
        return list(dict.fromkeys(cols))

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "label": self.label_column,
            "positive_label": self.positive_label,
            "sensitive": [
                {"column": s.column, "one_if": s.one_if.to_json(), "names": list(s.names)}
                for s in self.sensitive
            ],
            "features": [f.to_json() for f in self.features],
            "include_sensitive_as_features": self.include_sensitive_as_features,
            "missing_values": list(self.missing_values),
        }
        if self.negative_label is not None:
            doc["negative_label"] = self.negative_label
        if self.filters:
            doc["filters"] = [{"column": f.column, **f.keep_if.to_json()} for f in self.filters]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSchema":
        try:
            sensitive = tuple(
                SensitiveSpec(s["column"], Predicate.from_json(s["one_if"]), tuple(s.get("names", ("0", "1"))))
                for s in doc["sensitive"]
            )
            features = tuple(
                FeatureSpec(f["name"], f.get("kind", "numeric"),
                            None if f.get("bins") is None else tuple(float(b) for b in f["bins"]))
                for f in doc["features"]
            )
            filters = tuple(RowFilter(f["column"], Predicate.from_json(f)) for f in doc.get("filters", ()))
            return cls(
                label_column=doc["label"],
                positive_label=str(doc["positive_label"]),
                sensitive=sensitive,
                features=features,
                include_sensitive_as_features=bool(doc.get("include_sensitive_as_features", True)),
                negative_label=doc.get("negative_label"),
                filters=filters,
                missing_values=tuple(doc.get("missing_values", DEFAULT_MISSING)),
                name=doc.get("name", ""),
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing key {exc}") from None


BUILTIN_SCHEMAS = ("adult", "compas", "bank", "heart")


def load_schema(path_or_name: str | Path) -> DatasetSchema:
    """Load a schema JSON file, or one of the bundled schemas by name."""
    path = Path(path_or_name)
    if path.is_file():
        return DatasetSchema.from_json(json.loads(path.read_text()))
    if str(path_or_name) in BUILTIN_SCHEMAS:
        text = resources.files("fairlens.schemas").joinpath(f"{path_or_name}.json").read_text()
        return DatasetSchema.from_json(json.loads(text))
    raise FileNotFoundError(f"no schema file or builtin schema named {str(path_or_name)!r}")


# ---------------------------------------------------------------------------
# Tables


@dataclass(frozen=True)
class RawTable:
    header: tuple[str, ...]
    records: tuple[dict[str, str], ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True, eq=False)
class DatasetTable:
    """Encoded rows: features ``X``, binary sensitive matrix ``A``, labels ``y``.

    ``row_ids`` point back at the raw CSV records the rows were encoded from,
    so corrupted labels can be written back out.
    """

    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    sensitive_names: tuple[str, ...]
    numeric_mask: np.ndarray  # True where a feature column is a standardizable numeric
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.features.shape[0] != n or self.sensitive.shape[0] != n:
            raise DataError(
                f"row count mismatch: features {self.features.shape[0]}, "
                f"sensitive {self.sensitive.shape[0]}, labels {n}"
            )
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match feature columns")
        if self.sensitive.shape[1] != len(self.sensitive_names):
            raise DataError("sensitive_names length does not match sensitive columns")
        if n and (not np.isin(self.labels, (0, 1)).all() or not np.isin(self.sensitive, (0, 1)).all()):
            raise DataError("labels and sensitive values must be 0/1")
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(n))
        for arr in (self.features, self.sensitive, self.labels, self.numeric_mask, self.row_ids):
            arr.flags.writeable = False

    @property
    def row_count(self) -> int:
        return int(self.labels.shape[0])

    def __len__(self) -> int:
        return self.row_count

    def take(self, idx: np.ndarray) -> "DatasetTable":
        return replace(
            self,
            features=self.features[idx],
            sensitive=self.sensitive[idx],
            labels=self.labels[idx],
            row_ids=self.row_ids[idx],
        )

    def with_labels(self, labels: np.ndarray) -> "DatasetTable":
        return replace(self, labels=np.asarray(labels, dtype=np.int8))

    def with_features(self, features: np.ndarray) -> "DatasetTable":
        return replace(self, features=features)


# ---------------------------------------------------------------------------
# Operations


def load_csv(path: str | Path, schema: DatasetSchema) -> RawTable:
    """Read a comma-separated file with a header row into string records."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        missing = [c for c in schema.required_columns() if c not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s) {missing}")
        dupes = {c for c in schema.required_columns() if header.count(c) > 1}
        if dupes:
            raise DataError(f"{path}: duplicate header column(s) {sorted(dupes)}")
        label_pos = header.index(schema.label_column)
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, header has {len(header)}")
            if row[label_pos].strip() in ("", *schema.missing_values):
                raise DataError(f"{path}: row {line_no} has no value for label column {schema.label_column!r}")
            records.append(dict(zip(header, (v.strip() for v in row))))
    return RawTable(header, tuple(records))


def encode(raw: RawTable, schema: DatasetSchema) -> DatasetTable:
    """Turn string records into a numeric table.

    Rows rejected by ``schema.filters`` or carrying a missing value in any
    used column are dropped (and counted in the log). Categorical levels are
    fitted on all surviving rows, so train/test splits share one encoding.
    """
    used = schema.required_columns()
    missing = set(schema.missing_values)
    keep: list[int] = []
    n_filtered = n_missing = 0
    for i, rec in enumerate(raw.records):
        if any(rec[c] in missing for c in used):
            n_missing += 1
            continue
        if not all(f.keep_if(rec[f.column]) for f in schema.filters):
            n_filtered += 1
            continue
        keep.append(i)
    if n_missing or n_filtered:
        logger.info(
            "encode %s: dropped %d rows with missing values and %d rows by filters; %d remain",
            schema.name or "dataset", n_missing, n_filtered, len(keep),
        )
    records = [raw.records[i] for i in keep]

    columns: list[np.ndarray] = []
    names: list[str] = []
    numeric: list[bool] = []
    for feat in schema.features:
        values = [rec[feat.name] for rec in records]
        if feat.kind == "numeric":
            try:
                columns.append(np.array([float(v) for v in values], dtype=float).reshape(-1, 1))
            except ValueError as exc:
                raise DataError(f"numeric feature {feat.name!r}: {exc}") from None
            names.append(feat.name)
            numeric.append(True)
        else:
            if feat.bins is not None:
                try:
                    idx = np.searchsorted(np.array(feat.bins), [float(v) for v in values], side="right")
                except ValueError as exc:
                    raise DataError(f"binned feature {feat.name!r}: {exc}") from None
                all_levels = feat.bin_levels()
                values = [all_levels[i] for i in idx]
                levels = [all_levels[i] for i in sorted(set(idx.tolist()))]
            else:
                levels = sorted(set(values))
            lookup = {lv: j for j, lv in enumerate(levels)}
            block = np.zeros((len(values), len(levels)))
            block[np.arange(len(values)), [lookup[v] for v in values]] = 1.0
            columns.append(block)
            names.extend(f"{feat.name}={lv}" for lv in levels)
            numeric.extend([False] * len(levels))

    sensitive = np.zeros((len(records), len(schema.sensitive)), dtype=np.int8)
    for j, spec in enumerate(schema.sensitive):
        for i, rec in enumerate(records):
            try:
                sensitive[i, j] = 1 if spec.one_if(rec[spec.column]) else 0
            except DataError as exc:
                raise DataError(f"sensitive column {spec.column!r}, source row {keep[i] + 2}: {exc}") from None
    if schema.include_sensitive_as_features:
        columns.append(sensitive.astype(float))
        names.extend(schema.sensitive_names)
        numeric.extend([False] * len(schema.sensitive))

    labels = np.array([rec[schema.label_column] == schema.positive_label for rec in records], dtype=np.int8)
    features = np.hstack(columns) if columns else np.zeros((len(records), 0))
    return DatasetTable(
        features=np.ascontiguousarray(features, dtype=float),
        sensitive=sensitive,
        labels=labels,
        feature_names=tuple(names),
        sensitive_names=tuple(schema.sensitive_names),
        numeric_mask=np.array(numeric, dtype=bool),
        row_ids=np.array(keep, dtype=np.int64),
    )


def load_dataset(data: str | Path, schema: DatasetSchema | str | Path) -> DatasetTable:
    if not isinstance(schema, DatasetSchema):
        schema = load_schema(schema)
    return encode(load_csv(data, schema), schema)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(n)
    cut = math.floor(train_fraction * n)
    return order[:cut], order[cut:]


def split(data: DatasetTable, train_fraction: float, seed: int) -> tuple[DatasetTable, DatasetTable]:
    """Uniform seeded permutation; the first ``floor(fraction * n)`` rows train."""
    train_idx, test_idx = split_indices(data.row_count, train_fraction, seed)
    return data.take(train_idx), data.take(test_idx)


@dataclass(frozen=True)
class Standardizer:
    columns: np.ndarray  # indices of standardized feature columns
    mean: np.ndarray
    scale: np.ndarray  # 1.0 for zero-variance columns, which are only centered

    def transform(self, table: DatasetTable) -> DatasetTable:
        X = np.array(table.features, dtype=float)
        X[:, self.columns] = (X[:, self.columns] - self.mean) / self.scale
        return table.with_features(X)


def fit_standardizer(train: DatasetTable) -> Standardizer:
    cols = np.flatnonzero(train.numeric_mask)
    block = train.features[:, cols]
    if train.row_count:
        mean = block.mean(axis=0)
        sd = block.std(axis=0)
    else:
        mean = np.zeros(len(cols))
        sd = np.zeros(len(cols))
    scale = np.where(sd > 0, sd, 1.0)
    return Standardizer(cols, mean, scale)


def standardize(train: DatasetTable, test: DatasetTable) -> tuple[DatasetTable, DatasetTable, Standardizer]:
    """Z-score numeric columns with statistics from ``train`` only."""
    stats = fit_standardizer(train)
    return stats.transform(train), stats.transform(test), stats


def partition_groups(data: DatasetTable | np.ndarray) -> dict[GroupKey, np.ndarray]:
    """Row indices for every joint assignment of the sensitive attributes present."""
    sensitive = data.sensitive if isinstance(data, DatasetTable) else np.asarray(data)
    if sensitive.ndim == 1:
        sensitive = sensitive.reshape(-1, 1)
    if sensitive.shape[0] == 0:
        return {}
    keys, inverse = np.unique(sensitive, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    return {
        tuple(int(v) for v in key): order[bounds[k]:bounds[k + 1]]
        for k, key in enumerate(keys)
    }


# ---------------------------------------------------------------------------
# Writing tables back out


SENSITIVE_PREFIX = "sensitive:"
LABEL_COLUMN = "label"


def write_csv(table: DatasetTable, path: str | Path) -> DatasetSchema:
    """Write an encoded table as CSV and return the schema that reads it back.

    Floats are written with ``repr`` so a reload reproduces them bit for bit.
    """
    path = Path(path)
    header = [*table.feature_names, *(SENSITIVE_PREFIX + s for s in table.sensitive_names), LABEL_COLUMN]
    if len(set(header)) != len(header):
        raise DataError("encoded column names collide; cannot write table")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for x, a, y in zip(table.features, table.sensitive, table.labels):
            writer.writerow([*(repr(float(v)) for v in x), *(str(int(v)) for v in a), str(int(y))])
    return DatasetSchema(
        label_column=LABEL_COLUMN,
        positive_label="1",
        sensitive=tuple(
            SensitiveSpec(SENSITIVE_PREFIX + s, Predicate("==", "1")) for s in table.sensitive_names
        ),
        features=tuple(FeatureSpec(n, "numeric") for n in table.feature_names),
        include_sensitive_as_features=False,
        missing_values=(),
    )


def write_raw_csv(raw: RawTable, path: str | Path, overrides: dict[int, dict[str, str]] | None = None) -> None:
    """Write raw records, replacing fields of selected records (by index)."""
    overrides = overrides or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(raw.header)
        for i, rec in enumerate(raw.records):
            patch = overrides.get(i)
            if patch:
                rec = {**rec, **patch}
            writer.writerow([rec[c] for c in raw.header])


def negative_label_for(raw: RawTable, schema: DatasetSchema) -> str:
    """The string written for a label flipped to 0."""
    if schema.negative_label is not None:
        return schema.negative_label
    counts: dict[str, int] = {}
    for rec in raw.records:
        v = rec[schema.label_column]
        if v != schema.positive_label:
            counts[v] = counts.get(v, 0) + 1
    if not counts:
        raise DataError("no negative label value observed; set negative_label in the schema")
    return max(sorted(counts), key=counts.__getitem__)


def group_label(key: GroupKey, names: Sequence[str]) -> str:
    return ",".join(f"{n}={v}" for n, v in zip(names, key))


def iter_cells(data: DatasetTable) -> Iterable[tuple[GroupKey, int, np.ndarray]]:
    """Yield ``(group, class, row indices)`` for every nonempty (group, class) cell."""
    for key, idx in partition_groups(data).items():
        for c in (0, 1):
            rows = idx[data.labels[idx] == c]
            if rows.size:
                yield key, c, rows
