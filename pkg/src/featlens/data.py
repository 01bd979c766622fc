"""Shared data model: feature matrices, label tables, splits, embeddings, probe
results, and the report document that ties them together.

All containers are immutable after construction and safe to share across
threads. Numeric payloads are numpy arrays with the writeable flag cleared;
feature values are stored as float32 while downstream accumulations run in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

MISSING = "__missing__"

PARTITIONS = ("train", "validation", "test")


def _frozen_f32(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense n_samples x dim matrix of per-sample feature vectors.

    ids are opaque, unique strings; values are float32 row-major. Construction
    only checks structural consistency (shape agreement); content invariants
    such as finiteness and id uniqueness are checked by ``validate_features``.
    """

    ids: tuple[str, ...]
    values: np.ndarray

    def __init__(self, ids: Sequence[str], values) -> None:
        object.__setattr__(self, "ids", tuple(str(i) for i in ids))
        arr = _frozen_f32(values)
        if arr.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {arr.shape}")
        if arr.shape[0] != len(self.ids):
            raise ValueError(
                f"{len(self.ids)} ids but {arr.shape[0]} feature rows"
            )
        if arr.shape[0] > 0 and arr.shape[1] < 1:
            raise ValueError("dim must be >= 1")
        object.__setattr__(self, "values", arr)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def take(self, indices) -> "FeatureMatrix":
        """Row subset (copy), preserving the given index order."""
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(
            [self.ids[i] for i in idx], self.values[idx]
        )


@dataclass(frozen=True)
class LabelTable:
    """Categorical metadata columns keyed by sample id.

    Exactly one row per id. Missing values are the explicit sentinel
    ``MISSING``, never absent rows.
    """

    ids: tuple[str, ...]
    columns: Mapping[str, tuple[str, ...]]

    def __init__(self, ids: Sequence[str], columns: Mapping[str, Sequence[str]]) -> None:
        ids_t = tuple(str(i) for i in ids)
        if len(set(ids_t)) != len(ids_t):
            dupes = sorted({i for i in ids_t if ids_t.count(i) > 1})
            raise ValueError(f"duplicate ids in label table: {dupes[:5]}")
        cols = {}
        for name, vals in columns.items():
            vals_t = tuple(str(v) if v is not None and str(v) != "" else MISSING for v in vals)
            if len(vals_t) != len(ids_t):
                raise ValueError(
                    f"column {name!r} has {len(vals_t)} values for {len(ids_t)} ids"
                )
            cols[str(name)] = vals_t
        object.__setattr__(self, "ids", ids_t)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(ids_t)})

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def column_names(self) -> tuple[str, ...]:
        return tuple(self.columns.keys())

    def has_column(self, name: str) -> bool:
        return name in self.columns

    def values_for(self, column: str, ids: Sequence[str]) -> list[str]:
        """Column values for the given ids; raises KeyError on unknown id/column."""
        col = self.columns[column]
        index = self._index
        return [col[index[i]] for i in ids]

    def categories(self, column: str) -> tuple[str, ...]:
        """Sorted distinct category values of a column (sentinel included)."""
        return tuple(sorted(set(self.columns[column])))

    def with_column(self, name: str, values: Sequence[str]) -> "LabelTable":
        cols = dict(self.columns)
        cols[name] = tuple(values)
        return LabelTable(self.ids, cols)


@dataclass(frozen=True)
class Manifest:
    """Pointer to one tagged feature/label snapshot on disk.

    The checksum is the sha256 of the feature file bytes and is verified when
    the manifest is loaded, so reports can trust that a tag (e.g. "epoch-020")
    still refers to the bytes it was created from.
    """

    feature_source: str
    feature_format: str  # "csv" | "fbin"
    label_source: str
    tag: str
    checksum: str


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/validation/test assignment of sample ids.

    When built group-aware, every id sharing a group value lands in the same
    partition. ``warnings`` carries non-fatal verdicts such as a single group
    dominating the data.
    """

    assignment: Mapping[str, str]
    seed: int
    ratios: tuple[float, float, float]
    group_column: str | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        bad = {p for p in self.assignment.values() if p not in PARTITIONS}
        if bad:
            raise ValueError(f"unknown partitions {sorted(bad)}")

    def ids_in(self, partition: str) -> list[str]:
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        return [i for i, p in self.assignment.items() if p == partition]

    def counts(self) -> dict[str, int]:
        c = {p: 0 for p in PARTITIONS}
        for p in self.assignment.values():
            c[p] += 1
        return c


@dataclass(frozen=True)
class EmbeddingResult:
    """2-D coordinates per sample plus the parameters and seed that made them."""

    ids: tuple[str, ...]
    coords: np.ndarray
    params: Mapping[str, object]
    source_tag: str

    def __init__(self, ids, coords, params, source_tag) -> None:
        ids_t = tuple(str(i) for i in ids)
        arr = _frozen_f32(coords)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"coords must be n x 2, got shape {arr.shape}")
        if arr.shape[0] != len(ids_t):
            raise ValueError(f"{len(ids_t)} ids but {arr.shape[0]} coordinate rows")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("coords contain non-finite values")
        object.__setattr__(self, "ids", ids_t)
        object.__setattr__(self, "coords", arr)
        object.__setattr__(self, "params", dict(params))
        object.__setattr__(self, "source_tag", str(source_tag))


@dataclass(frozen=True)
class ProbeRun:
    """One training run of a linear probe: seeds, test accuracy, confusion."""

    seed: int
    split_seed: int
    test_accuracy: float
    confusion: np.ndarray  # m x m counts, rows = true class, cols = predicted
    n_excluded: int = 0  # test rows whose class was absent from train

    def __post_init__(self) -> None:
        conf = np.asarray(self.confusion, dtype=np.int64)
        conf.setflags(write=False)
        object.__setattr__(self, "confusion", conf)
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.test_accuracy} outside [0, 1]")


@dataclass(frozen=True)
class ProbeResult:
    """Aggregated linear-probe outcome for one label column."""

    label_column: str
    classes: tuple[str, ...]
    runs: tuple[ProbeRun, ...]
    mean_accuracy: float
    std_accuracy: float
    chance_baseline: float

    @staticmethod
    def from_runs(label_column, classes, runs, chance_baseline) -> "ProbeResult":
        accs = np.array([r.test_accuracy for r in runs], dtype=np.float64)
        return ProbeResult(
            label_column=str(label_column),
            classes=tuple(classes),
            runs=tuple(runs),
            mean_accuracy=float(accs.mean()),
            std_accuracy=float(accs.std()),
            chance_baseline=float(chance_baseline),
        )


@dataclass(frozen=True)
class ReportDocument:
    """Serializable aggregation of embeddings, metrics, and probe results.

    ``embeddings`` holds report cells (embedding + its metric values +
    identifying key); ``probes`` holds probe entries tagged with the dataset
    and feature space they were computed on. Every cell references a dataset
    tag present in ``datasets``.
    """

    version: str
    datasets: tuple[dict, ...]
    embeddings: tuple["EmbeddingCell", ...]
    probes: tuple["ProbeEntry", ...]
    generated_at: str
    failures: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        tags = {d["tag"] for d in self.datasets}
        for cell in self.embeddings:
            if cell.tag not in tags:
                raise ValueError(f"embedding cell {cell.key!r} references unknown tag {cell.tag!r}")
        for probe in self.probes:
            if probe.tag not in tags:
                raise ValueError(f"probe on {probe.result.label_column!r} references unknown tag {probe.tag!r}")


@dataclass(frozen=True)
class EmbeddingCell:
    """One grid cell of a report: an embedding plus its quality metrics."""

    key: str
    tag: str
    sample_size: int
    space: str  # "features" | "raw"
    embedding: EmbeddingResult
    metrics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProbeEntry:
    """A probe result in a report, tagged with dataset and input space."""

    tag: str
    space: str  # "features" | "embedding:<cell key>"
    result: ProbeResult


@dataclass(frozen=True)
class Violation:
    kind: str  # "duplicate_id" | "non_finite" | "shape_mismatch"
    detail: str
    rows: tuple[int, ...] = ()


@dataclass(frozen=True)
class ValidationVerdict:
    ok: bool
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_features(m: FeatureMatrix) -> ValidationVerdict:
    """Check FeatureMatrix invariants, returning a verdict instead of raising.

    Detects duplicate ids, non-finite values (with row indices), and
    id/row-count mismatches. ``verdict.ok`` is True iff all invariants hold.
    """
    violations: list[Violation] = []
    if len(m.ids) != m.values.shape[0]:
        violations.append(
            Violation("shape_mismatch", f"{len(m.ids)} ids vs {m.values.shape[0]} rows")
        )
    seen: dict[str, int] = {}
    dup_rows: dict[str, list[int]] = {}
    for row, sample_id in enumerate(m.ids):
        if sample_id in seen:
            dup_rows.setdefault(sample_id, [seen[sample_id]]).append(row)
        else:
            seen[sample_id] = row
    for sample_id in sorted(dup_rows):
        violations.append(
            Violation("duplicate_id", f"duplicate id {sample_id!r}", tuple(dup_rows[sample_id]))
        )
    if m.values.size:
        finite = np.isfinite(m.values)
        if not finite.all():
            bad_rows = np.flatnonzero(~finite.all(axis=1))
            violations.append(
                Violation(
                    "non_finite",
                    f"{int((~finite).sum())} non-finite values",
                    tuple(int(r) for r in bad_rows),
                )
            )
    return ValidationVerdict(ok=not violations, violations=tuple(violations))


@dataclass(frozen=True)
class JoinedData:
    """Feature rows aligned with one label column, in feature-matrix order."""

    matrix: FeatureMatrix
    labels: tuple[str, ...]
    n_dropped: int


def join(m: FeatureMatrix, t: LabelTable, column: str) -> JoinedData:
    """Align feature rows with a label column, restricted to shared ids.

    Output order follows the feature matrix. Ids missing from the label table
    are dropped and counted in ``n_dropped``. Raises KeyError for an unknown
    column.
    """
    if not t.has_column(column):
        raise KeyError(f"unknown label column {column!r}")
    index = t._index
    keep = [i for i, sample_id in enumerate(m.ids) if sample_id in index]
    dropped = m.n_samples - len(keep)
    kept_ids = [m.ids[i] for i in keep]
    labels = t.values_for(column, kept_ids)
    return JoinedData(matrix=m.take(keep), labels=tuple(labels), n_dropped=dropped)
