"""Loading and writing feature/label files.

Formats:
  - feature CSV: UTF-8, header ``id,f0,f1,...,f{d-1}``, one row per sample.
  - feature binary "fbin": magic ``FINS``, u16 version (=1), u32 dim,
    u64 count, count*dim little-endian float32 row-major, then a u32
    byte-length-prefixed UTF-8 block of newline-separated ids. All integers
    little-endian.
  - label CSV: UTF-8, header ``id,<name>,...``; an empty cell is the missing
    sentinel.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import FeatureMatrix, LabelTable, Manifest, MISSING

FBIN_MAGIC = b"FINS"
FBIN_VERSION = 1


class DataFormatError(ValueError):
    """Malformed or truncated input file."""


def load_features(path, fmt: str | None = None, normalize: bool = False) -> FeatureMatrix:
    """Load a FeatureMatrix from ``path``.

    ``fmt`` is "csv" or "fbin"; when omitted it is inferred from the file
    suffix. ``normalize`` optionally L2-normalizes each row at ingest
    (default off). Row order is preserved from the file.
    """
    path = Path(path)
    if fmt is None:
        fmt = "fbin" if path.suffix == ".fbin" else "csv"
    if fmt == "csv":
        m = _load_features_csv(path)
    elif fmt == "fbin":
        m = _load_features_fbin(path)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")
    if normalize:
        norms = np.linalg.norm(m.values.astype(np.float64), axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        m = FeatureMatrix(m.ids, m.values / norms)
    return m


def _load_features_csv(path: Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "id":
            raise DataFormatError(
                f"{path}: malformed header {header[:4]!r}, expected id,f0,f1,..."
            )
        dim = len(header) - 1
        ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: row has {len(row) - 1} values, header declares {dim}"
                )
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            ids.append(row[0])
        values = np.asarray(rows, dtype=np.float32).reshape(len(ids), dim)
        return FeatureMatrix(ids, values)


def _load_features_fbin(path: Path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    header = struct.calcsize("<4sHIQ")
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, dim, count = struct.unpack_from("<4sHIQ", raw, 0)
    if magic != FBIN_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FBIN_VERSION:
        raise DataFormatError(f"{path}: unsupported fbin version {version}")
    value_bytes = 4 * dim * count
    if len(raw) < header + value_bytes:
        have = (len(raw) - header) // (4 * dim) if dim else 0
        raise DataFormatError(
            f"{path}: truncated, declares {count} rows but holds {have} complete rows"
        )
    values = np.frombuffer(
        raw, dtype="<f4", count=dim * count, offset=header
    ).reshape(count, dim)
    offset = header + value_bytes
    if len(raw) < offset + 4:
        raise DataFormatError(f"{path}: missing id block")
    (id_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + id_len:
        raise DataFormatError(f"{path}: id block truncated")
    id_block = raw[offset : offset + id_len].decode("utf-8")
    ids = id_block.split("\n") if id_block else []
    if len(ids) != count:
        raise DataFormatError(f"{path}: {len(ids)} ids for {count} rows")
    return FeatureMatrix(ids, values)


def write_features(m: FeatureMatrix, path, fmt: str | None = None) -> None:
    """Write a FeatureMatrix as CSV or fbin (inferred from suffix by default)."""
    path = Path(path)
    if fmt is None:
        fmt = "fbin" if path.suffix == ".fbin" else "csv"
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + [f"f{i}" for i in range(m.dim)])
            for sample_id, row in zip(m.ids, m.values):
                writer.writerow([sample_id] + [repr(float(v)) for v in row])
    elif fmt == "fbin":
        id_block = "\n".join(m.ids).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sHIQ", FBIN_MAGIC, FBIN_VERSION, m.dim, m.n_samples))
            fh.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", len(id_block)))
            fh.write(id_block)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def load_labels(path) -> LabelTable:
    """Load a LabelTable from a CSV with header ``id,<col>,...``.

    Empty cells become the missing sentinel. Duplicate ids and empty files
    are errors.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "id":
            raise DataFormatError(
                f"{path}: malformed header {header[:4]!r}, expected id,<col>,..."
            )
        names = header[1:]
        ids: list[str] = []
        cols: list[list[str]] = [[] for _ in names]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: row has {len(row)} cells, header declares {len(header)}"
                )
            ids.append(row[0])
            for j, cell in enumerate(row[1:]):
                cols[j].append(cell if cell != "" else MISSING)
        if not ids:
            raise DataFormatError(f"{path}: no data rows")
        try:
            return LabelTable(ids, dict(zip(names, cols)))
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from None


def write_labels(t: LabelTable, path) -> None:
    names = t.column_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + list(names))
        for i, sample_id in enumerate(t.ids):
            writer.writerow([sample_id] + [t.columns[n][i] for n in names])


def file_checksum(path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def make_manifest(feature_source, label_source, tag: str, fmt: str | None = None) -> Manifest:
    """Build a Manifest for a feature/label pair, hashing the feature bytes."""
    feature_source = Path(feature_source)
    if fmt is None:
        fmt = "fbin" if feature_source.suffix == ".fbin" else "csv"
    return Manifest(
        feature_source=str(feature_source),
        feature_format=fmt,
        label_source=str(label_source),
        tag=tag,
        checksum=file_checksum(feature_source),
    )


def load_manifest_data(
    manifest: Manifest, normalize: bool = False
) -> tuple[FeatureMatrix, LabelTable]:
    """Load the files a manifest points at, verifying the feature checksum."""
    actual = file_checksum(manifest.feature_source)
    if actual != manifest.checksum:
        raise DataFormatError(
            f"{manifest.feature_source}: checksum mismatch for tag {manifest.tag!r} "
            f"(expected {manifest.checksum}, got {actual})"
        )
    features = load_features(manifest.feature_source, manifest.feature_format, normalize)
    labels = load_labels(manifest.label_source)
    return features, labels


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.__dict__, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> Manifest:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return Manifest(**payload)
