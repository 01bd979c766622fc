"""Subsampling, top-k class balancing, and group-aware stratified splits.

All operations are pure and deterministic for a fixed seed: randomness comes
from explicitly seeded generators, and every tie-break is lexicographic on
category/group name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, LabelTable, MISSING, PARTITIONS, SplitAssignment


@dataclass(frozen=True)
class BalanceSpec:
    """Keep the ``top_k`` most frequent categories of ``column`` and equalize counts."""

    column: str
    top_k: int
    per_class_cap: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def subsample(
    m: FeatureMatrix,
    t: LabelTable | None,
    n: int,
    seed: int,
    stratify_by: str | None = None,
) -> FeatureMatrix:
    """Random subset of ``n`` rows without replacement, preserving row order.

    When ``stratify_by`` is set, rows are drawn proportionally per category
    with largest-remainder rounding of the per-category quotas. If ``n``
    covers the whole matrix, the input is returned unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= m.n_samples:
        return m
    rng = np.random.default_rng(seed)
    if stratify_by is None:
        keep = np.sort(rng.choice(m.n_samples, size=n, replace=False))
        return m.take(keep)

    if t is None or not t.has_column(stratify_by):
        raise KeyError(f"unknown stratify column {stratify_by!r}")
    labels = t.values_for(stratify_by, m.ids)
    by_cat: dict[str, list[int]] = {}
    for row, cat in enumerate(labels):
        by_cat.setdefault(cat, []).append(row)
    quotas = _largest_remainder_quotas(
        {cat: len(rows) for cat, rows in by_cat.items()}, n
    )
    keep: list[int] = []
    for cat in sorted(by_cat):
        rows = by_cat[cat]
        take = quotas[cat]
        if take >= len(rows):
            keep.extend(rows)
        else:
            keep.extend(rng.choice(rows, size=take, replace=False))
    return m.take(np.sort(np.asarray(keep, dtype=np.int64)))


def _largest_remainder_quotas(counts: dict[str, int], n: int) -> dict[str, int]:
    total = sum(counts.values())
    raw = {cat: n * c / total for cat, c in counts.items()}
    quotas = {cat: int(np.floor(v)) for cat, v in raw.items()}
    short = n - sum(quotas.values())
    # ties on the fractional remainder resolve lexicographically
    order = sorted(counts, key=lambda cat: (-(raw[cat] - quotas[cat]), cat))
    for cat in order[:short]:
        quotas[cat] += 1
    return quotas


def select_top_k_balance(
    m: FeatureMatrix, t: LabelTable, spec: BalanceSpec
) -> FeatureMatrix:
    """Restrict to the ``top_k`` largest categories, downsampled to equal counts.

    Category size ties break lexicographically on category name. Each kept
    category is downsampled (seeded, without replacement) to
    ``min(smallest kept category, per_class_cap)``. The missing sentinel is
    never a candidate category. Raises ValueError when fewer than ``top_k``
    non-empty categories exist.
    """
    if not t.has_column(spec.column):
        raise KeyError(f"unknown column {spec.column!r}")
    labels = t.values_for(spec.column, m.ids)
    by_cat: dict[str, list[int]] = {}
    for row, cat in enumerate(labels):
        if cat != MISSING:
            by_cat.setdefault(cat, []).append(row)
    if len(by_cat) < spec.top_k:
        raise ValueError(
            f"column {spec.column!r} has {len(by_cat)} non-empty categories, need {spec.top_k}"
        )
    ranked = sorted(by_cat, key=lambda cat: (-len(by_cat[cat]), cat))
    kept = ranked[: spec.top_k]
    target = min(len(by_cat[cat]) for cat in kept)
    if spec.per_class_cap is not None:
        target = min(target, spec.per_class_cap)
    rng = np.random.default_rng(spec.seed)
    keep: list[int] = []
    for cat in sorted(kept):
        rows = by_cat[cat]
        if target >= len(rows):
            keep.extend(rows)
        else:
            keep.extend(rng.choice(rows, size=target, replace=False))
    return m.take(np.sort(np.asarray(keep, dtype=np.int64)))


def group_stratified_split(
    t: LabelTable,
    ratios: tuple[float, float, float],
    group_column: str | None = None,
    seed: int = 0,
    ids: list[str] | None = None,
) -> SplitAssignment:
    """Assign ids to train/validation/test, keeping groups intact.

    Groups (unique values of ``group_column``) are shuffled with ``seed`` and
    greedily given to the partition whose realized sample fraction is
    furthest below its target ratio. With ``group_column`` unset, each sample
    is its own group. ``ids`` restricts the split to a subset of the table
    (defaults to all rows).

    A group holding more than ``max(ratios)`` of all samples makes the
    targets unreachable; that produces a warning on the result, not an error.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if ids is None:
        ids = list(t.ids)
    if group_column is not None and not t.has_column(group_column):
        raise KeyError(f"unknown group column {group_column!r}")

    if group_column is None:
        groups = {sample_id: [sample_id] for sample_id in ids}
    else:
        groups = {}
        for sample_id, value in zip(ids, t.values_for(group_column, ids)):
            groups.setdefault(value, []).append(sample_id)

    total = len(ids)
    warnings: list[str] = []
    if total == 0:
        return SplitAssignment({}, seed, ratios, group_column, ())
    largest = max(len(members) for members in groups.values())
    if largest / total > max(ratios) + 1e-12:
        warnings.append(
            f"a single group holds {largest}/{total} samples, exceeding the "
            f"largest target ratio {max(ratios):.3f}; targets are unreachable"
        )

    rng = np.random.default_rng(seed)
    names = sorted(groups)
    order = rng.permutation(len(names))
    counts = np.zeros(3, dtype=np.int64)
    targets = np.asarray(ratios, dtype=np.float64)
    assignment: dict[str, str] = {}
    for gi in order:
        members = groups[names[gi]]
        deficit = targets - counts / total
        part = int(np.argmax(deficit))  # argmax ties resolve train > validation > test
        for sample_id in members:
            assignment[sample_id] = PARTITIONS[part]
        counts[part] += len(members)
    return SplitAssignment(assignment, seed, ratios, group_column, tuple(warnings))
