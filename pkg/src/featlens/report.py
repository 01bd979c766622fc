"""Pipeline orchestration and report serialization.

``run`` executes a RunPlan (manifest tags x sample sizes x UMAP parameter
grid), scoring every embedding and probing every requested label column, and
aggregates the results into a ReportDocument. ``write_report`` serializes
the document as canonical JSON next to a plain-text summary and the static
web-explorer assets, producing a self-contained directory.

Per-cell failures are recorded in the report and do not abort the run.
"""

from __future__ import annotations

import datetime as _dt
import json
import shutil
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import embed, metrics as qmetrics
from .data import (
    EmbeddingCell,
    EmbeddingResult,
    FeatureMatrix,
    LabelTable,
    Manifest,
    MISSING,
    ProbeEntry,
    ReportDocument,
    validate_features,
)
from .io import load_manifest_data
from .neighbors import knn
from .probe import ProbeConfig, train_probe, probe_on_embedding
from .sampling import group_stratified_split, subsample

SCHEMA_VERSION = "1.0"

DEFAULT_SAMPLE_SIZES = (10_000, 100_000)


@dataclass(frozen=True)
class RunPlan:
    """Everything one report run needs.

    The UMAP grid is the cross product of ``n_neighbors_grid`` and
    ``min_dist_grid`` per manifest tag and sample size. ``raw_tags`` marks
    manifests holding raw (model-free) features: they are embedded for
    side-by-side viewing but not probed.
    """

    manifests: tuple[Manifest, ...]
    n_neighbors_grid: tuple[int, ...] = (15,)
    min_dist_grid: tuple[float, ...] = (0.1,)
    sample_sizes: tuple[int, ...] = DEFAULT_SAMPLE_SIZES
    probe_columns: tuple[str, ...] = ()
    metric_columns: tuple[str, ...] | None = None  # None = all label columns
    probe_embeddings: bool = False
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    split_group_column: str | None = None
    stratify_column: str | None = None
    metric: str = "euclidean"
    knn_k: int = 10
    cpd_pairs: int = 100_000
    metric_cap: int = 10_000  # row cap for the O(n^2) metrics
    umap_epochs: int | None = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    seed: int = 0
    deterministic: bool = True
    raw_tags: tuple[str, ...] = ()
    use_cache: bool = True  # pure memoization; disabling must not change results

    def __post_init__(self) -> None:
        if not self.manifests:
            raise ValueError("plan needs at least one manifest")
        if not self.n_neighbors_grid or not self.min_dist_grid:
            raise ValueError("empty UMAP parameter grid")
        if any(s < min(self.n_neighbors_grid) + 1 for s in self.sample_sizes):
            raise ValueError("sample sizes must exceed n_neighbors")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _metric_rows(n: int, cap: int, seed: int) -> np.ndarray | None:
    """Row subset for quadratic-cost metrics; None means use all rows."""
    if n <= cap:
        return None
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


def _cell_metrics(
    plan: RunPlan,
    sub: FeatureMatrix,
    coords: np.ndarray,
    labels: LabelTable,
    columns: tuple[str, ...],
) -> dict:
    rows = _metric_rows(sub.n_samples, plan.metric_cap, plan.seed)
    if rows is None:
        high = sub.values
        low = coords
        ids = sub.ids
    else:
        high = sub.values[rows]
        low = coords[rows]
        ids = [sub.ids[i] for i in rows]

    sil: dict[str, float | None] = {}
    sil_features: dict[str, float | None] = {}
    for column in columns:
        values = labels.values_for(column, ids)
        keep = [i for i, v in enumerate(values) if v != MISSING]
        kept_labels = [values[i] for i in keep]
        if len(set(kept_labels)) < 2 or len(keep) < 3:
            sil[column] = None
            sil_features[column] = None
            continue
        sil[column] = qmetrics.silhouette(low[keep], kept_labels)
        sil_features[column] = qmetrics.silhouette(high[keep], kept_labels, plan.metric)

    k = min(plan.knn_k, len(ids) - 1)
    return {
        "silhouette": sil,
        "silhouette_features": sil_features,
        "knn_preservation": {
            "value": qmetrics.knn_preservation(high, low, k=k, metric="euclidean"),
            "k": k,
        },
        "cpd": {
            "value": qmetrics.cpd(high, low, plan.cpd_pairs, plan.seed, "euclidean"),
            "n_pairs": plan.cpd_pairs,
            "seed": plan.seed,
        },
        "metric_sample": None if rows is None else int(len(ids)),
    }


def run(plan: RunPlan) -> ReportDocument:
    """Execute a plan: embeddings, metrics, and probes for every grid cell.

    Feature loads and kNN graphs are cached across cells sharing
    (tag, sample size, n_neighbors); caching is pure memoization, so results
    match a cache-free run exactly. Any stage error is recorded per cell and
    the run continues.
    """
    datasets = []
    embeddings: list[EmbeddingCell] = []
    probes: list[ProbeEntry] = []
    failures: list[dict] = []
    loaded: dict[str, tuple[FeatureMatrix, LabelTable]] = {}

    for manifest in plan.manifests:
        try:
            features, labels = load_manifest_data(manifest)
            verdict = validate_features(features)
            if not verdict.ok:
                raise ValueError(
                    "invalid features: "
                    + "; ".join(v.detail for v in verdict.violations)
                )
        except Exception as exc:
            failures.append({"key": manifest.tag, "stage": "load", "error": str(exc)})
            continue
        loaded[manifest.tag] = (features, labels)
        datasets.append(
            {
                "tag": manifest.tag,
                "feature_source": manifest.feature_source,
                "feature_format": manifest.feature_format,
                "label_source": manifest.label_source,
                "checksum": manifest.checksum,
                "n_samples": features.n_samples,
                "dim": features.dim,
                "label_columns": list(labels.column_names()),
            }
        )

    knn_cache: dict[tuple, object] = {}
    for manifest in plan.manifests:
        if manifest.tag not in loaded:
            continue
        tag = manifest.tag
        features, labels = loaded[tag]
        is_raw = tag in plan.raw_tags

        if not is_raw:
            for column in plan.probe_columns:
                try:
                    probes.append(_probe_features(plan, tag, features, labels, column))
                except Exception as exc:
                    failures.append(
                        {"key": f"{tag}/probe:{column}", "stage": "probe", "error": str(exc)}
                    )

        metric_columns = (
            plan.metric_columns
            if plan.metric_columns is not None
            else labels.column_names()
        )
        for size in plan.sample_sizes:
            size = min(size, features.n_samples)
            sub = subsample(features, labels, size, plan.seed, plan.stratify_column)
            order = np.argsort(np.asarray(sub.ids, dtype=object), kind="stable")
            sub = sub.take(order)  # id-sorted: randomness keys to ids, not row order
            for n_neighbors in plan.n_neighbors_grid:
                if sub.n_samples <= n_neighbors:
                    failures.append(
                        {
                            "key": f"{tag}/s{size}/k{n_neighbors}",
                            "stage": "knn",
                            "error": f"sample size {sub.n_samples} <= n_neighbors {n_neighbors}",
                        }
                    )
                    continue
                for min_dist in plan.min_dist_grid:
                    key = f"{tag}/s{size}/k{n_neighbors}/d{min_dist:g}"
                    if is_raw:
                        key += "/raw"
                    try:
                        cache_key = (tag, size, n_neighbors, plan.metric)
                        if plan.use_cache and cache_key in knn_cache:
                            graph = knn_cache[cache_key]
                        else:
                            graph = knn(sub.values, n_neighbors, plan.metric, seed=plan.seed)
                            if plan.use_cache:
                                knn_cache[cache_key] = graph
                        cell = _embed_cell(
                            plan, tag, is_raw, size, sub, graph,
                            n_neighbors, min_dist, labels, metric_columns,
                        )
                        embeddings.append(cell)
                    except Exception as exc:
                        failures.append(
                            {"key": key, "stage": "embed", "error": str(exc)}
                        )
                        continue
                    if plan.probe_embeddings and not is_raw:
                        for column in plan.probe_columns:
                            try:
                                probes.append(
                                    _probe_cell(plan, tag, cell, labels, column)
                                )
                            except Exception as exc:
                                failures.append(
                                    {
                                        "key": f"{key}/probe:{column}",
                                        "stage": "probe",
                                        "error": str(exc),
                                    }
                                )

    return ReportDocument(
        version=SCHEMA_VERSION,
        datasets=tuple(datasets),
        embeddings=tuple(embeddings),
        probes=tuple(probes),
        generated_at=_now(),
        failures=tuple(failures),
    )


def _probe_features(plan, tag, features, labels, column) -> ProbeEntry:
    from .data import join

    joined = join(features, labels, column)
    splits = [
        group_stratified_split(
            labels,
            plan.split_ratios,
            plan.split_group_column,
            seed=plan.seed + r,
            ids=list(joined.matrix.ids),
        )
        for r in range(plan.probe.runs)
    ]
    result = train_probe(
        joined.matrix, joined.labels, splits, plan.probe, label_column=column
    )
    return ProbeEntry(tag=tag, space="features", result=result)


def _embed_cell(
    plan, tag, is_raw, size, sub, graph, n_neighbors, min_dist, labels, metric_columns
) -> EmbeddingCell:
    params = embed.UmapParams(
        n_neighbors=n_neighbors,
        min_dist=min_dist,
        n_epochs=plan.umap_epochs,
        seed=plan.seed,
        metric=plan.metric,
        parallel=not plan.deterministic,
    )
    fg = embed.fuzzy_graph(graph)
    coords = embed.optimize_layout(fg, params)
    result = EmbeddingResult(
        ids=sub.ids,
        coords=coords,
        params={
            "n_neighbors": n_neighbors,
            "min_dist": min_dist,
            "spread": params.spread,
            "n_epochs": params.resolve_epochs(sub.n_samples),
            "negative_sample_rate": params.negative_sample_rate,
            "initial_lr": params.initial_lr,
            "seed": params.seed,
            "metric": params.metric,
            "init": params.init,
        },
        source_tag=tag,
    )
    key = f"{tag}/s{size}/k{n_neighbors}/d{min_dist:g}" + ("/raw" if is_raw else "")
    cell_labels = {
        column: tuple(labels.values_for(column, sub.ids)) for column in metric_columns
    }
    cell_metrics = _cell_metrics(plan, sub, coords, labels, tuple(metric_columns))
    return EmbeddingCell(
        key=key,
        tag=tag,
        sample_size=size,
        space="raw" if is_raw else "features",
        embedding=result,
        metrics={**cell_metrics, "labels": cell_labels},
    )


def _probe_cell(plan, tag, cell, labels, column) -> ProbeEntry:
    values = labels.values_for(column, cell.embedding.ids)
    splits = [
        group_stratified_split(
            labels,
            plan.split_ratios,
            plan.split_group_column,
            seed=plan.seed + r,
            ids=list(cell.embedding.ids),
        )
        for r in range(plan.probe.runs)
    ]
    result = probe_on_embedding(
        cell.embedding, values, splits, plan.probe, label_column=column
    )
    return ProbeEntry(tag=tag, space=f"embedding:{cell.key}", result=result)


def _sig6(x: float) -> float:
    return float(f"{float(x):.6g}")


def document_to_dict(doc: ReportDocument) -> dict:
    """Plain-dict form of a report, coordinates rounded to 6 significant digits.

    Ids and label values are stored once per sample set; embeddings reference
    their sample set by key and store coordinates as a flat array.
    """
    sample_sets: dict[tuple, str] = {}
    sample_set_entries = []
    embeddings = []
    for cell in doc.embeddings:
        ids = cell.embedding.ids
        labels = cell.metrics.get("labels", {})
        set_key_tuple = (cell.tag, cell.sample_size, cell.space, ids)
        if set_key_tuple not in sample_sets:
            set_key = f"{cell.tag}/s{cell.sample_size}" + (
                "/raw" if cell.space == "raw" else ""
            )
            sample_sets[set_key_tuple] = set_key
            sample_set_entries.append(
                {
                    "key": set_key,
                    "tag": cell.tag,
                    "ids": list(ids),
                    "labels": {c: list(v) for c, v in labels.items()},
                }
            )
        coords = cell.embedding.coords
        metrics_no_labels = {k: v for k, v in cell.metrics.items() if k != "labels"}
        embeddings.append(
            {
                "key": cell.key,
                "tag": cell.tag,
                "space": cell.space,
                "sample_set": sample_sets[set_key_tuple],
                "sample_size": cell.sample_size,
                "params": dict(cell.embedding.params),
                "coords": [_sig6(v) for v in coords.ravel().tolist()],
                "metrics": metrics_no_labels,
            }
        )
    probes = []
    for entry in doc.probes:
        r = entry.result
        probes.append(
            {
                "tag": entry.tag,
                "space": entry.space,
                "label_column": r.label_column,
                "classes": list(r.classes),
                "runs": [
                    {
                        "seed": run.seed,
                        "split_seed": run.split_seed,
                        "test_accuracy": run.test_accuracy,
                        "confusion": run.confusion.tolist(),
                        "n_excluded": run.n_excluded,
                    }
                    for run in r.runs
                ],
                "mean_accuracy": r.mean_accuracy,
                "std_accuracy": r.std_accuracy,
                "chance_baseline": r.chance_baseline,
            }
        )
    return {
        "version": doc.version,
        "generated_at": doc.generated_at,
        "datasets": [dict(d) for d in doc.datasets],
        "sample_sets": sample_set_entries,
        "embeddings": embeddings,
        "probes": probes,
        "failures": [dict(f) for f in doc.failures],
    }


def canonical_json(payload: dict) -> str:
    """Canonical serialization: sorted keys, compact separators, newline end."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def summary_text(doc: ReportDocument) -> str:
    lines = [f"featlens report {doc.version} generated {doc.generated_at}", ""]
    lines.append("probes (mean accuracy +/- std vs chance):")
    if not doc.probes:
        lines.append("  none")
    for entry in doc.probes:
        r = entry.result
        gap = r.mean_accuracy - r.chance_baseline
        lines.append(
            f"  [{entry.tag}] {r.label_column} ({entry.space}): "
            f"{r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f} "
            f"(chance {r.chance_baseline:.4f}, gap {gap:+.4f}, "
            f"{len(r.runs)} runs)"
        )
    lines.append("")
    lines.append("embeddings:")
    if not doc.embeddings:
        lines.append("  none")
    for cell in doc.embeddings:
        knn_p = cell.metrics.get("knn_preservation", {})
        cpd_m = cell.metrics.get("cpd", {})
        sil = cell.metrics.get("silhouette", {})
        sil_txt = ", ".join(
            f"{c}={v:.3f}" for c, v in sorted(sil.items()) if v is not None
        )
        lines.append(
            f"  {cell.key}: knn_preservation={knn_p.get('value', float('nan')):.3f} "
            f"(k={knn_p.get('k')}), cpd={cpd_m.get('value', float('nan')):.3f}, "
            f"silhouette[{sil_txt}]"
        )
    if doc.failures:
        lines.append("")
        lines.append("failures:")
        for f in doc.failures:
            lines.append(f"  {f['key']} [{f['stage']}]: {f['error']}")
    lines.append("")
    return "\n".join(lines)


def write_report(doc: ReportDocument, out_dir) -> Path:
    """Write report.json, summary.txt, and the explorer assets into a directory.

    The resulting directory is a self-contained static site: open
    ``index.html`` (served from the directory) and it loads ``report.json``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe_path = out / ".write_probe"
        probe_path.write_text("")
        probe_path.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    (out / "report.json").write_text(canonical_json(document_to_dict(doc)), encoding="utf-8")
    (out / "summary.txt").write_text(summary_text(doc), encoding="utf-8")
    _copy_explorer_assets(out)
    return out


def _copy_explorer_assets(out: Path) -> None:
    assets = resources.files("featlens").joinpath("explorer_static")
    if not assets.is_dir():
        return
    for entry in assets.iterdir():
        if entry.name == "index.html":
            shutil.copyfile(str(entry), str(out / entry.name))
        else:
            target = out / "assets"
            target.mkdir(exist_ok=True)
            shutil.copyfile(str(entry), str(target / entry.name))


def format_exception(exc: BaseException) -> str:
    return "".join(traceback.format_exception_only(type(exc), exc)).strip()
