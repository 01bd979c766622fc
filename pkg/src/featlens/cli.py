"""Command-line interface.

Subcommands: gen, validate, split, balance, umap, probe, report. Exit codes:
0 success, 1 usage error, 2 data error. ``--seed``, ``--threads``, and
``--deterministic`` are global; the FI_THREADS environment variable mirrors
``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import LabelTable, join, validate_features
from .embed import UmapParams, umap
from .io import (
    DataFormatError,
    load_features,
    load_labels,
    make_manifest,
    write_features,
    write_labels,
)
from .probe import ProbeConfig, train_probe
from .report import RunPlan, run, write_report
from .sampling import BalanceSpec, group_stratified_split, select_top_k_balance, subsample
from .synth import BatchEffectSpec, BlobSpec, gen_blobs, inject_batch_effect

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated fractions")
    return tuple(parts)  # type: ignore[return-value]


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _grid(text: str) -> tuple[tuple[int, ...], tuple[float, ...]]:
    try:
        neighbors, dists = text.split(":")
        return (
            tuple(int(v) for v in neighbors.split(",")),
            tuple(float(v) for v in dists.split(",")),
        )
    except ValueError:
        raise argparse.ArgumentTypeError(
            "grid must look like '15:0.1' or '5,15,50:0.0,0.1,0.5'"
        ) from None


def _add_globals(parser: argparse.ArgumentParser, suppress: bool = False) -> None:
    """Global flags, accepted before or after the subcommand."""

    def dflt(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument(
        "--seed", type=int, default=dflt(0), help="global random seed"
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=dflt(int(os.environ.get("FI_THREADS", "0")) or None),
        help="worker threads for parallel kernels (FI_THREADS mirrors this)",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        default=dflt(False),
        help="force single-threaded kernels for bit-reproducible output",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="featlens", description=__doc__)
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_cmd(name, help_text):
        cmd = sub.add_parser(name, help=help_text)
        _add_globals(cmd, suppress=True)
        return cmd

    p = add_cmd("gen", "generate a synthetic corpus with optional site effect")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--within-std", type=float, default=1.0)
    p.add_argument("--sites", type=int, default=0, help="0 disables the site effect")
    p.add_argument("--offset", type=float, default=0.0, help="site offset magnitude")
    p.add_argument("--scale-jitter", type=float, default=0.0)
    p.add_argument("--skew", type=float, default=0.0)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)

    p = add_cmd("validate", "check a feature file against its invariants")
    p.add_argument("--features", required=True)
    p.add_argument("--format", choices=("csv", "fbin"), default=None)

    p = add_cmd("split", "group-aware stratified train/validation/test split")
    p.add_argument("--labels", required=True)
    p.add_argument("--ratios", type=_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--group-column", default=None)
    p.add_argument("--out", required=True, help="CSV of id,partition")

    p = add_cmd("balance", "restrict to top-k categories at equal counts")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", default=None)

    p = add_cmd("umap", "embed features in 2-D")
    p.add_argument("--features", required=True)
    p.add_argument("--n-neighbors", type=int, default=15)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--sample", type=int, default=None, help="subsample before embedding")
    p.add_argument("--out", required=True, help="CSV of id,x,y")

    p = add_cmd("probe", "linear probe on a label column")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--ratios", type=_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--group-column", default=None)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", default=None, help="optional JSON result path")

    p = add_cmd("report", "full pipeline: embeddings + metrics + probes")
    p.add_argument("--features", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--tag", default="default")
    p.add_argument(
        "--dataset",
        action="append",
        default=[],
        metavar="FEATURES:LABELS:TAG",
        help="additional tagged dataset (repeatable)",
    )
    p.add_argument(
        "--raw-dataset",
        action="append",
        default=[],
        metavar="FEATURES:LABELS:TAG",
        help="raw-feature dataset for side-by-side embeddings (repeatable)",
    )
    p.add_argument("--probe", action="append", default=[], help="label column to probe")
    p.add_argument("--umap-grid", type=_grid, default=((15,), (0.1,)))
    p.add_argument("--sample-sizes", type=_int_list, default=(10_000, 100_000))
    p.add_argument("--probe-embeddings", action="store_true")
    p.add_argument("--ratios", type=_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--group-column", default=None)
    p.add_argument("--stratify-column", default=None)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--cpd-pairs", type=int, default=100_000)
    p.add_argument("--metric-cap", type=int, default=10_000)
    p.add_argument("--umap-epochs", type=int, default=None)
    p.add_argument("--probe-runs", type=int, default=3)
    p.add_argument("--probe-epochs", type=int, default=20)
    p.add_argument("--out", required=True)
    return parser


def _apply_threads(threads: int | None, deterministic: bool) -> bool:
    """Configure kernel threads; returns whether runs must be deterministic."""
    if deterministic or threads is None or threads <= 1:
        if deterministic:
            import numba

            numba.set_num_threads(1)
        return True
    import numba

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return False


def _cmd_gen(args) -> int:
    features, labels = gen_blobs(
        BlobSpec(
            n_samples=args.n,
            dim=args.dim,
            n_classes=args.classes,
            class_separation=args.separation,
            within_std=args.within_std,
            seed=args.seed,
        )
    )
    if args.sites > 0:
        features, labels = inject_batch_effect(
            features,
            labels,
            BatchEffectSpec(
                n_sites=args.sites,
                offset_magnitude=args.offset,
                scale_jitter=args.scale_jitter,
                skew=args.skew,
                seed=args.seed + 1,
            ),
        )
    write_features(features, args.out_features)
    write_labels(labels, args.out_labels)
    print(f"wrote {features.n_samples} x {features.dim} features to {args.out_features}")
    return 0


def _cmd_validate(args) -> int:
    verdict = validate_features(load_features(args.features, args.format))
    if verdict.ok:
        print("ok")
        return 0
    for v in verdict.violations:
        rows = f" rows={list(v.rows[:10])}" if v.rows else ""
        print(f"violation [{v.kind}]: {v.detail}{rows}", file=sys.stderr)
    return DATA_ERROR


def _cmd_split(args) -> int:
    table = load_labels(args.labels)
    split = group_stratified_split(table, args.ratios, args.group_column, args.seed)
    for w in split.warnings:
        print(f"warning: {w}", file=sys.stderr)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id,partition\n")
        for sample_id in table.ids:
            fh.write(f"{sample_id},{split.assignment[sample_id]}\n")
    counts = split.counts()
    print(
        f"wrote {args.out}: train={counts['train']} "
        f"validation={counts['validation']} test={counts['test']}"
    )
    return 0


def _cmd_balance(args) -> int:
    features = load_features(args.features)
    table = load_labels(args.labels)
    spec = BalanceSpec(
        column=args.column, top_k=args.top_k, per_class_cap=args.cap, seed=args.seed
    )
    subset = select_top_k_balance(features, table, spec)
    write_features(subset, args.out_features)
    if args.out_labels:
        keep = set(subset.ids)
        rows = [i for i, sample_id in enumerate(table.ids) if sample_id in keep]
        filtered = {
            name: [table.columns[name][i] for i in rows] for name in table.column_names()
        }
        write_labels(LabelTable([table.ids[i] for i in rows], filtered), args.out_labels)
    print(f"kept {subset.n_samples} rows across top {args.top_k} categories")
    return 0


def _cmd_umap(args, deterministic: bool) -> int:
    features = load_features(args.features)
    if args.sample is not None and args.sample < features.n_samples:
        features = subsample(features, None, args.sample, args.seed)
    params = UmapParams(
        n_neighbors=args.n_neighbors,
        min_dist=args.min_dist,
        n_epochs=args.epochs,
        seed=args.seed,
        metric=args.metric,
        parallel=not deterministic,
    )
    result = umap(features, params)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id,x,y\n")
        for sample_id, (x, y) in zip(result.ids, result.coords):
            fh.write(f"{sample_id},{x:.6g},{y:.6g}\n")
    print(f"wrote {len(result.ids)} coordinates to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    features = load_features(args.features)
    table = load_labels(args.labels)
    joined = join(features, table, args.column)
    cfg = ProbeConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        runs=args.runs,
        seed=args.seed,
    )
    splits = [
        group_stratified_split(
            table, args.ratios, args.group_column, args.seed + r, ids=list(joined.matrix.ids)
        )
        for r in range(cfg.runs)
    ]
    result = train_probe(joined.matrix, joined.labels, splits, cfg, label_column=args.column)
    print(
        f"{args.column}: accuracy {result.mean_accuracy:.4f} +/- {result.std_accuracy:.4f} "
        f"(chance {result.chance_baseline:.4f}, {len(result.runs)} runs)"
    )
    if args.out:
        payload = {
            "label_column": result.label_column,
            "classes": list(result.classes),
            "mean_accuracy": result.mean_accuracy,
            "std_accuracy": result.std_accuracy,
            "chance_baseline": result.chance_baseline,
            "runs": [
                {
                    "seed": r.seed,
                    "split_seed": r.split_seed,
                    "test_accuracy": r.test_accuracy,
                    "confusion": r.confusion.tolist(),
                }
                for r in result.runs
            ],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


def _parse_dataset(entry: str):
    parts = entry.split(":")
    if len(parts) != 3:
        raise DataFormatError(f"dataset spec {entry!r} must be FEATURES:LABELS:TAG")
    return parts


def _cmd_report(args, deterministic: bool) -> int:
    manifests = []
    raw_tags = []
    if args.features:
        if not args.labels:
            raise SystemExit(USAGE_ERROR)
        manifests.append(make_manifest(args.features, args.labels, args.tag))
    for entry in args.dataset:
        f, l, tag = _parse_dataset(entry)
        manifests.append(make_manifest(f, l, tag))
    for entry in args.raw_dataset:
        f, l, tag = _parse_dataset(entry)
        manifests.append(make_manifest(f, l, tag))
        raw_tags.append(tag)
    if not manifests:
        print("report: need --features/--labels or --dataset", file=sys.stderr)
        return USAGE_ERROR
    neighbors_grid, dist_grid = args.umap_grid
    plan = RunPlan(
        manifests=tuple(manifests),
        n_neighbors_grid=neighbors_grid,
        min_dist_grid=dist_grid,
        sample_sizes=args.sample_sizes,
        probe_columns=tuple(args.probe),
        probe_embeddings=args.probe_embeddings,
        split_ratios=args.ratios,
        split_group_column=args.group_column,
        stratify_column=args.stratify_column,
        metric=args.metric,
        knn_k=args.knn_k,
        cpd_pairs=args.cpd_pairs,
        metric_cap=args.metric_cap,
        umap_epochs=args.umap_epochs,
        probe=ProbeConfig(runs=args.probe_runs, epochs=args.probe_epochs, seed=args.seed),
        seed=args.seed,
        deterministic=deterministic,
        raw_tags=tuple(raw_tags),
    )
    doc = run(plan)
    out = write_report(doc, args.out)
    print(f"report written to {out}")
    if doc.failures:
        for f in doc.failures:
            print(f"failed cell {f['key']} [{f['stage']}]: {f['error']}", file=sys.stderr)
    return 0


def cli(argv=None) -> int:
    """Run the CLI; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    deterministic = _apply_threads(args.threads, args.deterministic)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "split":
            return _cmd_split(args)
        if args.command == "balance":
            return _cmd_balance(args)
        if args.command == "umap":
            return _cmd_umap(args, deterministic)
        if args.command == "probe":
            return _cmd_probe(args)
        if args.command == "report":
            return _cmd_report(args, deterministic)
        return USAGE_ERROR
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DataFormatError, FileNotFoundError, KeyError, OSError, ValueError) as exc:
        print(f"featlens: error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
