"""featlens: detect bias and overfitting in learned feature representations.

The toolkit embeds feature vectors with UMAP, scores the embeddings
(silhouette, kNN preservation, CPD), and trains linear probes on sensitive
variables such as acquisition site. Reports serialize to a static site for
interactive inspection.
"""

from .data import (
    EmbeddingResult,
    FeatureMatrix,
    JoinedData,
    LabelTable,
    Manifest,
    MISSING,
    ProbeResult,
    ProbeRun,
    ReportDocument,
    SplitAssignment,
    ValidationVerdict,
    join,
    validate_features,
)
from .embed import FuzzyGraph, UmapParams, fit_ab, fuzzy_graph, optimize_layout, smooth_knn, umap
from .io import (
    load_features,
    load_labels,
    load_manifest_data,
    make_manifest,
    write_features,
    write_labels,
)
from .metrics import MetricReport, cpd, knn_preservation, silhouette, spearman
from .neighbors import KnnGraph, knn, knn_descent, knn_exact, recall
from .probe import ProbeConfig, ProbeModel, predict, probe_on_embedding, train_probe
from .report import RunPlan, run, write_report
from .sampling import BalanceSpec, group_stratified_split, select_top_k_balance, subsample
from .synth import BatchEffectSpec, BlobSpec, gen_blobs, inject_batch_effect

__version__ = "0.1.0"

__all__ = [
    "BalanceSpec",
    "BatchEffectSpec",
    "BlobSpec",
    "EmbeddingResult",
    "FeatureMatrix",
    "FuzzyGraph",
    "JoinedData",
    "KnnGraph",
    "LabelTable",
    "Manifest",
    "MetricReport",
    "MISSING",
    "ProbeConfig",
    "ProbeModel",
    "ProbeResult",
    "ProbeRun",
    "ReportDocument",
    "RunPlan",
    "SplitAssignment",
    "UmapParams",
    "ValidationVerdict",
    "cpd",
    "fit_ab",
    "fuzzy_graph",
    "gen_blobs",
    "group_stratified_split",
    "inject_batch_effect",
    "join",
    "knn",
    "knn_descent",
    "knn_exact",
    "knn_preservation",
    "load_features",
    "load_labels",
    "load_manifest_data",
    "make_manifest",
    "optimize_layout",
    "predict",
    "probe_on_embedding",
    "recall",
    "run",
    "select_top_k_balance",
    "silhouette",
    "smooth_knn",
    "spearman",
    "subsample",
    "train_probe",
    "umap",
    "validate_features",
    "write_features",
    "write_labels",
    "write_report",
]
