"""Linear probing: a single softmax layer trained on frozen feature vectors
to measure how linearly decodable a label column is.

High accuracy on a non-clinical variable (such as the site that produced a
sample) is the bias signal this toolkit looks for, so the probe is kept
deliberately minimal: one linear map from feature dimension to class count,
mean softmax cross-entropy, Adam with bias-corrected moments, and no
regularization or augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    EmbeddingResult,
    FeatureMatrix,
    MISSING,
    ProbeResult,
    ProbeRun,
    SplitAssignment,
)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    runs: int = 3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class ProbeModel:
    """Trained probe parameters: m x n weights, m biases, ordered classes."""

    W: np.ndarray
    b: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        if W.shape[0] != len(self.classes) or b.shape != (W.shape[0],):
            raise ValueError(f"inconsistent parameter shapes {W.shape} / {b.shape}")
        if len(self.classes) < 2:
            raise ValueError("need at least 2 classes")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite parameters")


def softmax_xent_and_grad(W, b, X, y):
    """Mean softmax cross-entropy and its analytic gradients.

    X is batch x n, y holds class indices, W is m x n, b is length m.
    Returns (loss, dW, db). Log-sum-exp is stabilized by shifting logits.
    """
    X = np.asarray(X, dtype=np.float64)
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = X.shape[0]
    rows = np.arange(batch)
    loss = float(-np.log(np.maximum(probs[rows, y], 1e-300)).mean())
    dlogits = probs
    dlogits[rows, y] -= 1.0
    dlogits /= batch
    return loss, dlogits.T @ X, dlogits.sum(axis=0)


def _accuracy(W, b, X, y) -> float:
    logits = np.asarray(X, dtype=np.float64) @ W.T + b
    return float((logits.argmax(axis=1) == y).mean())


def _fit_one(X_train, y_train, X_val, y_val, n_classes, cfg, seed, history):
    """One Adam run; returns the parameters of the best validation epoch."""
    dim = X_train.shape[1]
    W = np.zeros((n_classes, dim))
    b = np.zeros(n_classes)
    mW = np.zeros_like(W)
    vW = np.zeros_like(W)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    rng = np.random.default_rng(seed)
    beta1, beta2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate

    best_acc = -1.0
    best = (W, b)
    step = 0
    n = X_train.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, dW, db = softmax_xent_and_grad(W, b, X_train[batch], y_train[batch])
            step += 1
            mW = beta1 * mW + (1 - beta1) * dW
            vW = beta2 * vW + (1 - beta2) * dW * dW
            mb = beta1 * mb + (1 - beta1) * db
            vb = beta2 * vb + (1 - beta2) * db * db
            c1 = 1 - beta1**step
            c2 = 1 - beta2**step
            W -= lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
            b -= lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        val_acc = _accuracy(W, b, X_val, y_val)
        if val_acc > best_acc:
            best_acc = val_acc
            best = (W.copy(), b.copy())
        if history is not None:
            loss, _, _ = softmax_xent_and_grad(W, b, X_train, y_train)
            history.append({"epoch": epoch, "train_loss": loss, "val_accuracy": val_acc})
    return best


def train_probe(
    features: FeatureMatrix,
    labels: Sequence[str],
    split: SplitAssignment | Sequence[SplitAssignment],
    cfg: ProbeConfig = ProbeConfig(),
    label_column: str = "",
    history_out: list | None = None,
) -> ProbeResult:
    """Train a linear probe per run and aggregate accuracy over the runs.

    ``labels`` aligns with the feature rows. Run r uses seed + r for
    initialization/shuffling; passing a sequence of splits gives each run its
    own split (fresh-split protocol), a single split is reused across runs.
    Rows with the missing sentinel are excluded. Test rows whose class never
    occurs in that run's training partition are excluded and counted.

    Parameters come from the epoch with the best validation accuracy
    (earliest epoch on ties) and are evaluated once on the test partition.
    When ``history_out`` is given, one per-epoch trace (full-train loss,
    validation accuracy) is appended per run.
    """
    if isinstance(split, SplitAssignment):
        splits = [split] * cfg.runs
    else:
        splits = list(split)
        if len(splits) != cfg.runs:
            raise ValueError(f"{len(splits)} splits for {cfg.runs} runs")
    labels = [str(v) for v in labels]
    if len(labels) != features.n_samples:
        raise ValueError(f"{len(labels)} labels for {features.n_samples} rows")

    labelled = [i for i, v in enumerate(labels) if v != MISSING]
    if not labelled:
        raise ValueError("no labelled rows")
    counts: dict[str, int] = {}
    for i in labelled:
        counts[labels[i]] = counts.get(labels[i], 0) + 1
    classes = tuple(sorted(counts))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes among labelled rows")
    class_index = {c: j for j, c in enumerate(classes)}
    majority = max(counts.values()) / len(labelled)
    chance = max(1.0 / len(classes), majority)

    X_all = features.values
    runs = []
    for r in range(cfg.runs):
        run_split = splits[r]
        parts: dict[str, list[int]] = {"train": [], "validation": [], "test": []}
        for i in labelled:
            part = run_split.assignment.get(features.ids[i])
            if part is not None:
                parts[part].append(i)
        for name, rows in parts.items():
            if not rows:
                raise ValueError(f"empty {name} partition in run {r}")

        train_classes = {labels[i] for i in parts["train"]}
        if len(train_classes) < 2:
            raise ValueError(f"single-class training data in run {r}")

        def encode(rows, restrict_to_train=False):
            keep = rows
            if restrict_to_train:
                keep = [i for i in rows if labels[i] in train_classes]
            y = np.array([class_index[labels[i]] for i in keep], dtype=np.int64)
            return X_all[keep], y, len(rows) - len(keep)

        X_train, y_train, _ = encode(parts["train"])
        X_val, y_val, _ = encode(parts["validation"], restrict_to_train=True)
        X_test, y_test, n_excluded = encode(parts["test"], restrict_to_train=True)
        if X_test.shape[0] == 0:
            raise ValueError(f"empty test partition after class exclusion in run {r}")

        seed_r = cfg.seed + r
        history: list | None = [] if history_out is not None else None
        W, b = _fit_one(
            X_train, y_train, X_val, y_val, len(classes), cfg, seed_r, history
        )
        if history_out is not None:
            history_out.append(history)
        logits = X_test.astype(np.float64) @ W.T + b
        pred = logits.argmax(axis=1)
        m = len(classes)
        confusion = np.zeros((m, m), dtype=np.int64)
        np.add.at(confusion, (y_test, pred), 1)
        runs.append(
            ProbeRun(
                seed=seed_r,
                split_seed=run_split.seed,
                test_accuracy=float((pred == y_test).mean()),
                confusion=confusion,
                n_excluded=n_excluded,
            )
        )

    return ProbeResult.from_runs(
        label_column=label_column, classes=classes, runs=runs, chance_baseline=chance
    )


def predict(model: ProbeModel, features) -> list[str]:
    """Predicted class per row: argmax of W x + b, ties to the lower index."""
    X = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.W.shape[1]:
        raise ValueError(
            f"feature dim {X.shape[1] if X.ndim == 2 else X.shape} does not match "
            f"model dim {model.W.shape[1]}"
        )
    logits = X @ model.W.T + model.b
    return [model.classes[i] for i in logits.argmax(axis=1)]


def probe_on_embedding(
    e: EmbeddingResult,
    labels: Sequence[str],
    split: SplitAssignment | Sequence[SplitAssignment],
    cfg: ProbeConfig = ProbeConfig(),
    label_column: str = "",
) -> ProbeResult:
    """Linear probe with the 2-D embedding coordinates as the features."""
    coords = FeatureMatrix(e.ids, e.coords)
    return train_probe(coords, labels, split, cfg, label_column)
