"""Clustering-based evaluation of meta-path selections.

Target nodes are clustered by normalized spectral clustering on the
symmetrized selected affinity, then scored against ground-truth classes
with optimal-assignment accuracy and normalized mutual information.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .errors import ConfigError, DegenerateInputError, GraphValidationError, ParseError
from .pathcount import AffinityStack, subset_indicator


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-D vector")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @classmethod
    def from_array(cls, labels) -> "ClusterLabels":
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) + 1 if labels.size else 1
        return cls(labels=labels, k=k)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    nmi: float
    mapping: dict[int, int]
    confusion: np.ndarray


def cluster_affinity(
    stack: AffinityStack, weights, k: int, rng_seed: int
) -> ClusterLabels:
    """Normalized spectral clustering on the weighted, symmetrized affinity.

    Builds the symmetric normalized Laplacian of W = (S + S^T) / 2, embeds
    nodes with the k smallest-eigenvalue eigenvectors (row-normalized), and
    runs k-means (20 seeded restarts, 300 iteration cap). Deterministic for
    a fixed seed.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    n = stack.n
    if n < k:
        raise ValueError(f"cannot split {n} nodes into {k} clusters")
    S = stack.weighted_sum(weights)
    W = np.asarray((S + S.T).todense(), dtype=np.float64) / 2.0
    if not (W > 0).any():
        raise DegenerateInputError(
            "selected affinity has no positive entries; "
            "choose a different meta-path subset"
        )
    degree = W.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    nonzero = degree > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(degree[nonzero])
    lap = np.eye(n) - (inv_sqrt[:, None] * W) * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(lap)  # ascending eigenvalues, deterministic order
    embedding = vecs[:, :k]
    norms = np.linalg.norm(embedding, axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    embedding = embedding / scale[:, None]
    km = KMeans(n_clusters=k, n_init=20, max_iter=300, random_state=rng_seed)
    labels = km.fit_predict(embedding)
    return ClusterLabels(labels=labels.astype(np.int64), k=k)


def contingency(pred: ClusterLabels, truth: ClusterLabels) -> np.ndarray:
    if pred.n != truth.n:
        raise ValueError(f"label lengths differ: {pred.n} vs {truth.n}")
    table = np.zeros((pred.k, truth.k), dtype=np.int64)
    np.add.at(table, (pred.labels, truth.labels), 1)
    return table


def accuracy(
    pred: ClusterLabels, truth: ClusterLabels
) -> tuple[float, dict[int, int]]:
    """Fraction of nodes whose cluster maps onto their class under the
    count-maximizing assignment (rectangular tables behave as zero-padded)."""
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    matched = int(table[rows, cols].sum())
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    return matched / pred.n, mapping


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(pred: ClusterLabels, truth: ClusterLabels) -> float:
    """Mutual information normalized by the larger marginal entropy.

    When both clusterings are single-cluster partitions the result is 1;
    when only one marginal entropy is zero the result is 0.
    """
    table = contingency(pred, truth)
    joint = table / pred.n
    p_pred = joint.sum(axis=1)
    p_truth = joint.sum(axis=0)
    h_pred = _entropy(p_pred)
    h_truth = _entropy(p_truth)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    mask = joint > 0
    outer = p_pred[:, None] * p_truth[None, :]
    mi = float(np.sum(joint[mask] * np.log(joint[mask] / outer[mask])))
    return mi / max(h_pred, h_truth)


def evaluate_labels(pred: ClusterLabels, truth: ClusterLabels) -> EvalReport:
    acc, mapping = accuracy(pred, truth)
    return EvalReport(
        accuracy=acc,
        nmi=nmi(pred, truth),
        mapping=mapping,
        confusion=contingency(pred, truth),
    )


@dataclass
class ComparisonRow:
    name: str
    accuracies: list[float]
    nmis: list[float]

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def acc_std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def nmi_mean(self) -> float:
        return float(np.mean(self.nmis))

    @property
    def nmi_std(self) -> float:
        return float(np.std(self.nmis))


def compare_selections(
    stack: AffinityStack,
    subsets: Mapping[str, Sequence[int]],
    truth: ClusterLabels,
    k: int,
    n_seeds: int = 5,
    *,
    random_size: int | None = None,
    harness_seed: int = 0,
    include_baselines: bool = True,
) -> list[ComparisonRow]:
    """Cluster each named subset over n_seeds seeds and tabulate the metrics.

    Baseline rows use all paths and, when a size is known, a fresh random
    subset of that size per seed drawn from the harness seed.
    """
    M = stack.n_paths
    seeds = [harness_seed + i for i in range(n_seeds)]

    def evaluate(name: str, weights_per_seed) -> ComparisonRow:
        accs, nmis = [], []
        for seed, wv in zip(seeds, weights_per_seed):
            pred = cluster_affinity(stack, wv, k, seed)
            acc, _ = accuracy(pred, truth)
            accs.append(acc)
            nmis.append(nmi(pred, truth))
        return ComparisonRow(name=name, accuracies=accs, nmis=nmis)

    rows = []
    for name, subset in subsets.items():
        w = subset_indicator(M, subset)
        rows.append(evaluate(name, [w] * n_seeds))
    if include_baselines:
        rows.append(evaluate("all-paths", [np.ones(M)] * n_seeds))
        if random_size is None and subsets:
            random_size = len(next(iter(subsets.values())))
        if random_size is not None:
            rng = np.random.default_rng(harness_seed)
            draws = [
                subset_indicator(M, rng.choice(M, size=random_size, replace=False))
                for _ in seeds
            ]
            rows.append(evaluate(f"random-{random_size}", draws))
    return rows


def format_comparison_table(rows: Sequence[ComparisonRow]) -> str:
    """Aligned plain-text table of per-method means and standard deviations."""
    header = ("method", "acc_mean", "acc_std", "nmi_mean", "nmi_std")
    body = [
        (
            row.name,
            f"{row.acc_mean:.4f}",
            f"{row.acc_std:.4f}",
            f"{row.nmi_mean:.4f}",
            f"{row.nmi_std:.4f}",
        )
        for row in rows
    ]
    widths = [
        max(len(header[c]), *(len(b[c]) for b in body)) if body else len(header[c])
        for c in range(len(header))
    ]
    lines = []
    for record in [header, *body]:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(record, widths)).rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Labels file: TSV of (node_id, class_id), '#' comments ignored.
# ---------------------------------------------------------------------------

def read_labels_file(path: str | Path, n: int) -> ClusterLabels:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"labels file not found: {path}")
    labels = np.full(n, -1, dtype=np.int64)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns")
            try:
                node, cls = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
            if not 0 <= node < n:
                raise GraphValidationError(
                    f"{path}:{lineno}: node id {node} out of range [0, {n})"
                )
            if cls < 0:
                raise GraphValidationError(f"{path}:{lineno}: negative class id")
            labels[node] = cls
    if (labels < 0).any():
        missing = int(np.sum(labels < 0))
        raise GraphValidationError(f"{path}: {missing} node(s) have no class label")
    return ClusterLabels.from_array(labels)


def write_labels_file(path: str | Path, labels: ClusterLabels) -> None:
    lines = [f"{i}\t{int(c)}\n" for i, c in enumerate(labels.labels)]
    Path(path).write_text("".join(lines), encoding="utf-8")
