"""Meta-path instance counting and max-normalized affinity matrices.

Counting multiplies the sparse step matrices of a meta-path; entry (i, j) of
the product is the number of distinct node sequences from target node i to
target node j along the path. Self-counts are pinned to zero. Each count
matrix is then row-normalized by its off-diagonal row maximum, and the
per-path matrices sum into an aggregated affinity.
"""

from __future__ import annotations

import logging
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    GraphValidationError,
    NumericalError,
    ParseError,
    ResourceLimitError,
)
from .hin import HinGraph, MetaPath, validate_metapath

logger = logging.getLogger(__name__)

# int64 product entries must stay clearly below 2^63
_SATURATION_LIMIT = float(2**62)
DEFAULT_PRODUCT_BUDGET = 50_000_000


@dataclass(frozen=True)
class CountMatrix:
    """Path-instance counts between target nodes, diagonal zeroed."""

    metapath: MetaPath
    counts: sp.csr_matrix

    def __post_init__(self):
        if self.counts.nnz and self.counts.data.min() < 0:
            raise NumericalError("negative path counts (int64 overflow?)")
        if np.any(self.counts.diagonal() != 0):
            raise GraphValidationError("count matrix diagonal must be zero")


@dataclass(frozen=True)
class AffinityStack:
    """Per-path normalized affinities and their elementwise sum."""

    paths: tuple[MetaPath, ...]
    per_path: tuple[sp.csr_matrix, ...]
    aggregate: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.aggregate.shape[0]

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def weighted_sum(self, weights) -> sp.csr_matrix:
        """Affinity under per-path weights: sum of weights[m] * per_path[m].

        Folds in the same order as the aggregate so that all-ones weights
        reproduce the aggregate bit for bit.
        """
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.n_paths,):
            raise ValueError(
                f"expected {self.n_paths} weights, got shape {weights.shape}"
            )
        acc = sp.csr_matrix((self.n, self.n), dtype=np.float64)
        for wm, mat in zip(weights, self.per_path):
            acc = acc + wm * mat
        return acc


def subset_indicator(n_paths: int, indices) -> np.ndarray:
    """Binary weight vector with ones at the given path indices."""
    w = np.zeros(n_paths, dtype=np.float64)
    idx = np.asarray(list(indices), dtype=int)
    if idx.size:
        if idx.min() < 0 or idx.max() >= n_paths:
            raise ValueError(f"path index out of range [0, {n_paths})")
        w[idx] = 1.0
    return w


def _estimate_product_entries(a: sp.csr_matrix, b: sp.csr_matrix) -> int:
    """Upper bound on the work/nonzeros of a @ b (sum of b-row sizes hit by a)."""
    b_row_nnz = np.diff(b.indptr)
    if a.nnz == 0:
        return 0
    return int(b_row_nnz[a.indices].sum())


def _checked_product(
    a: sp.csr_matrix, b: sp.csr_matrix, step_idx: int, budget: int
) -> sp.csr_matrix:
    est = _estimate_product_entries(a, b)
    if est > budget:
        raise ResourceLimitError(
            f"chain product at step {step_idx} would create ~{est} entries, "
            f"budget is {budget}"
        )
    max_a = int(a.data.max()) if a.nnz else 0
    max_b = int(b.data.max()) if b.nnz else 0
    if float(max_a) * float(max_b) * a.shape[1] >= _SATURATION_LIMIT:
        raise NumericalError(
            f"chain product at step {step_idx} may exceed 64-bit integer range"
        )
    return (a @ b).tocsr()


def _chain_order_auto(mats: list[sp.csr_matrix]) -> list[int]:
    """Classic matrix-chain DP over estimated sparse costs; returns split tree
    flattened to a multiplication schedule of range ids."""
    L = len(mats)
    dims = [m.shape[0] for m in mats] + [mats[-1].shape[1]]
    dens = [m.nnz / max(1, m.shape[0] * m.shape[1]) for m in mats]
    # est_nnz[i][j]: estimated nonzeros of the product of mats[i..j]
    est = [[0.0] * L for _ in range(L)]
    cost = [[0.0] * L for _ in range(L)]
    split = [[0] * L for _ in range(L)]
    for i in range(L):
        est[i][i] = mats[i].nnz
    for span in range(2, L + 1):
        for i in range(0, L - span + 1):
            j = i + span - 1
            cost[i][j] = float("inf")
            for k in range(i, j):
                inner = dims[k + 1]
                mult = est[i][k] * est[k][j] / max(1, inner)
                c = cost[i][k] + cost[k][j] + mult
                if c < cost[i][j]:
                    cost[i][j] = c
                    split[i][j] = k
                    est[i][j] = min(dims[i] * dims[j + 1], mult)
    schedule: list[int] = []

    def emit(i: int, j: int) -> None:
        if i == j:
            return
        k = split[i][j]
        emit(i, k)
        emit(k + 1, j)
        schedule.append(k)

    emit(0, L - 1)
    return schedule


def count_path_instances(
    graph: HinGraph,
    path: MetaPath,
    *,
    order: str = "left",
    max_product_entries: int = DEFAULT_PRODUCT_BUDGET,
) -> CountMatrix:
    """Count path instances between target nodes via sparse chain products.

    order is "left", "right" or "auto" (cost-based reordering); the counts
    are identical either way, only the evaluation order differs.
    """
    violation = validate_metapath(graph, path)
    if violation is not None:
        raise GraphValidationError(f"invalid meta-path: {violation}")
    mats = [graph.step_matrix(s) for s in path.steps]
    if order == "left":
        acc = mats[0]
        for idx, mat in enumerate(mats[1:], start=1):
            acc = _checked_product(acc, mat, idx, max_product_entries)
    elif order == "right":
        acc = mats[-1]
        for idx in range(len(mats) - 2, -1, -1):
            acc = _checked_product(mats[idx], acc, idx, max_product_entries)
    elif order == "auto":
        work: list[sp.csr_matrix | None] = list(mats)
        for k in _chain_order_auto(mats):
            left = k
            while work[left] is None:
                left -= 1
            right = k + 1
            prod = _checked_product(work[left], work[right], k, max_product_entries)
            work[left] = prod
            work[right] = None
        acc = work[0]
    else:
        raise ValueError(f"unknown evaluation order {order!r}")
    acc = sp.csr_matrix(acc)
    acc.setdiag(0)
    acc.eliminate_zeros()
    return CountMatrix(metapath=path, counts=acc)


def max_normalize(counts: CountMatrix) -> sp.csr_matrix:
    """Scale each row by its off-diagonal maximum count.

    Rows without any off-diagonal count stay all-zero (no evidence of
    affinity); every other row has maximum exactly 1.
    """
    mat = sp.csr_matrix(counts.counts, dtype=np.float64, copy=True)
    mat.eliminate_zeros()
    if mat.nnz == 0:
        return mat
    row_nnz = np.diff(mat.indptr)
    nonempty = row_nnz > 0
    row_max = np.maximum.reduceat(mat.data, mat.indptr[:-1][nonempty])
    inv = np.ones(mat.shape[0])
    inv[nonempty] = 1.0 / row_max
    mat.data *= np.repeat(inv, row_nnz)
    return mat


def build_affinity_stack(
    graph: HinGraph,
    paths: Sequence[MetaPath],
    *,
    threads: int = 1,
    cache_dir: str | Path | None = None,
    use_cache: bool = True,
    max_product_entries: int = DEFAULT_PRODUCT_BUDGET,
) -> AffinityStack:
    """Count every path (optionally cached and threaded) and assemble the stack."""
    if not paths:
        raise ValueError("at least one meta-path is required")

    def one(path: MetaPath) -> CountMatrix:
        if cache_dir is not None:
            return cached_count(
                graph,
                path,
                cache_dir,
                recount=not use_cache,
                max_product_entries=max_product_entries,
            )
        return count_path_instances(
            graph, path, max_product_entries=max_product_entries
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            count_mats = list(pool.map(one, paths))
    else:
        count_mats = [one(p) for p in paths]

    per_path = tuple(max_normalize(cm) for cm in count_mats)
    n = graph.n_target
    aggregate = sp.csr_matrix((n, n), dtype=np.float64)
    for mat in per_path:
        aggregate = aggregate + mat
    return AffinityStack(paths=tuple(paths), per_path=per_path, aggregate=aggregate)


# ---------------------------------------------------------------------------
# On-disk count cache: little-endian binary triplets under a key derived from
# the graph fingerprint and the path's relation-token form.
# ---------------------------------------------------------------------------

_MAGIC = b"SPMC"
_HEADER = struct.Struct("<4sIQ")
_TRIPLET_DTYPE = np.dtype([("i", "<u4"), ("j", "<u4"), ("v", "<u8")])


def save_count_file(path: str | Path, counts: sp.spmatrix) -> None:
    coo = sp.coo_matrix(counts)
    order = np.lexsort((coo.col, coo.row))
    triplets = np.empty(coo.nnz, dtype=_TRIPLET_DTYPE)
    triplets["i"] = coo.row[order]
    triplets["j"] = coo.col[order]
    triplets["v"] = coo.data[order]
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, coo.shape[0], coo.nnz))
        fh.write(triplets.tobytes())


def load_count_file(path: str | Path) -> sp.csr_matrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated count file")
    magic, n, nnz = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != nnz * _TRIPLET_DTYPE.itemsize:
        raise ParseError(f"{path}: expected {nnz} triplets, size mismatch")
    triplets = np.frombuffer(body, dtype=_TRIPLET_DTYPE)
    mat = sp.csr_matrix(
        (
            triplets["v"].astype(np.int64),
            (triplets["i"].astype(np.int64), triplets["j"].astype(np.int64)),
        ),
        shape=(n, n),
    )
    return mat


def cache_file_name(graph: HinGraph, path: MetaPath) -> str:
    token = path.token_form(graph.schema)
    safe = re.sub(r"[^A-Za-z0-9._^-]", "_", token)
    return f"{graph.fingerprint()[:16]}__{safe}.cnt"


def cached_count(
    graph: HinGraph,
    path: MetaPath,
    cache_dir: str | Path,
    *,
    recount: bool = False,
    max_product_entries: int = DEFAULT_PRODUCT_BUDGET,
) -> CountMatrix:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    fname = cache_dir / cache_file_name(graph, path)
    if not recount and fname.exists():
        logger.info("count cache hit: %s", fname.name)
        return CountMatrix(metapath=path, counts=load_count_file(fname))
    cm = count_path_instances(graph, path, max_product_entries=max_product_entries)
    save_count_file(fname, cm.counts)
    return cm
