"""Gradient-free assignment learning.

The coarse assignment solves H_full = S @ H_meta in the least-squares
sense via the pseudo-inverse; the coarse-to-fine assignment bridges the
two codebooks through the entity embeddings. Rows are then sparsified to
a fixed nonzero budget.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .graphkit import Partition, SparseMatrix, spmm
from .numerics import pseudo_inverse

TOPK_MODES = ("signed", "magnitude")


def sparsify_topk(m, k: int, mode: str = "signed") -> SparseMatrix:
    """Keep the k largest nonzero entries per row, ties to the lowest column.

    "signed" compares raw values (negative weights are dropped first);
    "magnitude" compares absolute values. Rows with fewer than k nonzeros
    keep everything.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode not in TOPK_MODES:
        raise ValueError(f"mode must be one of {TOPK_MODES}")
    dense = m.to_dense() if isinstance(m, SparseMatrix) else np.asarray(m, dtype=np.float64)
    rows, cols = dense.shape
    out_rows: list[np.ndarray] = []
    out_cols: list[np.ndarray] = []
    out_vals: list[np.ndarray] = []
    for r in range(rows):
        nz = np.nonzero(dense[r])[0]
        if nz.size == 0:
            continue
        vals = dense[r, nz]
        key = vals if mode == "signed" else np.abs(vals)
        # stable sort on descending key keeps ascending-column order for ties
        keep = nz[np.argsort(-key, kind="stable")[:k]]
        keep.sort()
        out_rows.append(np.full(keep.size, r, dtype=np.int64))
        out_cols.append(keep)
        out_vals.append(dense[r, keep])
    if not out_rows:
        return SparseMatrix.zeros(rows, cols)
    return SparseMatrix.from_coo(
        rows,
        cols,
        np.concatenate(out_rows),
        np.concatenate(out_cols),
        np.concatenate(out_vals),
    )


def coarse_assignment_dense(
    h_full: np.ndarray, h_meta: np.ndarray, rcond: float = 1e-10
) -> np.ndarray:
    """Unsparsified least-squares assignment H_full @ pinv(H_meta)."""
    h_full = np.asarray(h_full, dtype=np.float64)
    h_meta = np.asarray(h_meta, dtype=np.float64)
    if h_full.shape[1] != h_meta.shape[1]:
        raise DimensionError("h_full and h_meta embedding dims differ")
    return h_full @ pseudo_inverse(h_meta, rcond)


def update_coarse_assignment(
    h_full: np.ndarray,
    h_meta: np.ndarray,
    t_c: int,
    rcond: float = 1e-10,
    mode: str = "signed",
) -> SparseMatrix:
    """S = H_full @ pinv(H_meta), rows sparsified to t_c entries."""
    return sparsify_topk(coarse_assignment_dense(h_full, h_meta, rcond), t_c, mode)


def bridged_assignment_dense(
    h_full_r: np.ndarray,
    h_meta_c_hat: np.ndarray,
    h_meta_r: np.ndarray,
    rcond: float = 1e-10,
) -> np.ndarray:
    """Unsparsified bridge (H_full @ pinv(H_meta_c))^T @ (H_full @ pinv(H_meta_r))."""
    h_full_r = np.asarray(h_full_r, dtype=np.float64)
    h_meta_c_hat = np.asarray(h_meta_c_hat, dtype=np.float64)
    h_meta_r = np.asarray(h_meta_r, dtype=np.float64)
    if h_full_r.shape[1] != h_meta_c_hat.shape[1] or h_full_r.shape[1] != h_meta_r.shape[1]:
        raise DimensionError("embedding dims differ across inputs")
    to_coarse = h_full_r @ pseudo_inverse(h_meta_c_hat, rcond)
    to_fine = h_full_r @ pseudo_inverse(h_meta_r, rcond)
    return to_coarse.T @ to_fine


def update_bridged_assignment(
    h_full_r: np.ndarray,
    h_meta_c_hat: np.ndarray,
    h_meta_r: np.ndarray,
    t_r: int,
    rcond: float = 1e-10,
    mode: str = "signed",
) -> SparseMatrix:
    """Coarse-to-fine weights with entities as the semantic bridge.

    S^r = (H_full @ pinv(H_meta_c))^T @ (H_full @ pinv(H_meta_r)),
    then per-row top-t_r sparsification.
    """
    return sparsify_topk(
        bridged_assignment_dense(h_full_r, h_meta_c_hat, h_meta_r, rcond), t_r, mode
    )


def _partition_weight_rows(partition: Partition, w_star: float) -> np.ndarray:
    """Prototype anchor rows: w_star at the own part, uniform remainder."""
    p = partition.num_parts
    if not 0.0 < w_star <= 1.0:
        raise ValueError("w_star must be in (0, 1]")
    if p == 1:
        return np.ones((1, 1))
    off = (1.0 - w_star) / (p - 1)
    proto = np.full((p, p), off)
    np.fill_diagonal(proto, w_star)
    return proto


def seed_coarse_assignment(partition: Partition, w_star: float, t_c: int) -> SparseMatrix:
    """Partition-seeded entity-to-coarse assignment, sparsified to t_c."""
    proto = _partition_weight_rows(partition, w_star)
    proto_sparse = sparsify_topk(proto, t_c)
    dense_proto = proto_sparse.to_dense()
    return SparseMatrix.from_dense(dense_proto[partition.assignment])


def seed_fine_assignment(
    s_c: SparseMatrix, partition_r: Partition, w_star: float, t_r: int
) -> SparseMatrix:
    """Three-step seeding of the coarse-to-fine assignment.

    Entities get anchor rows over the m_r fine parts, the bridge
    S^c^T @ anchor_rows aggregates them per coarse bucket, and each row
    keeps its t_r largest weights.
    """
    if len(partition_r.assignment) != s_c.rows:
        raise DimensionError(
            f"partition covers {len(partition_r.assignment)} entities, s_c has {s_c.rows} rows"
        )
    proto = _partition_weight_rows(partition_r, w_star)
    anchor = proto[partition_r.assignment]
    bridged = spmm(s_c.transpose(), anchor)
    return sparsify_topk(bridged, t_r)
