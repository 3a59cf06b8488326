"""Sparse-matrix kernels, expanded-graph assembly, and graph partitioning.

Matrices are CSR with canonical storage: column indices strictly increasing
within each row, no explicit zeros. scipy.sparse provides the raw kernels
(construction, products); the CSR arrays are exposed directly so
checkpointing and the parameter audit can count stored nonzeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, DimensionError
from .rng import stream

DEFAULT_IMBALANCE_TOLERANCE = 0.05


@dataclass
class SparseMatrix:
    """Canonical CSR matrix (float64 values, int64 indices)."""

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparseMatrix":
        csr = sp.csr_matrix(m, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.eliminate_zeros()
        return cls(
            rows=csr.shape[0],
            cols=csr.shape[1],
            row_offsets=csr.indptr.astype(np.int64),
            col_indices=csr.indices.astype(np.int64),
            values=csr.data.astype(np.float64),
        )

    @classmethod
    def from_coo(
        cls,
        rows: int,
        cols: int,
        row_idx: np.ndarray,
        col_idx: np.ndarray,
        values: np.ndarray,
    ) -> "SparseMatrix":
        coo = sp.coo_matrix((values, (row_idx, col_idx)), shape=(rows, cols))
        return cls.from_scipy(coo)

    @classmethod
    def from_dense(cls, m: np.ndarray) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(m, dtype=np.float64)))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(
            rows=rows,
            cols=cols,
            row_offsets=np.zeros(rows + 1, dtype=np.int64),
            col_indices=np.zeros(0, dtype=np.int64),
            values=np.zeros(0, dtype=np.float64),
        )

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.rows, self.cols)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def validate(self) -> None:
        if len(self.row_offsets) != self.rows + 1:
            raise ContractViolation("row_offsets length must be rows + 1")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ContractViolation("row_offsets must be monotone non-decreasing")
        if self.row_offsets[-1] != len(self.col_indices) or len(self.col_indices) != len(
            self.values
        ):
            raise ContractViolation("index/value arrays inconsistent with nnz")
        for r in range(self.rows):
            cols = self.col_indices[self.row_offsets[r] : self.row_offsets[r + 1]]
            if cols.size and (np.any(np.diff(cols) <= 0) or cols[-1] >= self.cols or cols[0] < 0):
                raise ContractViolation(f"row {r}: columns not strictly increasing in range")
        if np.any(self.values == 0.0):
            raise ContractViolation("explicit zeros stored")


def spmm(a: SparseMatrix, b: np.ndarray) -> np.ndarray:
    """Sparse @ dense with deterministic per-row accumulation order."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or a.cols != b.shape[0]:
        raise DimensionError(f"spmm: ({a.rows}x{a.cols}) @ {b.shape} mismatch")
    return a.to_scipy() @ b


def build_interaction_adjacency(interactions) -> SparseMatrix:
    """Bipartite entity adjacency [[0, R], [R^T, 0]] from train pairs."""
    n_users = interactions.num_users
    n = n_users + interactions.num_items
    pairs = interactions.train_pairs
    if len(pairs) == 0:
        return SparseMatrix.zeros(n, n)
    u = pairs[:, 0]
    i = pairs[:, 1] + n_users
    row = np.concatenate([u, i])
    col = np.concatenate([i, u])
    return SparseMatrix.from_coo(n, n, row, col, np.ones(row.shape[0]))


def expand_coarse(adj: SparseMatrix, s_c: SparseMatrix) -> SparseMatrix:
    """Expanded graph [[A, S^c], [S^c^T, 0]] over entity + coarse codebook nodes."""
    if adj.rows != adj.cols:
        raise DimensionError("adj must be square")
    if s_c.rows != adj.rows:
        raise DimensionError(f"s_c has {s_c.rows} rows, expected {adj.rows}")
    block = sp.bmat(
        [[adj.to_scipy(), s_c.to_scipy()], [s_c.to_scipy().T, None]], format="csr"
    )
    return SparseMatrix.from_scipy(block)


def expand_fine(adj: SparseMatrix, s_c: SparseMatrix, s_r: SparseMatrix) -> SparseMatrix:
    """Expanded graph [[A, S^c, 0], [S^c^T, 0, S^r], [0, S^r^T, 0]].

    Fine codebook nodes attach only to coarse codebook nodes.
    """
    if adj.rows != adj.cols:
        raise DimensionError("adj must be square")
    if s_c.rows != adj.rows:
        raise DimensionError(f"s_c has {s_c.rows} rows, expected {adj.rows}")
    if s_r.rows != s_c.cols:
        raise DimensionError(f"s_r has {s_r.rows} rows, expected {s_c.cols}")
    block = sp.bmat(
        [
            [adj.to_scipy(), s_c.to_scipy(), None],
            [s_c.to_scipy().T, None, s_r.to_scipy()],
            [None, s_r.to_scipy().T, None],
        ],
        format="csr",
    )
    return SparseMatrix.from_scipy(block)


def sym_normalize(adj: SparseMatrix, allow_negative: bool = False) -> SparseMatrix:
    """D^{-1/2} A D^{-1/2} with D the diagonal row-sum degree matrix.

    Zero-degree nodes get scale factor 1. With allow_negative (assignment
    weights embedded in the graph), degrees use absolute-value row sums so
    the scaling stays real.
    """
    if adj.rows != adj.cols:
        raise DimensionError("sym_normalize: matrix must be square")
    if not allow_negative and np.any(adj.values < 0):
        raise ContractViolation("sym_normalize: negative entry in adjacency")
    csr = adj.to_scipy()
    degrees = np.asarray(abs(csr).sum(axis=1)).ravel() if allow_negative else np.asarray(
        csr.sum(axis=1)
    ).ravel()
    scale = np.ones_like(degrees)
    pos = degrees > 0
    scale[pos] = 1.0 / np.sqrt(degrees[pos])
    normalized = sp.diags(scale) @ csr @ sp.diags(scale)
    return SparseMatrix.from_scipy(normalized)


@dataclass
class Partition:
    """Balanced non-overlapping node partition."""

    num_parts: int
    assignment: np.ndarray

    def part_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_parts)

    def validate(self, imbalance_tolerance: float = DEFAULT_IMBALANCE_TOLERANCE) -> None:
        n = len(self.assignment)
        if np.any(self.assignment < 0) or np.any(self.assignment >= self.num_parts):
            raise ContractViolation("partition: part index out of range")
        sizes = self.part_sizes()
        if np.any(sizes == 0):
            raise ContractViolation("partition: empty part")
        cap = np.ceil(n / self.num_parts) * (1.0 + imbalance_tolerance)
        if sizes.max() > cap + 1e-9:
            raise ContractViolation(
                f"partition: part size {sizes.max()} exceeds balance cap {cap:.2f}"
            )


def load_partition(
    path, num_nodes: int, imbalance_tolerance: float = DEFAULT_IMBALANCE_TOLERANCE
) -> Partition:
    """Read a one-part-index-per-line file (e.g. METIS output) and validate."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) != num_nodes:
        raise ContractViolation(f"partition file has {len(lines)} entries, expected {num_nodes}")
    assignment = np.array([int(ln) for ln in lines], dtype=np.int64)
    num_parts = int(assignment.max()) + 1 if len(assignment) else 0
    part = Partition(num_parts=num_parts, assignment=assignment)
    part.validate(imbalance_tolerance)
    return part


# --- multilevel partitioner -------------------------------------------------
#
# METIS-style pipeline: heavy-edge matching coarsens the graph, greedy graph
# growing seeds a balanced partition on the coarsest level, and boundary
# moves with positive cut gain refine on the way back up. Node weights count
# original nodes so the balance cap is enforced in original-node units.


def _symmetric_weights(adj: SparseMatrix) -> sp.csr_matrix:
    a = abs(adj.to_scipy())
    return ((a + a.T) * 0.5).tocsr()


def _heavy_edge_matching(w: sp.csr_matrix, order: np.ndarray) -> np.ndarray:
    n = w.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = w.indptr, w.indices, w.data
    for u in order:
        if match[u] != -1:
            continue
        best, best_w = -1, 0.0
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if v == u or match[v] != -1:
                continue
            if data[k] > best_w or (data[k] == best_w and (best == -1 or v < best)):
                best, best_w = v, data[k]
        match[u] = best if best != -1 else u
        if best != -1:
            match[best] = u
    return match


def _contract(w: sp.csr_matrix, node_weight: np.ndarray, match: np.ndarray):
    n = w.shape[0]
    coarse_id = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for u in range(n):
        if coarse_id[u] != -1:
            continue
        coarse_id[u] = nxt
        v = match[u]
        if v != u and v >= 0:
            coarse_id[v] = nxt
        nxt += 1
    coo = w.tocoo()
    cr, cc = coarse_id[coo.row], coarse_id[coo.col]
    keep = cr != cc
    w_coarse = sp.coo_matrix((coo.data[keep], (cr[keep], cc[keep])), shape=(nxt, nxt)).tocsr()
    w_coarse.sum_duplicates()
    nw_coarse = np.zeros(nxt, dtype=np.int64)
    np.add.at(nw_coarse, coarse_id, node_weight)
    return w_coarse, nw_coarse, coarse_id


def _greedy_grow(
    w: sp.csr_matrix, node_weight: np.ndarray, num_parts: int, cap: float, rng: np.random.Generator
) -> np.ndarray:
    n = w.shape[0]
    assignment = np.full(n, -1, dtype=np.int64)
    total = int(node_weight.sum())
    target = total / num_parts
    indptr, indices, data = w.indptr, w.indices, w.data
    visit = rng.permutation(n)
    part_weights = np.zeros(num_parts, dtype=np.int64)
    for part in range(num_parts):
        seed = -1
        for u in visit:
            if assignment[u] == -1 and (seed == -1 or node_weight[u] > node_weight[seed]):
                seed = u
        if seed == -1:
            break
        assignment[seed] = part
        part_weights[part] += node_weight[seed]
        conn = np.zeros(n)
        for k in range(indptr[seed], indptr[seed + 1]):
            if assignment[indices[k]] == -1:
                conn[indices[k]] += data[k]
        while part_weights[part] < target:
            cand = -1
            for u in range(n):
                if assignment[u] != -1 or conn[u] <= 0.0:
                    continue
                if cand == -1 or conn[u] > conn[cand]:
                    cand = u
            if cand == -1 or part_weights[part] + node_weight[cand] > cap:
                break
            assignment[cand] = part
            part_weights[part] += node_weight[cand]
            conn[cand] = 0.0
            for k in range(indptr[cand], indptr[cand + 1]):
                if assignment[indices[k]] == -1:
                    conn[indices[k]] += data[k]
    # leftovers: most-connected part with room, else lightest part with room
    for u in range(n):
        if assignment[u] != -1:
            continue
        conn = np.zeros(num_parts)
        for k in range(indptr[u], indptr[u + 1]):
            if assignment[indices[k]] >= 0:
                conn[assignment[indices[k]]] += data[k]
        chosen = -1
        for p in np.argsort(-conn, kind="stable"):
            if conn[p] > 0.0 and part_weights[p] + node_weight[u] <= cap:
                chosen = int(p)
                break
        if chosen == -1:
            chosen = int(np.argmin(part_weights))
            for p in np.argsort(part_weights, kind="stable"):
                if part_weights[p] + node_weight[u] <= cap:
                    chosen = int(p)
                    break
        assignment[u] = chosen
        part_weights[chosen] += node_weight[u]
    return assignment


def _refine(
    w: sp.csr_matrix,
    node_weight: np.ndarray,
    assignment: np.ndarray,
    num_parts: int,
    cap: float,
    max_passes: int = 8,
) -> np.ndarray:
    n = w.shape[0]
    indptr, indices, data = w.indptr, w.indices, w.data
    part_weights = np.zeros(num_parts, dtype=np.int64)
    part_counts = np.zeros(num_parts, dtype=np.int64)
    for u in range(n):
        part_weights[assignment[u]] += node_weight[u]
        part_counts[assignment[u]] += 1
    for _ in range(max_passes):
        moved = False
        for u in range(n):
            cur = assignment[u]
            if part_counts[cur] <= 1 or indptr[u] == indptr[u + 1]:
                continue
            conn = np.zeros(num_parts)
            boundary = False
            for k in range(indptr[u], indptr[u + 1]):
                p = assignment[indices[k]]
                conn[p] += data[k]
                if p != cur:
                    boundary = True
            if not boundary:
                continue
            best, best_gain = cur, 0.0
            for p in range(num_parts):
                if p == cur or part_weights[p] + node_weight[u] > cap:
                    continue
                gain = conn[p] - conn[cur]
                if gain > best_gain + 1e-12:
                    best, best_gain = p, gain
            if best != cur:
                part_weights[cur] -= node_weight[u]
                part_counts[cur] -= 1
                part_weights[best] += node_weight[u]
                part_counts[best] += 1
                assignment[u] = best
                moved = True
        if not moved:
            break
    return assignment


def _repair(
    node_weight: np.ndarray,
    assignment: np.ndarray,
    num_parts: int,
    cap: float,
    max_rounds: int | None = None,
) -> np.ndarray:
    """Force every part non-empty and (weights permitting) under the cap."""
    n = len(assignment)
    part_weights = np.zeros(num_parts, dtype=np.int64)
    part_counts = np.zeros(num_parts, dtype=np.int64)
    for u in range(n):
        part_weights[assignment[u]] += node_weight[u]
        part_counts[assignment[u]] += 1
    for p in range(num_parts):
        while part_counts[p] == 0:
            donor = int(np.argmax(part_counts))
            for u in range(n):
                if assignment[u] == donor and part_counts[donor] > 1:
                    assignment[u] = p
                    part_counts[donor] -= 1
                    part_weights[donor] -= node_weight[u]
                    part_counts[p] += 1
                    part_weights[p] += node_weight[u]
                    break
    if max_rounds is None:
        max_rounds = 4 * num_parts + n
    for _ in range(max_rounds):
        over = int(np.argmax(part_weights))
        if part_weights[over] <= cap + 1e-9 or part_counts[over] <= 1:
            break
        lightest = int(np.argmin(part_weights))
        if lightest == over:
            break
        # smallest-weight node in the overloaded part moves out
        pick = -1
        for u in range(n):
            if assignment[u] == over and (pick == -1 or node_weight[u] < node_weight[pick]):
                pick = u
        if pick == -1 or part_weights[lightest] + node_weight[pick] > cap + 1e-9:
            break
        assignment[pick] = lightest
        part_weights[over] -= node_weight[pick]
        part_counts[over] -= 1
        part_weights[lightest] += node_weight[pick]
        part_counts[lightest] += 1
    return assignment


def partition_graph(
    adj: SparseMatrix,
    num_parts: int,
    seed: int,
    imbalance_tolerance: float = DEFAULT_IMBALANCE_TOLERANCE,
) -> Partition:
    """Deterministic multilevel-style balanced partition of a graph."""
    n = adj.rows
    if num_parts < 1 or num_parts > n:
        raise ContractViolation(f"num_parts must be in [1, {n}], got {num_parts}")
    if num_parts == 1:
        return Partition(num_parts=1, assignment=np.zeros(n, dtype=np.int64))
    if num_parts == n:
        return Partition(num_parts=n, assignment=np.arange(n, dtype=np.int64))

    cap = np.ceil(n / num_parts) * (1.0 + imbalance_tolerance)
    rng = stream(seed, "partition", num_parts)

    w = _symmetric_weights(adj)
    node_weight = np.ones(n, dtype=np.int64)
    levels: list[tuple[sp.csr_matrix, np.ndarray, np.ndarray]] = []
    while w.shape[0] > max(4 * num_parts, 32):
        order = rng.permutation(w.shape[0])
        match = _heavy_edge_matching(w, order)
        w_coarse, nw_coarse, coarse_id = _contract(w, node_weight, match)
        if w_coarse.shape[0] >= w.shape[0] or w_coarse.shape[0] < num_parts:
            break
        levels.append((w, node_weight, coarse_id))
        w, node_weight = w_coarse, nw_coarse

    assignment = _greedy_grow(w, node_weight, num_parts, cap, rng)
    assignment = _refine(w, node_weight, assignment, num_parts, cap)
    assignment = _repair(node_weight, assignment, num_parts, cap)

    for w_fine, nw_fine, coarse_id in reversed(levels):
        assignment = assignment[coarse_id]
        assignment = _refine(w_fine, nw_fine, assignment, num_parts, cap)
        assignment = _repair(nw_fine, assignment, num_parts, cap)

    part = Partition(num_parts=num_parts, assignment=assignment.astype(np.int64))
    part.validate(imbalance_tolerance)
    return part
