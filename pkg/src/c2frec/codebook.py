"""Codebook states and compositional embedding assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .graphkit import SparseMatrix, spmm
from .numerics import soft_threshold, sparse_pca
from .rng import stream

logger = logging.getLogger(__name__)


@dataclass
class CoarseState:
    """Coarse codebook (m_c x d) plus entity-to-codebook assignment (N x m_c)."""

    e_meta_c: np.ndarray
    s_c: SparseMatrix

    @property
    def num_entities(self) -> int:
        return self.s_c.rows

    @property
    def m_c(self) -> int:
        return self.e_meta_c.shape[0]

    @property
    def dim(self) -> int:
        return self.e_meta_c.shape[1]

    def check(self) -> None:
        if self.s_c.cols != self.m_c:
            raise DimensionError(
                f"s_c has {self.s_c.cols} columns, codebook has {self.m_c} rows"
            )
        if not np.isfinite(self.e_meta_c).all():
            raise ValueError("coarse codebook contains non-finite entries")

    def copy(self) -> "CoarseState":
        return CoarseState(
            e_meta_c=self.e_meta_c.copy(),
            s_c=SparseMatrix(
                self.s_c.rows,
                self.s_c.cols,
                self.s_c.row_offsets.copy(),
                self.s_c.col_indices.copy(),
                self.s_c.values.copy(),
            ),
        )


@dataclass
class FineState:
    """Fine codebook (m_r x d), coarse-to-fine assignment (m_c x m_r), mix knobs."""

    e_meta_r: np.ndarray
    s_r: SparseMatrix
    w_cr: float
    lambda_thr: float

    @property
    def m_r(self) -> int:
        return self.e_meta_r.shape[0]

    def check(self) -> None:
        if not 0.0 <= self.w_cr <= 1.0:
            raise ValueError("w_cr must be in [0, 1]")
        if self.lambda_thr < 0:
            raise ValueError("lambda_thr must be >= 0")
        if self.s_r.cols != self.m_r:
            raise DimensionError(
                f"s_r has {self.s_r.cols} columns, fine codebook has {self.m_r} rows"
            )

    def thresholded(self) -> np.ndarray:
        return soft_threshold(self.e_meta_r, self.lambda_thr)

    def copy(self) -> "FineState":
        return FineState(
            e_meta_r=self.e_meta_r.copy(),
            s_r=SparseMatrix(
                self.s_r.rows,
                self.s_r.cols,
                self.s_r.row_offsets.copy(),
                self.s_r.col_indices.copy(),
                self.s_r.values.copy(),
            ),
            w_cr=self.w_cr,
            lambda_thr=self.lambda_thr,
        )


def compose_coarse(cs: CoarseState) -> np.ndarray:
    """Compositional embeddings S^c @ E^c for all entities."""
    cs.check()
    return spmm(cs.s_c, cs.e_meta_c)


def refine_codebook(cs: CoarseState, fs: FineState) -> np.ndarray:
    """(1 - w_cr) * E^c + w_cr * S^r @ soft_threshold(E^r, lambda)."""
    cs.check()
    fs.check()
    if fs.s_r.rows != cs.m_c:
        raise DimensionError(f"s_r has {fs.s_r.rows} rows, expected {cs.m_c}")
    if fs.e_meta_r.shape[1] != cs.dim:
        raise DimensionError("fine codebook dim differs from coarse codebook dim")
    return (1.0 - fs.w_cr) * cs.e_meta_c + fs.w_cr * spmm(fs.s_r, fs.thresholded())


def compose_refined(cs: CoarseState, refined: np.ndarray) -> np.ndarray:
    """Entity embeddings S^c @ refined_codebook."""
    refined = np.asarray(refined, dtype=np.float64)
    if refined.shape[0] != cs.s_c.cols:
        raise DimensionError(
            f"refined codebook has {refined.shape[0]} rows, expected {cs.s_c.cols}"
        )
    return spmm(cs.s_c, refined)


def select_codebook_rows(
    cs: CoarseState, m_r: int, seed: int, mode: str = "uniform"
) -> np.ndarray:
    """Pick m_r coarse codebook rows to anchor the fine codebook.

    "uniform": without-replacement draw; "degree": rows with the largest
    total assignment mass in S^c.
    """
    if not 1 <= m_r <= cs.m_c:
        raise ValueError(f"m_r must be in [1, {cs.m_c}]")
    if mode == "uniform":
        rng = stream(seed, "fine-row-selection")
        return np.sort(rng.choice(cs.m_c, size=m_r, replace=False))
    if mode == "degree":
        mass = np.zeros(cs.m_c)
        np.add.at(mass, cs.s_c.col_indices, np.abs(cs.s_c.values))
        order = np.lexsort((np.arange(cs.m_c), -mass))
        return np.sort(order[:m_r])
    raise ValueError(f"unknown selection mode {mode!r}")


def init_fine_codebook(
    cs: CoarseState,
    m_r: int,
    d_r: int,
    alpha: float,
    seed: int,
    selection: str = "uniform",
    max_iter: int = 200,
    tol: float = 1e-6,
) -> np.ndarray:
    """Fine codebook from sparse factorization of selected coarse rows.

    The m_r selected rows are factored into d_r-dimensional sparse codes;
    codes are padded with trailing zero columns back to width d.
    """
    if d_r > cs.dim:
        raise ValueError(f"d_r must be <= d = {cs.dim}")
    rows = select_codebook_rows(cs, m_r, seed, selection)
    anchor = cs.e_meta_c[rows]
    codes, _, _ = sparse_pca(anchor, d_r, alpha, max_iter=max_iter, tol=tol)
    if not np.any(codes):
        logger.warning("init_fine_codebook: alpha=%g zeroed every code", alpha)
    out = np.zeros((m_r, cs.dim))
    out[:, :d_r] = codes
    return out
