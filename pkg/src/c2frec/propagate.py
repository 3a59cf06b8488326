"""Layer-averaged graph propagation and its hand-derived backward passes.

Forward: H_{l+1} = P @ H_l over the normalized expanded graph, output is
the average of layers 0..L split into entity / coarse / fine blocks.
Backward treats assignment matrices and the graph as constants and routes
the entity-block gradient to the leaf codebooks through the stacking map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import CoarseState, FineState, compose_coarse, compose_refined, refine_codebook
from .errors import DimensionError
from .graphkit import SparseMatrix, spmm
from .numerics import soft_threshold_mask


@dataclass
class PropagationResult:
    """Averaged propagation output split into blocks, with layer caches."""

    h_full: np.ndarray
    h_meta_c: np.ndarray
    h_meta_r: np.ndarray | None
    per_layer_cache: list[np.ndarray]
    norm_adj: SparseMatrix
    num_layers: int

    @property
    def h_average(self) -> np.ndarray:
        n = self.h_full.shape[0]
        m_c = self.h_meta_c.shape[0]
        blocks = [self.h_full, self.h_meta_c]
        if self.h_meta_r is not None:
            blocks.append(self.h_meta_r)
        out = np.vstack(blocks)
        assert out.shape[0] == n + m_c + (0 if self.h_meta_r is None else self.h_meta_r.shape[0])
        return out


def propagate(
    norm_adj: SparseMatrix,
    h0: np.ndarray,
    num_layers: int,
    num_entities: int,
    num_coarse: int,
    num_fine: int = 0,
) -> PropagationResult:
    """Average of H_0 .. H_L with H_{l+1} = norm_adj @ H_l."""
    h0 = np.asarray(h0, dtype=np.float64)
    if norm_adj.rows != norm_adj.cols:
        raise DimensionError("norm_adj must be square")
    if norm_adj.rows != h0.shape[0]:
        raise DimensionError(f"h0 has {h0.shape[0]} rows, graph has {norm_adj.rows} nodes")
    if num_entities + num_coarse + num_fine != h0.shape[0]:
        raise DimensionError("block sizes do not sum to the node count")
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    layers = [h0]
    cur = h0
    for _ in range(num_layers):
        cur = spmm(norm_adj, cur)
        layers.append(cur)
    avg = layers[0].copy()
    for layer in layers[1:]:
        avg += layer
    avg /= num_layers + 1
    h_meta_r = avg[num_entities + num_coarse :] if num_fine else None
    return PropagationResult(
        h_full=avg[:num_entities],
        h_meta_c=avg[num_entities : num_entities + num_coarse],
        h_meta_r=h_meta_r,
        per_layer_cache=layers,
        norm_adj=norm_adj,
        num_layers=num_layers,
    )


def stack_coarse_inputs(cs: CoarseState) -> np.ndarray:
    """Layer-0 stack: compositional entity rows over the coarse codebook."""
    return np.vstack([compose_coarse(cs), cs.e_meta_c])


def stack_fine_inputs(cs: CoarseState, fs: FineState) -> np.ndarray:
    """Layer-0 stack for the fine graph.

    Entity block uses the refined composition (the refinement must reach
    entity nodes at layer 0), then the refined codebook, then the
    thresholded fine codebook.
    """
    refined = refine_codebook(cs, fs)
    return np.vstack([compose_refined(cs, refined), refined, fs.thresholded()])


def _grad_through_layers(result: PropagationResult, grad_avg: np.ndarray) -> np.ndarray:
    """Gradient of the layer average w.r.t. H_0: (1/(L+1)) sum_l (P^T)^l G."""
    adj_t = result.norm_adj.transpose()
    acc = grad_avg.copy()
    cur = grad_avg
    for _ in range(result.num_layers):
        cur = spmm(adj_t, cur)
        acc += cur
    acc /= result.num_layers + 1
    return acc


def _check_cache(result: PropagationResult) -> None:
    if not result.per_layer_cache or len(result.per_layer_cache) != result.num_layers + 1:
        raise ValueError("propagation result is missing its per-layer cache")


def backward_coarse(
    result: PropagationResult, grad_h_full: np.ndarray, cs: CoarseState
) -> np.ndarray:
    """Gradient of <G, H_full> w.r.t. the coarse codebook, S^c held fixed.

    The codebook reaches H_0 twice: through the entity block (via S^c)
    and through its own identity block.
    """
    _check_cache(result)
    n, m_c = cs.num_entities, cs.m_c
    grad_h_full = np.asarray(grad_h_full, dtype=np.float64)
    if grad_h_full.shape != result.h_full.shape:
        raise DimensionError("grad_h_full shape mismatch")
    grad_avg = np.zeros((result.norm_adj.rows, grad_h_full.shape[1]))
    grad_avg[:n] = grad_h_full
    grad_h0 = _grad_through_layers(result, grad_avg)
    return spmm(cs.s_c.transpose(), grad_h0[:n]) + grad_h0[n : n + m_c]


def backward_fine(
    result: PropagationResult,
    grad_h_full: np.ndarray,
    cs: CoarseState,
    fs: FineState,
) -> np.ndarray:
    """Gradient of <G, H_full> w.r.t. the fine codebook.

    All three H_0 blocks depend on E^r: entity rows via w * S^c S^r Z,
    refined codebook via w * S^r Z, fine rows via Z itself, with
    Z = soft_threshold(E^r); the soft-threshold subgradient mask is
    applied last.
    """
    _check_cache(result)
    n, m_c = cs.num_entities, cs.m_c
    grad_h_full = np.asarray(grad_h_full, dtype=np.float64)
    if grad_h_full.shape != result.h_full.shape:
        raise DimensionError("grad_h_full shape mismatch")
    grad_avg = np.zeros((result.norm_adj.rows, grad_h_full.shape[1]))
    grad_avg[:n] = grad_h_full
    grad_h0 = _grad_through_layers(result, grad_avg)
    grad_z = fs.w_cr * spmm(
        fs.s_r.transpose(), spmm(cs.s_c.transpose(), grad_h0[:n]) + grad_h0[n : n + m_c]
    )
    grad_z += grad_h0[n + m_c :]
    return grad_z * soft_threshold_mask(fs.e_meta_r, fs.lambda_thr)
