"""Dense linear-algebra and optimization primitives.

Dense matrices are plain row-major float64 ``np.ndarray`` throughout the
package. SVD is delegated to LAPACK via numpy; everything built on top of
it (pseudo-inverse, SparsePCA) lives here so the rest of the code never
touches raw LAPACK error handling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_RCOND = 1e-10


def _as_matrix(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD: m = U @ diag(s) @ V.T with s non-negative, descending."""
    m = _as_matrix(m)
    if not np.isfinite(m).all():
        raise NumericalError("svd: input contains non-finite entries")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"svd failed to converge: {exc}") from exc
    return u, s, vh.T


def pseudo_inverse(m: np.ndarray, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Singular values <= rcond * sigma_max are treated as zero.
    """
    if rcond < 0:
        raise ValueError("rcond must be >= 0")
    u, s, v = svd(m)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    keep = s > rcond * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (v * s_inv) @ u.T


def soft_threshold(m: np.ndarray, lambda_thr: float) -> np.ndarray:
    """Elementwise shrinkage sign(x) * max(|x| - lambda, 0)."""
    if lambda_thr < 0:
        raise ValueError("lambda_thr must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    return np.sign(m) * np.maximum(np.abs(m) - lambda_thr, 0.0)


def soft_threshold_mask(m: np.ndarray, lambda_thr: float) -> np.ndarray:
    """Subgradient mask for soft_threshold: 1 where |x| > lambda, else 0.

    The boundary |x| == lambda is assigned to the zero branch.
    """
    if lambda_thr < 0:
        raise ValueError("lambda_thr must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    return (np.abs(m) > lambda_thr).astype(np.float64)


def xavier_init(rows: int, cols: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """Uniform Xavier/Glorot init in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    bound = np.sqrt(6.0 / (rows + cols))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for one Adam-managed parameter."""

    shape: tuple[int, int]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name: str = "param"
    step_count: int = 0
    first_moment: np.ndarray = field(init=False)
    second_moment: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.first_moment = np.zeros(self.shape)
        self.second_moment = np.zeros(self.shape)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update. Mutates `param` and `state` in place."""
    if param.shape != grad.shape or param.shape != state.shape:
        raise DimensionError(
            f"adam_step({state.name}): shape mismatch "
            f"param {param.shape}, grad {grad.shape}, state {state.shape}"
        )
    if not np.isfinite(grad).all():
        raise NumericalError(f"adam_step: non-finite gradient for parameter '{state.name}'")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


def _objective(x: np.ndarray, codes: np.ndarray, dictionary: np.ndarray, alpha: float) -> float:
    resid = x - codes @ dictionary
    return 0.5 * float(np.sum(resid * resid)) + alpha * float(np.sum(np.abs(codes)))


def _lasso_cd(
    codes: np.ndarray,
    gram: np.ndarray,
    corr: np.ndarray,
    alpha: float,
    max_sweeps: int = 200,
) -> np.ndarray:
    """Coordinate descent on 0.5*||x - cW||^2 + alpha*||c||_1, all rows jointly.

    gram = W W^T, corr = X W^T. Rows are independent, so sweeping one
    coordinate across every row at once is still coordinate descent.
    """
    k = gram.shape[0]
    tol = 1e-12 * (1.0 + float(np.abs(corr).max(initial=0.0)))
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(k):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = corr[:, j] - codes @ gram[:, j] + codes[:, j] * gjj
            new = np.sign(rho) * np.maximum(np.abs(rho) - alpha, 0.0) / gjj
            delta = float(np.abs(new - codes[:, j]).max(initial=0.0))
            if delta > max_delta:
                max_delta = delta
            codes[:, j] = new
        if max_delta < tol:
            break
    return codes


def sparse_pca(
    x: np.ndarray,
    num_components: int,
    alpha: float,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Sparse dictionary factorization x ~= codes @ dictionary.

    Alternates L1-penalized least squares for the codes (coordinate
    descent) with unit-row-norm constrained least squares for the
    dictionary. Returns (codes, dictionary, objective_history); the
    history is non-increasing across outer iterations.
    """
    x = _as_matrix(x, "sparse_pca input")
    n_rows, n_cols = x.shape
    if not 1 <= num_components <= min(n_rows, n_cols):
        raise ValueError(
            f"num_components must be in [1, min(rows, cols)] = [1, {min(n_rows, n_cols)}]"
        )
    if alpha < 0:
        raise ValueError("alpha must be >= 0")

    if not np.any(x):
        logger.warning("sparse_pca: all-zero input, returning zero codes")
        dictionary = np.eye(num_components, n_cols)
        return np.zeros((n_rows, num_components)), dictionary, [0.0]

    # Identity-shaped warm start: orthonormal dictionary rows, codes = the
    # matching coordinate slice. In the square unpenalized limit the codes
    # then reproduce x itself, not a rotation of it.
    dictionary = np.eye(num_components, n_cols)
    codes = x @ dictionary.T

    objectives = [_objective(x, codes, dictionary, alpha)]
    for _ in range(max_iter):
        gram = dictionary @ dictionary.T
        corr = x @ dictionary.T
        codes = _lasso_cd(codes, gram, corr, alpha)

        # Dictionary: exact per-atom minimizer under the unit-norm constraint;
        # dead atoms (zero code column) keep their previous row.
        for j in range(num_components):
            cj = codes[:, j]
            resid_j = x - codes @ dictionary + np.outer(cj, dictionary[j])
            direction = cj @ resid_j
            norm = float(np.linalg.norm(direction))
            if norm > 0.0:
                dictionary[j] = direction / norm

        objectives.append(_objective(x, codes, dictionary, alpha))
        prev, cur = objectives[-2], objectives[-1]
        if abs(prev - cur) < tol * max(1.0, abs(prev)):
            break
    return codes, dictionary, objectives
