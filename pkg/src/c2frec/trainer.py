"""Two-stage training: BPR over graph-propagated compositional embeddings.

Stage one learns the coarse codebook and its assignment on the expanded
interaction graph; stage two freezes both and learns a sparse fine
codebook attached behind the coarse one. Both stages alternate a
fixed-assignment warm phase with an assignment-update phase, early-stop
on validation NDCG@20, and return the best state seen.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .assign import (
    bridged_assignment_dense,
    coarse_assignment_dense,
    seed_coarse_assignment,
    seed_fine_assignment,
    sparsify_topk,
)
from .codebook import CoarseState, FineState, init_fine_codebook
from .corpus import InteractionSet, sample_triplets
from .errors import CheckpointError, DimensionError, NumericalError
from .evalkit import evaluate
from .graphkit import (
    SparseMatrix,
    build_interaction_adjacency,
    expand_coarse,
    expand_fine,
    partition_graph,
    sym_normalize,
)
from .numerics import AdamState, adam_step, soft_threshold_mask, xavier_init
from .propagate import (
    PropagationResult,
    backward_coarse,
    backward_fine,
    propagate,
    stack_coarse_inputs,
    stack_fine_inputs,
)
from .rng import child_seed, derive_int, stream

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"C2FRECK1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters for both stages; defaults follow the reference setup."""

    d: int = 128
    m_c: int = 300
    m_r: int = 100
    t_c: int = 2
    t_r: int = 5
    d_r: int = 64
    alpha: float = 1.0
    w_cr: float = 0.5
    w_star: float = 0.5
    lambda_thr: float = 3.0
    lr_coarse: float = 1e-3
    lr_fine: float = 3e-3
    l2_weight: float = 5e-4
    num_layers: int = 3
    negatives_per_positive: int = 5
    f_c: int = 1
    f_r: int = 1
    patience_coarse: int = 10
    patience_fine: int = 5
    batch_size: int = 2048
    seed: int = 0
    max_epochs_coarse: int = 200
    max_epochs_fine: int = 100
    rcond: float = 1e-10
    imbalance_tolerance: float = 0.05
    row_selection: str = "uniform"
    topk_mode: str = "signed"
    sparse_pca_max_iter: int = 200
    sparse_pca_tol: float = 1e-6

    def validate(self) -> None:
        positive = (
            "d m_c m_r t_c t_r d_r negatives_per_positive "
            "f_c f_r patience_coarse patience_fine max_epochs_coarse max_epochs_fine"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config: {name} must be positive")
        nonneg = "alpha lambda_thr l2_weight rcond imbalance_tolerance lr_coarse lr_fine".split()
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"config: {name} must be >= 0")
        if not 0.0 <= self.w_cr <= 1.0:
            raise ValueError("config: w_cr must be in [0, 1]")
        if not 0.0 < self.w_star <= 1.0:
            raise ValueError("config: w_star must be in (0, 1]")
        if self.num_layers < 0:
            raise ValueError("config: num_layers must be >= 0")
        if self.batch_size < 0:
            raise ValueError("config: batch_size must be >= 0 (0 = full batch)")
        if self.t_c > self.m_c:
            raise ValueError("config: t_c must be <= m_c")
        if self.t_r > self.m_r:
            raise ValueError("config: t_r must be <= m_r")
        if self.m_r > self.m_c:
            raise ValueError("config: m_r must be <= m_c")
        if self.d_r > min(self.m_r, self.d):
            raise ValueError("config: d_r must be <= min(m_r, d)")
        if self.row_selection not in ("uniform", "degree"):
            raise ValueError("config: row_selection must be 'uniform' or 'degree'")
        if self.topk_mode not in ("signed", "magnitude"):
            raise ValueError("config: topk_mode must be 'signed' or 'magnitude'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_mapping(values: dict) -> TrainConfig:
    """Build a TrainConfig from string-or-native values, coercing types."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        target = fields[key].type
        if isinstance(raw, str) and target in ("int", int):
            kwargs[key] = int(raw)
        elif isinstance(raw, str) and target in ("float", float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


@dataclass
class EpochRecord:
    stage: str
    phase: int
    epoch: int
    loss: float
    val_ndcg20: float


@dataclass
class AssignmentUpdateRecord:
    stage: str
    epoch: int
    row_nnz: list[int]
    row_available: list[int]


@dataclass
class TrainingLog:
    stage: str
    initial_val_ndcg20: float = 0.0
    epochs: list[EpochRecord] = field(default_factory=list)
    assignment_updates: list[AssignmentUpdateRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ndcg20: float = 0.0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            fh.write("stage,phase,epoch,loss,val_ndcg20\n")
            for rec in self.epochs:
                fh.write(
                    f"{rec.stage},{rec.phase},{rec.epoch},{rec.loss!r},{rec.val_ndcg20!r}\n"
                )


# --- scoring and loss ---------------------------------------------------------


def score(h_full: np.ndarray, user: int, item: int, num_users: int) -> float:
    """Affinity h_u . h_i; items live at offset num_users in the entity block."""
    n = h_full.shape[0]
    if not 0 <= user < num_users:
        raise IndexError(f"user {user} out of range")
    if not 0 <= num_users + item < n:
        raise IndexError(f"item {item} out of range")
    return float(h_full[user] @ h_full[num_users + item])


def bpr_loss(
    scores_pos: np.ndarray,
    scores_neg: np.ndarray,
    reg_embeddings: np.ndarray,
    l2_weight: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise ranking loss sum(-ln sigmoid(pos - neg)) + l2 * ||rows||^2.

    Returns (loss, d/d_pos, d/d_neg, d/d_rows).
    """
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.shape != scores_neg.shape:
        raise DimensionError("positive/negative score lists differ in length")
    if not (np.isfinite(scores_pos).all() and np.isfinite(scores_neg).all()):
        raise NumericalError("bpr_loss: non-finite score")
    margin = scores_pos - scores_neg
    loss = float(np.logaddexp(0.0, -margin).sum())
    reg = np.asarray(reg_embeddings, dtype=np.float64)
    loss += l2_weight * float(np.sum(reg * reg))
    sig = expit(margin)
    return loss, sig - 1.0, 1.0 - sig, 2.0 * l2_weight * reg


# --- forward helpers ----------------------------------------------------------


def coarse_forward(norm_adj: SparseMatrix, cs: CoarseState, num_layers: int) -> PropagationResult:
    return propagate(norm_adj, stack_coarse_inputs(cs), num_layers, cs.num_entities, cs.m_c)


def fine_forward(
    norm_adj: SparseMatrix, cs: CoarseState, fs: FineState, num_layers: int
) -> PropagationResult:
    return propagate(
        norm_adj, stack_fine_inputs(cs, fs), num_layers, cs.num_entities, cs.m_c, fs.m_r
    )


def _val_ndcg20(h_full: np.ndarray, data: InteractionSet) -> float:
    return evaluate(h_full, data, cutoffs=(20,), split="validation")[20]["ndcg"]


def _score_grad(
    h_full: np.ndarray,
    users: np.ndarray,
    pos_ent: np.ndarray,
    neg_ent: np.ndarray,
    g_pos: np.ndarray,
    g_neg: np.ndarray,
) -> np.ndarray:
    grad = np.zeros_like(h_full)
    np.add.at(grad, users, g_pos[:, None] * h_full[pos_ent] + g_neg[:, None] * h_full[neg_ent])
    np.add.at(grad, pos_ent, g_pos[:, None] * h_full[users])
    np.add.at(grad, neg_ent, g_neg[:, None] * h_full[users])
    return grad


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    size = n if batch_size == 0 else batch_size
    for start in range(0, n, size):
        yield perm[start : start + size]


def _triplet_arrays(triplets, num_users: int):
    users = np.array([t.user for t in triplets], dtype=np.int64)
    pos = np.array([t.pos_item for t in triplets], dtype=np.int64) + num_users
    neg = np.array([t.neg_item for t in triplets], dtype=np.int64) + num_users
    return users, pos, neg


# --- coarse stage -------------------------------------------------------------


def train_coarse(
    data: InteractionSet, cfg: TrainConfig, checkpoint_dir=None
) -> tuple[CoarseState, TrainingLog]:
    """Coarse stage: warm phase with fixed assignment, then periodic
    pseudo-inverse assignment updates with graph regeneration."""
    cfg.validate()
    if cfg.m_c > data.num_entities:
        raise ValueError("m_c exceeds the number of entities")
    adj = build_interaction_adjacency(data)
    part = partition_graph(
        adj, cfg.m_c, derive_int(cfg.seed, "coarse-partition"), cfg.imbalance_tolerance
    )
    cs = CoarseState(
        e_meta_c=xavier_init(cfg.m_c, cfg.d, child_seed(cfg.seed, "coarse-codebook")),
        s_c=seed_coarse_assignment(part, cfg.w_star, cfg.t_c),
    )
    norm_adj = sym_normalize(expand_coarse(adj, cs.s_c), allow_negative=True)

    triplets = sample_triplets(data, cfg.negatives_per_positive, cfg.seed)
    users, pos_ent, neg_ent = _triplet_arrays(triplets, data.num_users)
    opt = AdamState(shape=cs.e_meta_c.shape, lr=cfg.lr_coarse, name="e_meta_c")
    batch_rng = stream(cfg.seed, "batch-order", "coarse")

    log = TrainingLog(stage="coarse")
    log.initial_val_ndcg20 = _val_ndcg20(
        coarse_forward(norm_adj, cs, cfg.num_layers).h_full, data
    )
    best_metric = log.initial_val_ndcg20
    best_state = cs.copy()
    log.best_val_ndcg20 = best_metric

    def run_epoch() -> float:
        total = 0.0
        for idx in _batches(len(triplets), cfg.batch_size, batch_rng):
            prop = coarse_forward(norm_adj, cs, cfg.num_layers)
            h = prop.h_full
            b_u, b_p, b_n = users[idx], pos_ent[idx], neg_ent[idx]
            s_pos = np.einsum("ij,ij->i", h[b_u], h[b_p])
            s_neg = np.einsum("ij,ij->i", h[b_u], h[b_n])
            ents = np.unique(np.concatenate([b_u, b_p, b_n]))
            layer0_rows = prop.per_layer_cache[0][ents]
            loss, g_pos, g_neg, g_reg = bpr_loss(s_pos, s_neg, layer0_rows, cfg.l2_weight)
            grad_h = _score_grad(h, b_u, b_p, b_n, g_pos, g_neg)
            grad = backward_coarse(prop, grad_h, cs)
            grad += cs.s_c.to_scipy()[ents].T @ g_reg
            adam_step(cs.e_meta_c, grad, opt)
            total += loss
        return total

    global_epoch = 0
    for phase, (patience, with_updates) in enumerate(
        [(cfg.patience_coarse, False), (cfg.patience_coarse, True)], start=1
    ):
        stall = 0
        phase_epoch = 0
        while stall < patience and phase_epoch < cfg.max_epochs_coarse:
            loss = run_epoch()
            if not np.isfinite(loss):
                _abort_checkpoint(checkpoint_dir, "coarse", cfg, data, cs, None, global_epoch)
                raise NumericalError(f"coarse stage diverged at epoch {global_epoch}")
            if with_updates and phase_epoch % cfg.f_c == 0:
                prop = coarse_forward(norm_adj, cs, cfg.num_layers)
                dense = coarse_assignment_dense(prop.h_full, prop.h_meta_c, cfg.rcond)
                new_s = sparsify_topk(dense, cfg.t_c, cfg.topk_mode)
                log.assignment_updates.append(
                    AssignmentUpdateRecord(
                        stage="coarse",
                        epoch=global_epoch,
                        row_nnz=new_s.row_nnz().tolist(),
                        row_available=np.count_nonzero(dense, axis=1).tolist(),
                    )
                )
                cs.s_c = new_s
                norm_adj = sym_normalize(expand_coarse(adj, cs.s_c), allow_negative=True)
            metric = _val_ndcg20(coarse_forward(norm_adj, cs, cfg.num_layers).h_full, data)
            log.epochs.append(EpochRecord("coarse", phase, global_epoch, loss, metric))
            if metric > best_metric:
                best_metric = metric
                best_state = cs.copy()
                log.best_epoch = global_epoch
                log.best_val_ndcg20 = metric
                stall = 0
            else:
                stall += 1
            phase_epoch += 1
            global_epoch += 1

    return best_state, log


# --- fine stage ---------------------------------------------------------------


def train_fine(
    data: InteractionSet,
    coarse: CoarseState,
    cfg: TrainConfig,
    checkpoint_dir=None,
) -> tuple[FineState, TrainingLog]:
    """Fine stage: coarse codebook and assignment frozen throughout."""
    cfg.validate()
    coarse.check()
    adj = build_interaction_adjacency(data)
    part_r = partition_graph(
        adj, cfg.m_r, derive_int(cfg.seed, "fine-partition"), cfg.imbalance_tolerance
    )
    fs = FineState(
        e_meta_r=init_fine_codebook(
            coarse,
            cfg.m_r,
            cfg.d_r,
            cfg.alpha,
            derive_int(cfg.seed, "fine-init"),
            selection=cfg.row_selection,
            max_iter=cfg.sparse_pca_max_iter,
            tol=cfg.sparse_pca_tol,
        ),
        s_r=seed_fine_assignment(coarse.s_c, part_r, cfg.w_star, cfg.t_r),
        w_cr=cfg.w_cr,
        lambda_thr=cfg.lambda_thr,
    )
    norm_adj = sym_normalize(expand_fine(adj, coarse.s_c, fs.s_r), allow_negative=True)

    triplets = sample_triplets(data, cfg.negatives_per_positive, cfg.seed)
    users, pos_ent, neg_ent = _triplet_arrays(triplets, data.num_users)
    opt = AdamState(shape=fs.e_meta_r.shape, lr=cfg.lr_fine, name="e_meta_r")
    batch_rng = stream(cfg.seed, "batch-order", "fine")

    log = TrainingLog(stage="fine")
    log.initial_val_ndcg20 = _val_ndcg20(
        fine_forward(norm_adj, coarse, fs, cfg.num_layers).h_full, data
    )
    best_metric = log.initial_val_ndcg20
    best_state = fs.copy()
    log.best_val_ndcg20 = best_metric

    s_c_scipy = coarse.s_c.to_scipy()

    def run_epoch() -> float:
        total = 0.0
        for idx in _batches(len(triplets), cfg.batch_size, batch_rng):
            prop = fine_forward(norm_adj, coarse, fs, cfg.num_layers)
            h = prop.h_full
            b_u, b_p, b_n = users[idx], pos_ent[idx], neg_ent[idx]
            s_pos = np.einsum("ij,ij->i", h[b_u], h[b_p])
            s_neg = np.einsum("ij,ij->i", h[b_u], h[b_n])
            ents = np.unique(np.concatenate([b_u, b_p, b_n]))
            s_c_sub = s_c_scipy[ents]
            touched_coarse = np.unique(s_c_sub.indices)
            touched_fine = np.unique(fs.s_r.to_scipy()[touched_coarse].indices)
            z = fs.thresholded()
            layer0_rows = np.vstack([prop.per_layer_cache[0][ents], z[touched_fine]])
            loss, g_pos, g_neg, g_reg = bpr_loss(s_pos, s_neg, layer0_rows, cfg.l2_weight)
            grad_h = _score_grad(h, b_u, b_p, b_n, g_pos, g_neg)
            grad = backward_fine(prop, grad_h, coarse, fs)
            g_reg_ent, g_reg_fine = g_reg[: len(ents)], g_reg[len(ents) :]
            g_z = fs.w_cr * (fs.s_r.to_scipy().T @ (s_c_sub.T @ g_reg_ent))
            g_z[touched_fine] += g_reg_fine
            grad += g_z * soft_threshold_mask(fs.e_meta_r, fs.lambda_thr)
            adam_step(fs.e_meta_r, grad, opt)
            total += loss
        return total

    global_epoch = 0
    for phase, (patience, with_updates) in enumerate(
        [(cfg.patience_fine, False), (cfg.patience_fine, True)], start=1
    ):
        stall = 0
        phase_epoch = 0
        while stall < patience and phase_epoch < cfg.max_epochs_fine:
            loss = run_epoch()
            if not np.isfinite(loss):
                _abort_checkpoint(checkpoint_dir, "fine", cfg, data, coarse, fs, global_epoch)
                raise NumericalError(f"fine stage diverged at epoch {global_epoch}")
            if with_updates and phase_epoch % cfg.f_r == 0:
                prop = fine_forward(norm_adj, coarse, fs, cfg.num_layers)
                dense = bridged_assignment_dense(
                    prop.h_full, prop.h_meta_c, prop.h_meta_r, cfg.rcond
                )
                new_s = sparsify_topk(dense, cfg.t_r, cfg.topk_mode)
                log.assignment_updates.append(
                    AssignmentUpdateRecord(
                        stage="fine",
                        epoch=global_epoch,
                        row_nnz=new_s.row_nnz().tolist(),
                        row_available=np.count_nonzero(dense, axis=1).tolist(),
                    )
                )
                fs.s_r = new_s
                norm_adj = sym_normalize(expand_fine(adj, coarse.s_c, fs.s_r), allow_negative=True)
            metric = _val_ndcg20(fine_forward(norm_adj, coarse, fs, cfg.num_layers).h_full, data)
            log.epochs.append(EpochRecord("fine", phase, global_epoch, loss, metric))
            if metric > best_metric:
                best_metric = metric
                best_state = fs.copy()
                log.best_epoch = global_epoch
                log.best_val_ndcg20 = metric
                stall = 0
            else:
                stall += 1
            phase_epoch += 1
            global_epoch += 1

    return best_state, log


def propagate_model(
    ck: "Checkpoint", data: InteractionSet
) -> PropagationResult:
    """Forward pass of a checkpointed model over the dataset's graph."""
    adj = build_interaction_adjacency(data)
    if ck.fine is None:
        norm_adj = sym_normalize(expand_coarse(adj, ck.coarse.s_c), allow_negative=True)
        return coarse_forward(norm_adj, ck.coarse, ck.config.num_layers)
    norm_adj = sym_normalize(
        expand_fine(adj, ck.coarse.s_c, ck.fine.s_r), allow_negative=True
    )
    return fine_forward(norm_adj, ck.coarse, ck.fine, ck.config.num_layers)


# --- checkpointing ------------------------------------------------------------


@dataclass
class Checkpoint:
    stage: str
    config: TrainConfig
    num_users: int
    num_items: int
    coarse: CoarseState
    fine: FineState | None = None
    epoch: int = 0
    best_metric: float = 0.0


def _checkpoint_arrays(ck: Checkpoint) -> dict[str, np.ndarray]:
    arrays = {
        "e_meta_c": np.ascontiguousarray(ck.coarse.e_meta_c, dtype="<f8"),
        "s_c_offsets": np.ascontiguousarray(ck.coarse.s_c.row_offsets, dtype="<i8"),
        "s_c_indices": np.ascontiguousarray(ck.coarse.s_c.col_indices, dtype="<i8"),
        "s_c_values": np.ascontiguousarray(ck.coarse.s_c.values, dtype="<f8"),
    }
    if ck.fine is not None:
        arrays.update(
            {
                "e_meta_r": np.ascontiguousarray(ck.fine.e_meta_r, dtype="<f8"),
                "s_r_offsets": np.ascontiguousarray(ck.fine.s_r.row_offsets, dtype="<i8"),
                "s_r_indices": np.ascontiguousarray(ck.fine.s_r.col_indices, dtype="<i8"),
                "s_r_values": np.ascontiguousarray(ck.fine.s_r.values, dtype="<f8"),
            }
        )
    return arrays


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write the documented binary container atomically (temp + rename)."""
    arrays = _checkpoint_arrays(ck)
    manifest = []
    offset = 0
    for name, arr in arrays.items():
        manifest.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "stage": ck.stage,
        "num_users": ck.num_users,
        "num_items": ck.num_items,
        "epoch": ck.epoch,
        "best_metric": ck.best_metric,
        "config": ck.config.to_dict(),
        "fine": None
        if ck.fine is None
        else {
            "w_cr": ck.fine.w_cr,
            "lambda_thr": ck.fine.lambda_thr,
            "s_r_shape": [ck.fine.s_r.rows, ck.fine.s_r.cols],
        },
        "s_c_shape": [ck.coarse.s_c.rows, ck.coarse.s_c.cols],
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        header_len = int.from_bytes(fh.read(8), "little")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: version {header.get('format_version')} != {CHECKPOINT_VERSION}"
            )
        payload = fh.read()
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        end = start + count * dtype.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {spec['name']}")
        arrays[spec["name"]] = (
            np.frombuffer(payload[start:end], dtype=dtype).reshape(shape).copy()
        )
    cfg = config_from_mapping(header["config"])
    expected = (cfg.m_c, cfg.d)
    if arrays["e_meta_c"].shape != expected:
        raise CheckpointError(
            f"{path}: coarse codebook shape {arrays['e_meta_c'].shape} "
            f"does not match config {expected}"
        )
    s_c_rows, s_c_cols = header["s_c_shape"]
    coarse = CoarseState(
        e_meta_c=arrays["e_meta_c"].astype(np.float64),
        s_c=SparseMatrix(
            rows=s_c_rows,
            cols=s_c_cols,
            row_offsets=arrays["s_c_offsets"].astype(np.int64),
            col_indices=arrays["s_c_indices"].astype(np.int64),
            values=arrays["s_c_values"].astype(np.float64),
        ),
    )
    fine = None
    if header["fine"] is not None:
        if arrays["e_meta_r"].shape != (cfg.m_r, cfg.d):
            raise CheckpointError(
                f"{path}: fine codebook shape {arrays['e_meta_r'].shape} "
                f"does not match config {(cfg.m_r, cfg.d)}"
            )
        rows, cols = header["fine"]["s_r_shape"]
        fine = FineState(
            e_meta_r=arrays["e_meta_r"].astype(np.float64),
            s_r=SparseMatrix(
                rows=rows,
                cols=cols,
                row_offsets=arrays["s_r_offsets"].astype(np.int64),
                col_indices=arrays["s_r_indices"].astype(np.int64),
                values=arrays["s_r_values"].astype(np.float64),
            ),
            w_cr=header["fine"]["w_cr"],
            lambda_thr=header["fine"]["lambda_thr"],
        )
    return Checkpoint(
        stage=header["stage"],
        config=cfg,
        num_users=header["num_users"],
        num_items=header["num_items"],
        coarse=coarse,
        fine=fine,
        epoch=header["epoch"],
        best_metric=header["best_metric"],
    )


def _abort_checkpoint(checkpoint_dir, stage, cfg, data, coarse, fine, epoch) -> None:
    if checkpoint_dir is None:
        return
    path = Path(checkpoint_dir) / f"{stage}_abort.ckpt"
    try:
        save_checkpoint(
            Checkpoint(
                stage=stage,
                config=cfg,
                num_users=data.num_users,
                num_items=data.num_items,
                coarse=coarse,
                fine=fine,
                epoch=epoch,
            ),
            path,
        )
        logger.error("divergence: state saved to %s", path)
    except OSError:
        logger.exception("divergence: failed to save abort checkpoint")
