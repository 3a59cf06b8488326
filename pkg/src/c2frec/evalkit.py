"""Ranking metrics, full-ranking evaluation, and the parameter-budget audit."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .codebook import CoarseState, FineState
from .corpus import InteractionSet
from .numerics import soft_threshold

DEFAULT_CUTOFFS = (5, 10, 20)


def rank_items(
    h_full: np.ndarray, user: int, exclude, top_n: int, num_users: int
) -> np.ndarray:
    """Items sorted by descending score h_u . h_i, ties to the lower index.

    `exclude` items (the user's train set) never appear. Item rows sit at
    offset num_users inside the entity block.
    """
    num_items = h_full.shape[0] - num_users
    scores = h_full[num_users:] @ h_full[user]
    if exclude:
        scores = scores.copy()
        scores[np.fromiter(exclude, dtype=np.int64)] = -np.inf
    order = np.argsort(-scores, kind="stable")
    ranked = order[np.isfinite(scores[order])]
    return ranked[: min(top_n, num_items)]


def ndcg_at_n(ranked, relevant, n: int) -> float:
    """Binary-relevance NDCG with gain 1/log2(rank + 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    relevant = set(relevant)
    if not relevant:
        return 0.0
    dcg = sum(
        1.0 / np.log2(rank + 2) for rank, item in enumerate(ranked[:n]) if item in relevant
    )
    idcg = sum(1.0 / np.log2(rank + 2) for rank in range(min(len(relevant), n)))
    return float(dcg / idcg)


def recall_at_n(ranked, relevant, n: int) -> float:
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hits = sum(1 for item in ranked[:n] if item in relevant)
    return hits / len(relevant)


def evaluate(
    h_full: np.ndarray,
    data: InteractionSet,
    cutoffs=DEFAULT_CUTOFFS,
    split: str = "test",
) -> dict[int, dict[str, float]]:
    """Per-user NDCG/Recall averaged over users with non-empty `split` sets.

    Full ranking over all items minus the user's train positives.
    """
    cutoffs = tuple(int(c) for c in cutoffs)
    by_user = data.pairs_by_user(split)
    train_sets = data.train_items_by_user()
    max_n = max(cutoffs)
    sums = {n: {"ndcg": 0.0, "recall": 0.0} for n in cutoffs}
    n_users = 0
    for user in sorted(by_user):
        relevant = by_user[user]
        if not relevant:
            continue
        n_users += 1
        ranked = rank_items(h_full, user, train_sets[user], max_n, data.num_users)
        for n in cutoffs:
            sums[n]["ndcg"] += ndcg_at_n(ranked, relevant, n)
            sums[n]["recall"] += recall_at_n(ranked, relevant, n)
    if n_users == 0:
        return {n: {"ndcg": 0.0, "recall": 0.0} for n in cutoffs}
    return {
        n: {"ndcg": sums[n]["ndcg"] / n_users, "recall": sums[n]["recall"] / n_users}
        for n in cutoffs
    }


def metrics_to_csv(metrics: dict[int, dict[str, float]], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write("cutoff,ndcg,recall\n")
        for cutoff in sorted(metrics):
            row = metrics[cutoff]
            fh.write(f"{cutoff},{row['ndcg']:.10f},{row['recall']:.10f}\n")


def audit_params(coarse: CoarseState, fine: FineState | None = None) -> dict[str, int]:
    """Stored-nonzero budget: assignments by nnz, coarse codebook dense.

    The fine codebook counts entries surviving its soft threshold.
    """
    report = {
        "coarse_assignment_nnz": coarse.s_c.nnz,
        "coarse_codebook": coarse.e_meta_c.shape[0] * coarse.e_meta_c.shape[1],
        "fine_assignment_nnz": 0,
        "fine_codebook_nnz": 0,
    }
    if fine is not None:
        report["fine_assignment_nnz"] = fine.s_r.nnz
        report["fine_codebook_nnz"] = int(
            np.count_nonzero(soft_threshold(fine.e_meta_r, fine.lambda_thr))
        )
    report["total"] = (
        report["coarse_assignment_nnz"]
        + report["coarse_codebook"]
        + report["fine_assignment_nnz"]
        + report["fine_codebook_nnz"]
    )
    return report


def audit_to_text(report: dict[str, int]) -> str:
    return "\n".join(f"{key}={report[key]}" for key in report) + "\n"
