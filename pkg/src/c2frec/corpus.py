"""Interaction datasets: loading, ID remapping, splits, negative sampling.

Two plain-text formats are accepted: one "user item" pair per line, and
adjacency lists "user item item ...". Raw IDs are remapped to dense
0-based indices in first-appearance order (train file first, then
validation, then test); the mapping is written alongside the train file
as "raw_id<TAB>dense_index" lines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, ParseError, SamplingError
from .rng import stream

logger = logging.getLogger(__name__)

FORMATS = ("pair-per-line", "adjacency-list")


@dataclass(eq=False)
class InteractionSet:
    """Users, items, and observed (user, item) pairs per split.

    Pair arrays are (n, 2) int64 with dense 0-based indices. Splits are
    deduplicated and pairwise disjoint; arrays are frozen after init.
    """

    num_users: int
    num_items: int
    train_pairs: np.ndarray
    validation_pairs: np.ndarray
    test_pairs: np.ndarray
    _train_sets: list[frozenset] = field(init=False, repr=False, default_factory=list)

    def __post_init__(self) -> None:
        for name in ("train_pairs", "validation_pairs", "test_pairs"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._check_invariants()

    def _check_invariants(self) -> None:
        codes: list[np.ndarray] = []
        for name in ("train_pairs", "validation_pairs", "test_pairs"):
            arr = getattr(self, name)
            if arr.size == 0:
                continue
            if arr[:, 0].min() < 0 or arr[:, 0].max() >= self.num_users:
                raise ValueError(f"{name}: user index out of range")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_items:
                raise ValueError(f"{name}: item index out of range")
            code = arr[:, 0] * np.int64(self.num_items) + arr[:, 1]
            if np.unique(code).size != code.size:
                raise ValueError(f"{name}: duplicate pair within split")
            codes.append(code)
        merged = np.concatenate(codes) if codes else np.zeros(0, dtype=np.int64)
        if np.unique(merged).size != merged.size:
            raise ValueError("splits overlap: the same pair appears in two splits")

    @property
    def num_entities(self) -> int:
        return self.num_users + self.num_items

    def train_items_by_user(self) -> list[frozenset]:
        """Per-user frozenset of train items (cached)."""
        if not self._train_sets:
            sets: list[set] = [set() for _ in range(self.num_users)]
            for u, i in self.train_pairs.tolist():
                sets[u].add(i)
            self._train_sets = [frozenset(s) for s in sets]
        return self._train_sets

    def pairs_by_user(self, split: str) -> dict[int, list[int]]:
        arr = getattr(self, f"{split}_pairs")
        out: dict[int, list[int]] = {}
        for u, i in arr.tolist():
            out.setdefault(u, []).append(i)
        return out


@dataclass(frozen=True)
class TrainingTriplet:
    user: int
    pos_item: int
    neg_item: int


def _parse_split_file(path: Path, fmt: str) -> list[tuple[int, int]]:
    pairs: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                ids = [int(t) for t in tokens]
                if any(v < 0 for v in ids):
                    raise ValueError("negative id")
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed line {line.rstrip()!r}") from exc
            if fmt == "pair-per-line":
                if len(ids) != 2:
                    raise ParseError(
                        f"{path}:{lineno}: expected 'user item', got {len(ids)} fields"
                    )
                pairs.append((ids[0], ids[1]))
            else:
                user = ids[0]
                pairs.extend((user, item) for item in ids[1:])
                if len(ids) == 1:
                    pairs.append((user, -1))  # bare user: register the id, no items
    return pairs


def _write_mapping(path: Path, mapping: dict[int, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for raw, dense in mapping.items():
            fh.write(f"{raw}\t{dense}\n")


def load_interactions(
    path,
    fmt: str = "pair-per-line",
    validation_path=None,
    test_path=None,
    mapping_dir=None,
) -> InteractionSet:
    """Load pre-split interaction files and remap IDs to dense indices.

    Validation/test files are optional; when given, their IDs share the
    train mapping (new IDs extend it). ID maps are persisted next to the
    train file (or into `mapping_dir`).
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    path = Path(path)
    raw_splits = [_parse_split_file(path, fmt)]
    for extra in (validation_path, test_path):
        raw_splits.append(_parse_split_file(Path(extra), fmt) if extra else [])
    if not any(pair[1] >= 0 for pair in raw_splits[0]):
        raise EmptyDatasetError(f"{path}: no interactions found")

    user_map: dict[int, int] = {}
    item_map: dict[int, int] = {}
    splits: list[np.ndarray] = []
    for split_pairs in raw_splits:
        dense: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        dups = 0
        for raw_u, raw_i in split_pairs:
            if raw_u not in user_map:
                user_map[raw_u] = len(user_map)
            if raw_i < 0:
                continue
            if raw_i not in item_map:
                item_map[raw_i] = len(item_map)
            pair = (user_map[raw_u], item_map[raw_i])
            if pair in seen:
                dups += 1
                continue
            seen.add(pair)
            dense.append(pair)
        if dups:
            logger.info("load_interactions: dropped %d duplicate pairs", dups)
        splits.append(np.array(dense, dtype=np.int64).reshape(-1, 2))

    mapping_dir = Path(mapping_dir) if mapping_dir else path.parent
    _write_mapping(mapping_dir / f"{path.stem}.users.idmap", user_map)
    _write_mapping(mapping_dir / f"{path.stem}.items.idmap", item_map)

    return InteractionSet(
        num_users=len(user_map),
        num_items=len(item_map),
        train_pairs=splits[0],
        validation_pairs=splits[1],
        test_pairs=splits[2],
    )


def sample_triplets(
    interactions: InteractionSet, negatives_per_positive: int, seed: int
) -> list[TrainingTriplet]:
    """Uniform negatives over each user's non-interacted train items.

    Output order follows train_pairs; length is
    len(train_pairs) * negatives_per_positive. Deterministic per seed.
    """
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    rng = stream(seed, "negative-sampling")
    train_sets = interactions.train_items_by_user()
    n_items = interactions.num_items
    triplets: list[TrainingTriplet] = []
    for u, pos in interactions.train_pairs.tolist():
        interacted = train_sets[u]
        free = n_items - len(interacted)
        if free <= 0:
            raise SamplingError(f"user {u} has interacted with every item")
        if free <= n_items // 2:
            candidates = np.array(sorted(set(range(n_items)) - interacted), dtype=np.int64)
            draws = rng.choice(candidates, size=negatives_per_positive, replace=True)
            triplets.extend(TrainingTriplet(u, pos, int(neg)) for neg in draws)
        else:
            for _ in range(negatives_per_positive):
                neg = int(rng.integers(0, n_items))
                while neg in interacted:
                    neg = int(rng.integers(0, n_items))
                triplets.append(TrainingTriplet(u, pos, neg))
    return triplets


def dataset_stats(interactions: InteractionSet) -> dict:
    n_inter = len(interactions.train_pairs) + len(interactions.validation_pairs) + len(
        interactions.test_pairs
    )
    denom = interactions.num_users * interactions.num_items
    return {
        "num_users": interactions.num_users,
        "num_items": interactions.num_items,
        "num_interactions": n_inter,
        "density": n_inter / denom if denom else 0.0,
    }


# --- synthetic clustered corpus ----------------------------------------------


def make_synthetic_interactions(
    users: int,
    items: int,
    blocks: int,
    density: float = 0.5,
    seed: int = 0,
    cross_block_factor: float = 20.0,
) -> InteractionSet:
    """Block-structured corpus with a seeded 80/10/10 per-user split.

    Users and items get blocks round-robin; a (u, i) pair interacts with
    probability `density` inside the shared block and density / 20 across
    blocks. Users with fewer than 3 interactions keep them all in train.
    """
    if blocks < 1 or users < 1 or items < 1:
        raise ValueError("users, items, blocks must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    rng = stream(seed, "synthetic")
    user_block = np.arange(users) % blocks
    item_block = np.arange(items) % blocks
    same = user_block[:, None] == item_block[None, :]
    prob = np.where(same, density, density / cross_block_factor)
    hits = rng.random((users, items)) < prob
    # no dead nodes: every user and item keeps at least one interaction
    for u in np.nonzero(hits.sum(axis=1) == 0)[0]:
        pool = np.nonzero(item_block == user_block[u])[0]
        hits[u, rng.choice(pool if pool.size else items)] = True
    for i in np.nonzero(hits.sum(axis=0) == 0)[0]:
        pool = np.nonzero(user_block == item_block[i])[0]
        hits[rng.choice(pool if pool.size else users), i] = True
    u_idx, i_idx = np.nonzero(hits)

    train, val, test = [], [], []
    split_rng = stream(seed, "synthetic-split")
    for u in range(users):
        items_u = i_idx[u_idx == u]
        if len(items_u) == 0:
            continue
        items_u = split_rng.permutation(items_u)
        n = len(items_u)
        if n < 3:
            train.extend((u, int(i)) for i in items_u)
            continue
        n_test = max(1, int(round(0.1 * n)))
        n_val = max(1, int(round(0.1 * n)))
        test.extend((u, int(i)) for i in items_u[:n_test])
        val.extend((u, int(i)) for i in items_u[n_test : n_test + n_val])
        train.extend((u, int(i)) for i in items_u[n_test + n_val :])

    return InteractionSet(
        num_users=users,
        num_items=items,
        train_pairs=np.array(train, dtype=np.int64).reshape(-1, 2),
        validation_pairs=np.array(val, dtype=np.int64).reshape(-1, 2),
        test_pairs=np.array(test, dtype=np.int64).reshape(-1, 2),
    )


def write_split_files(interactions: InteractionSet, out_dir) -> None:
    """Write train/validation/test pair-per-line files plus identity ID maps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "validation", "test"):
        arr = getattr(interactions, f"{split}_pairs")
        with open(out / f"{split}.txt", "w", encoding="utf-8") as fh:
            for u, i in arr.tolist():
                fh.write(f"{u} {i}\n")
    _write_mapping(out / "train.users.idmap", {u: u for u in range(interactions.num_users)})
    _write_mapping(out / "train.items.idmap", {i: i for i in range(interactions.num_items)})


def load_split_dir(data_dir, fmt: str = "pair-per-line") -> InteractionSet:
    """Load a directory holding train.txt / validation.txt / test.txt."""
    data_dir = Path(data_dir)
    val = data_dir / "validation.txt"
    test = data_dir / "test.txt"
    return load_interactions(
        data_dir / "train.txt",
        fmt,
        validation_path=val if val.exists() else None,
        test_path=test if test.exists() else None,
    )
