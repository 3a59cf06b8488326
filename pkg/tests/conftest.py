import numpy as np
import pytest

from c2frec.corpus import InteractionSet
from c2frec.graphkit import SparseMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_interactions(num_users, num_items, pairs, val=(), test=()):
    return InteractionSet(
        num_users=num_users,
        num_items=num_items,
        train_pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        validation_pairs=np.array(val, dtype=np.int64).reshape(-1, 2),
        test_pairs=np.array(test, dtype=np.int64).reshape(-1, 2),
    )


def random_interactions(num_users, num_items, n_pairs, rng):
    pairs = set()
    while len(pairs) < n_pairs:
        pairs.add((int(rng.integers(num_users)), int(rng.integers(num_items))))
    return make_interactions(num_users, num_items, sorted(pairs))


def random_sparse(rows, cols, nnz_per_row, rng, low=-1.0, high=1.0):
    """Random assignment-style matrix with nnz_per_row entries per row."""
    r, c, v = [], [], []
    for i in range(rows):
        picked = rng.choice(cols, size=min(nnz_per_row, cols), replace=False)
        for j in picked:
            val = 0.0
            while val == 0.0:
                val = rng.uniform(low, high)
            r.append(i)
            c.append(int(j))
            v.append(val)
    return SparseMatrix.from_coo(
        rows, cols, np.array(r, dtype=np.int64), np.array(c, dtype=np.int64), np.array(v)
    )
