import numpy as np
import pytest

from c2frec.errors import ContractViolation, DimensionError
from c2frec.graphkit import (
    Partition,
    SparseMatrix,
    build_interaction_adjacency,
    expand_coarse,
    expand_fine,
    load_partition,
    partition_graph,
    spmm,
    sym_normalize,
)

from conftest import make_interactions, random_interactions, random_sparse


def dense_bipartite(data):
    r = np.zeros((data.num_users, data.num_items))
    for u, i in data.train_pairs.tolist():
        r[u, i] = 1.0
    n = data.num_users + data.num_items
    out = np.zeros((n, n))
    out[: data.num_users, data.num_users :] = r
    out[data.num_users :, : data.num_users] = r.T
    return out


def test_adjacency_single_pair():
    data = make_interactions(1, 1, [(0, 0)])
    adj = build_interaction_adjacency(data)
    assert np.array_equal(adj.to_dense(), [[0, 1], [1, 0]])


def test_adjacency_item_degree():
    data = make_interactions(2, 1, [(0, 0), (1, 0)])
    adj = build_interaction_adjacency(data)
    assert adj.to_dense()[2].sum() == 2  # item node degree


def test_adjacency_matches_dense_oracle(rng):
    data = random_interactions(10, 10, 25, rng)
    adj = build_interaction_adjacency(data)
    assert np.array_equal(adj.to_dense(), dense_bipartite(data))
    adj.validate()


def test_expand_coarse_isolated_and_degree():
    data = make_interactions(1, 1, [(0, 0)])
    adj = build_interaction_adjacency(data)
    zero = SparseMatrix.zeros(2, 3)
    out = expand_coarse(adj, zero)
    dense = out.to_dense()
    assert dense.shape == (5, 5)
    assert np.array_equal(dense[:2, :2], adj.to_dense())
    assert not dense[2:].any() and not dense[:, 2:].any()

    s = SparseMatrix.from_dense(np.array([[1.0], [1.0]]))
    out2 = expand_coarse(adj, s)
    assert out2.to_dense()[2].sum() == 2  # codebook node degree


def test_expand_coarse_dense_oracle(rng):
    data = random_interactions(6, 5, 12, rng)
    adj = build_interaction_adjacency(data)
    s_c = random_sparse(11, 4, 2, rng)
    out = expand_coarse(adj, s_c)
    a, s = adj.to_dense(), s_c.to_dense()
    expected = np.block([[a, s], [s.T, np.zeros((4, 4))]])
    assert np.allclose(out.to_dense(), expected, atol=0)
    assert (out.to_dense() == out.to_dense().T).all()
    with pytest.raises(DimensionError):
        expand_coarse(adj, random_sparse(7, 4, 2, rng))


def test_expand_fine_structure(rng):
    data = random_interactions(5, 4, 10, rng)
    adj = build_interaction_adjacency(data)
    s_c = random_sparse(9, 3, 2, rng)
    s_r = random_sparse(3, 2, 1, rng)
    out = expand_fine(adj, s_c, s_r)
    a, sc, sr = adj.to_dense(), s_c.to_dense(), s_r.to_dense()
    expected = np.block(
        [
            [a, sc, np.zeros((9, 2))],
            [sc.T, np.zeros((3, 3)), sr],
            [np.zeros((2, 9)), sr.T, np.zeros((2, 2))],
        ]
    )
    dense = out.to_dense()
    assert np.array_equal(dense, expected)
    assert np.array_equal(dense, dense.T)
    assert not dense[:9, 12:].any()  # entity-fine block is empty by construction

    isolated = expand_fine(adj, s_c, SparseMatrix.zeros(3, 2))
    assert not isolated.to_dense()[12:].any()


def test_sym_normalize_small_cases():
    edge = SparseMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(sym_normalize(edge).to_dense(), [[0, 1], [1, 0]])

    star = SparseMatrix.from_dense(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float))
    out = sym_normalize(star).to_dense()
    assert np.allclose(out[0, 1], 1 / np.sqrt(2))
    assert np.allclose(out[1, 0], 1 / np.sqrt(2))


def test_sym_normalize_dense_oracle(rng):
    n = 30
    mask = rng.random((n, n)) < 0.2
    a = np.triu(mask * rng.uniform(0.5, 2.0, (n, n)), 1)
    a = a + a.T
    adj = SparseMatrix.from_dense(a)
    out = sym_normalize(adj).to_dense()
    deg = a.sum(axis=1)
    scale = np.where(deg > 0, 1 / np.sqrt(np.where(deg > 0, deg, 1)), 1.0)
    expected = scale[:, None] * a * scale[None, :]
    assert np.abs(out - expected).max() < 1e-12
    # sparsity pattern is preserved
    assert np.array_equal(out != 0, a != 0)


def test_sym_normalize_zero_degree_rows():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    out = sym_normalize(SparseMatrix.from_dense(a)).to_dense()
    assert not out[2].any() and not out[:, 2].any()


def test_sym_normalize_negative_entries():
    a = np.array([[0.0, -1.0], [-1.0, 0.0]])
    with pytest.raises(ContractViolation):
        sym_normalize(SparseMatrix.from_dense(a))
    out = sym_normalize(SparseMatrix.from_dense(a), allow_negative=True).to_dense()
    assert np.allclose(out, [[0, -1], [-1, 0]])  # |.| degrees keep scaling real


def test_spmm(rng):
    b = rng.standard_normal((4, 3))
    ident = SparseMatrix.from_dense(np.eye(4))
    assert np.array_equal(spmm(ident, b), b)
    assert not spmm(SparseMatrix.zeros(5, 4), b).any()
    a = rng.standard_normal((20, 20)) * (rng.random((20, 20)) < 0.3)
    c = rng.standard_normal((20, 20))
    assert np.abs(spmm(SparseMatrix.from_dense(a), c) - a @ c).max() < 1e-12
    with pytest.raises(DimensionError):
        spmm(ident, rng.standard_normal((5, 2)))


def _clique_graph():
    a = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    a[i, j] = 1.0
    return SparseMatrix.from_dense(a)


def test_partition_single_part():
    adj = _clique_graph()
    part = partition_graph(adj, 1, seed=0)
    assert part.num_parts == 1
    assert not part.assignment.any()


def test_partition_two_cliques():
    adj = _clique_graph()
    part = partition_graph(adj, 2, seed=0)
    groups = {frozenset(np.nonzero(part.assignment == p)[0].tolist()) for p in range(2)}
    assert groups == {frozenset(range(4)), frozenset(range(4, 8))}


def test_partition_deterministic(rng):
    data = random_interactions(30, 20, 120, rng)
    adj = build_interaction_adjacency(data)
    a = partition_graph(adj, 5, seed=7)
    b = partition_graph(adj, 5, seed=7)
    assert np.array_equal(a.assignment, b.assignment)


def test_partition_balance_and_coverage(rng):
    for trial in range(5):
        data = random_interactions(40, 25, 150, np.random.default_rng(trial))
        adj = build_interaction_adjacency(data)
        for parts in (2, 7, 13):
            part = partition_graph(adj, parts, seed=trial)
            part.validate()  # non-empty parts within the balance cap
            assert len(part.assignment) == 65


def test_partition_num_parts_bounds():
    adj = _clique_graph()
    with pytest.raises(ContractViolation):
        partition_graph(adj, 9, seed=0)
    with pytest.raises(ContractViolation):
        partition_graph(adj, 0, seed=0)
    everyone = partition_graph(adj, 8, seed=0)
    assert np.array_equal(everyone.assignment, np.arange(8))


def test_load_partition(tmp_path):
    path = tmp_path / "parts.txt"
    path.write_text("0\n1\n0\n1\n", encoding="utf-8")
    part = load_partition(path, 4)
    assert part.num_parts == 2
    with pytest.raises(ContractViolation, match="entries"):
        load_partition(path, 5)
    bad = tmp_path / "bad.txt"
    bad.write_text("0\n0\n0\n3\n", encoding="utf-8")  # parts 1, 2 empty
    with pytest.raises(ContractViolation):
        load_partition(bad, 4)


def test_sparse_matrix_canonical(rng):
    # duplicate coordinates merge, zeros vanish, columns sorted
    m = SparseMatrix.from_coo(
        2,
        4,
        np.array([0, 0, 0, 1]),
        np.array([3, 1, 3, 2]),
        np.array([1.0, 2.0, -1.0, 0.0]),
    )
    m.validate()
    assert m.nnz == 1
    assert m.to_dense()[0, 1] == 2.0
    t = m.transpose()
    assert t.shape == (4, 2)
    assert t.to_dense()[1, 0] == 2.0
