import dataclasses

import numpy as np
import pytest

from c2frec.corpus import make_synthetic_interactions
from c2frec.errors import CheckpointError, NumericalError
from c2frec.trainer import (
    Checkpoint,
    TrainConfig,
    bpr_loss,
    config_from_mapping,
    load_checkpoint,
    propagate_model,
    save_checkpoint,
    score,
    train_coarse,
    train_fine,
)


def desk_config(**overrides):
    base = dict(
        d=16,
        m_c=8,
        m_r=4,
        t_c=2,
        t_r=2,
        d_r=4,
        alpha=0.1,
        w_cr=0.2,
        lambda_thr=0.02,
        num_layers=2,
        lr_coarse=1e-2,
        lr_fine=1e-2,
        batch_size=2048,
        seed=7,
        patience_coarse=3,
        patience_fine=2,
        max_epochs_coarse=6,
        max_epochs_fine=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_data():
    return make_synthetic_interactions(60, 40, 4, density=0.4, seed=3)


def test_score_basics():
    h = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert score(h, 0, 0, num_users=1) == 1.0
    assert score(h, 0, 1, num_users=1) == 0.0
    with pytest.raises(IndexError):
        score(h, 1, 0, num_users=1)
    with pytest.raises(IndexError):
        score(h, 0, 5, num_users=1)


def test_score_dot_oracle(rng):
    h = rng.standard_normal((5, 3))
    assert score(h, 1, 2, num_users=2) == pytest.approx(float(np.dot(h[1], h[4])))


def test_bpr_loss_equal_scores():
    s = np.array([0.3, -1.2])
    loss, g_pos, g_neg, _ = bpr_loss(s, s.copy(), np.zeros((0, 2)), 0.0)
    assert loss == pytest.approx(2 * np.log(2))
    assert np.allclose(g_pos, -0.5) and np.allclose(g_neg, 0.5)


def test_bpr_loss_vanishes_at_large_margin():
    loss, _, _, _ = bpr_loss(np.array([40.0]), np.array([0.0]), np.zeros((0, 2)), 0.0)
    assert loss < 1e-12


def test_bpr_loss_rejects_nonfinite():
    with pytest.raises(NumericalError):
        bpr_loss(np.array([np.nan]), np.array([0.0]), np.zeros((0, 2)), 0.0)


def test_bpr_loss_finite_difference(rng):
    pos = rng.standard_normal(6)
    neg = rng.standard_normal(6)
    rows = rng.standard_normal((3, 4))
    l2 = 0.05
    loss, g_pos, g_neg, g_rows = bpr_loss(pos, neg, rows, l2)
    h = 1e-6

    def probe(p, n, r):
        return bpr_loss(p, n, r, l2)[0]

    for k in range(6):
        up, down = pos.copy(), pos.copy()
        up[k] += h
        down[k] -= h
        fd = (probe(up, neg, rows) - probe(down, neg, rows)) / (2 * h)
        assert abs(fd - g_pos[k]) <= 1e-5 * max(1, abs(fd))
        up, down = neg.copy(), neg.copy()
        up[k] += h
        down[k] -= h
        fd = (probe(pos, up, rows) - probe(pos, down, rows)) / (2 * h)
        assert abs(fd - g_neg[k]) <= 1e-5 * max(1, abs(fd))
    for i in range(3):
        for j in range(4):
            up, down = rows.copy(), rows.copy()
            up[i, j] += h
            down[i, j] -= h
            fd = (probe(pos, neg, up) - probe(pos, neg, down)) / (2 * h)
            assert abs(fd - g_rows[i, j]) <= 1e-5 * max(1, abs(fd))


def test_config_validation():
    with pytest.raises(ValueError, match="t_c"):
        TrainConfig(t_c=10, m_c=4).validate()
    with pytest.raises(ValueError, match="w_cr"):
        TrainConfig(w_cr=1.5).validate()
    with pytest.raises(ValueError, match="d_r"):
        TrainConfig(m_r=4, t_r=2, d_r=8, m_c=300).validate()
    TrainConfig().validate()  # defaults are consistent


def test_config_reference_defaults():
    cfg = TrainConfig()
    assert cfg.d == 128
    assert (cfg.m_c, cfg.m_r) == (300, 100)
    assert (cfg.lr_coarse, cfg.lr_fine) == (1e-3, 3e-3)
    assert cfg.l2_weight == 5e-4
    assert (cfg.patience_coarse, cfg.patience_fine) == (10, 5)
    assert cfg.negatives_per_positive == 5


def test_config_from_mapping():
    cfg = config_from_mapping({"d": "32", "lr_coarse": "0.01", "topk_mode": "magnitude"})
    assert cfg.d == 32 and cfg.lr_coarse == 0.01 and cfg.topk_mode == "magnitude"
    with pytest.raises(ValueError, match="unknown config key"):
        config_from_mapping({"nope": "1"})


def test_zero_lr_leaves_codebook_unchanged(small_data):
    cfg = desk_config(lr_coarse=0.0, patience_coarse=1, max_epochs_coarse=3)
    state, log = train_coarse(small_data, cfg)
    from c2frec.numerics import xavier_init
    from c2frec.rng import child_seed

    init = xavier_init(cfg.m_c, cfg.d, child_seed(cfg.seed, "coarse-codebook"))
    assert np.array_equal(state.e_meta_c, init)
    assert len(log.epochs) <= 2 * cfg.max_epochs_coarse


def test_training_deterministic(small_data):
    cfg = desk_config()
    s1, l1 = train_coarse(small_data, cfg)
    s2, l2 = train_coarse(small_data, cfg)
    assert np.array_equal(s1.e_meta_c, s2.e_meta_c)
    assert np.array_equal(s1.s_c.values, s2.s_c.values)
    assert l1.epochs == l2.epochs
    f1, fl1 = train_fine(small_data, s1, cfg)
    f2, fl2 = train_fine(small_data, s2, cfg)
    assert np.array_equal(f1.e_meta_r, f2.e_meta_r)
    assert fl1.epochs == fl2.epochs


def test_full_batch_loss_monotone_first_epochs(small_data):
    cfg = desk_config(lr_coarse=1e-3, batch_size=0, max_epochs_coarse=5, patience_coarse=10)
    _, log = train_coarse(small_data, cfg)
    losses = [rec.loss for rec in log.epochs[:5]]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_fine_stage_freezes_coarse(small_data):
    cfg = desk_config()
    coarse, _ = train_coarse(small_data, cfg)
    e_before = coarse.e_meta_c.copy()
    s_before = (
        coarse.s_c.row_offsets.copy(),
        coarse.s_c.col_indices.copy(),
        coarse.s_c.values.copy(),
    )
    train_fine(small_data, coarse, cfg)
    assert np.array_equal(coarse.e_meta_c, e_before)
    assert np.array_equal(coarse.s_c.row_offsets, s_before[0])
    assert np.array_equal(coarse.s_c.col_indices, s_before[1])
    assert np.array_equal(coarse.s_c.values, s_before[2])


def test_fine_stage_huge_threshold_freezes_fine_codebook(small_data):
    # every entry sits below the threshold: the subgradient mask kills all
    # updates and the fine codebook never moves
    cfg = desk_config(lambda_thr=1e6, max_epochs_fine=2, patience_fine=1)
    coarse, _ = train_coarse(small_data, cfg)
    from c2frec.codebook import init_fine_codebook
    from c2frec.rng import derive_int

    expected_init = init_fine_codebook(
        coarse, cfg.m_r, cfg.d_r, cfg.alpha, derive_int(cfg.seed, "fine-init")
    )
    fine, _ = train_fine(small_data, coarse, cfg)
    assert np.array_equal(fine.e_meta_r, expected_init)
    assert not fine.thresholded().any()


def test_assignment_updates_logged(small_data):
    cfg = desk_config()
    coarse, log = train_coarse(small_data, cfg)
    assert log.assignment_updates, "phase 2 must record assignment updates"
    for rec in log.assignment_updates:
        assert all(
            n == min(cfg.t_c, avail) for n, avail in zip(rec.row_nnz, rec.row_available)
        )


def test_checkpoint_round_trip(tmp_path, small_data):
    cfg = desk_config(max_epochs_coarse=2, max_epochs_fine=2)
    coarse, _ = train_coarse(small_data, cfg)
    fine, flog = train_fine(small_data, coarse, cfg)
    ck = Checkpoint(
        stage="fine",
        config=cfg,
        num_users=small_data.num_users,
        num_items=small_data.num_items,
        coarse=coarse,
        fine=fine,
        epoch=flog.best_epoch,
        best_metric=flog.best_val_ndcg20,
    )
    path = tmp_path / "model.ckpt"
    save_checkpoint(ck, path)
    loaded = load_checkpoint(path)
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()  # byte-identical round trip

    h1 = propagate_model(ck, small_data).h_full
    h2 = propagate_model(loaded, small_data).h_full
    assert np.array_equal(h1, h2)  # bitwise identical forward scores


def test_checkpoint_rejects_mismatched_dim(tmp_path, small_data):
    cfg = desk_config(max_epochs_coarse=1, patience_coarse=1)
    coarse, _ = train_coarse(small_data, cfg)
    ck = Checkpoint(
        stage="coarse",
        config=dataclasses.replace(cfg, d=32),  # header claims a different d
        num_users=small_data.num_users,
        num_items=small_data.num_items,
        coarse=coarse,
    )
    path = tmp_path / "bad.ckpt"
    save_checkpoint(ck, path)
    with pytest.raises(CheckpointError, match="does not match config"):
        load_checkpoint(path)


def test_checkpoint_rejects_corrupt_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_divergence_aborts_with_checkpoint(tmp_path, small_data, monkeypatch):
    cfg = desk_config(max_epochs_coarse=2)
    import c2frec.trainer as trainer_mod

    original = trainer_mod.bpr_loss

    def poisoned(*args, **kwargs):
        loss, g_pos, g_neg, g_reg = original(*args, **kwargs)
        return float("nan"), g_pos, g_neg, g_reg

    monkeypatch.setattr(trainer_mod, "bpr_loss", poisoned)
    with pytest.raises(NumericalError, match="diverged"):
        train_coarse(small_data, cfg, checkpoint_dir=tmp_path)
    assert (tmp_path / "coarse_abort.ckpt").exists()
    rescued = load_checkpoint(tmp_path / "coarse_abort.ckpt")
    assert rescued.stage == "coarse"
