"""Dataset generation, the convolutional-attention model, and training."""

import numpy as np
import pytest

from dmlink import dsp
from dmlink.diffcore import DiffValue, gradient_check
from dmlink.laser import default_params, photon_to_power, steady_state
from dmlink.surrogate import (CatConfig, FrameDataset, batch_nrmse,
                              build_cat, cat_forward, default_cat_config,
                              evaluate_surrogate, generate_dataset,
                              nrmse_loss, per_frame_nrmse, train_surrogate)

PARAMS = default_params()
LINK = dsp.LinkConfig(symbol_rate=25e9)

TINY = CatConfig(power_ref=1.0, d_model=8, n_heads=2, n_blocks=2,
                 kernel=3, ff_hidden=16, max_len=64)


def tiny_store(seed=0):
    return build_cat(TINY, np.random.default_rng(seed))


class TestDataset:
    def test_shapes_and_ranges(self):
        data = generate_dataset(PARAMS, LINK, 4, seed=3)
        assert data.commands.shape == (4, LINK.frame_len)
        assert data.received.shape == (4, LINK.frame_len)
        assert np.all(data.received > 0)
        assert np.all((data.bias >= 50e-3) & (data.bias <= 100e-3))
        assert np.all((data.swing >= 0) & (data.swing <= 80e-3))
        assert data.square.tolist() == [True, False, True, False]
        assert data.symbol_rate == LINK.symbol_rate

    def test_deterministic(self):
        a = generate_dataset(PARAMS, LINK, 3, seed=11)
        b = generate_dataset(PARAMS, LINK, 3, seed=11)
        assert np.array_equal(a.commands, b.commands)
        assert np.array_equal(a.received, b.received)

    def test_frames_reproducible_in_isolation(self):
        # frame k depends only on (seed, k), not on how many frames exist
        a = generate_dataset(PARAMS, LINK, 4, seed=5)
        b = generate_dataset(PARAMS, LINK, 2, seed=5)
        assert np.array_equal(a.commands[:2], b.commands)

    def test_split(self):
        data = generate_dataset(PARAMS, LINK, 5, seed=0)
        train, test = data.split(0.8)
        assert len(train) == 4 and len(test) == 1
        assert np.array_equal(test.commands[0], data.commands[4])
        assert train.seed == data.seed
        with pytest.raises(ValueError):
            data.split(1.0)

    def test_mismatched_arrays_rejected(self):
        with pytest.raises(ValueError, match="frame count"):
            FrameDataset(25e9, np.zeros((3, 8)), np.zeros((2, 8)),
                         np.zeros(3), np.zeros(3),
                         np.zeros(3, dtype=bool), 0)

    def test_diverged_frame_is_redrawn(self, monkeypatch):
        from dmlink.laser import DivergenceError
        from dmlink.surrogate import data as data_mod

        clean = generate_dataset(PARAMS, LINK, 3, seed=21)
        poisoned = clean.commands[1].copy()
        real = dsp.simulate_received

        def failing(p, cfg, commands, i_bias):
            block = np.atleast_2d(np.asarray(commands))
            if any(np.array_equal(row, poisoned) for row in block):
                raise DivergenceError("forced for the test")
            return real(p, cfg, commands, i_bias=i_bias)

        monkeypatch.setattr(data_mod.dsp, "simulate_received", failing)
        lines = []
        redone = generate_dataset(PARAMS, LINK, 3, seed=21,
                                  log=lines.append)
        assert redone.regenerated == 1
        assert not np.array_equal(redone.commands[1], poisoned)
        assert np.array_equal(redone.commands[0], clean.commands[0])
        assert np.array_equal(redone.commands[2], clean.commands[2])
        assert np.all(redone.received > 0)
        assert any("redrawing" in line for line in lines)


class TestCatModel:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            CatConfig(power_ref=1.0, d_model=10, n_heads=4)
        with pytest.raises(ValueError):
            CatConfig(power_ref=1.0, kernel=4)
        with pytest.raises(ValueError):
            CatConfig(power_ref=-1.0)
        assert TINY.head_dim == 4

    def test_default_config_matches_laser(self):
        cat_cfg = default_cat_config(PARAMS, LINK)
        ref = photon_to_power(PARAMS, steady_state(PARAMS, 95e-3).s)
        assert cat_cfg.power_ref == pytest.approx(ref, rel=1e-12)
        assert cat_cfg.max_len == LINK.frame_len

    def test_forward_shape_and_determinism(self):
        store = tiny_store()
        x = 75e-3 + 5e-3 * np.random.default_rng(1).standard_normal((3, 24))
        out1 = cat_forward(store, TINY, x)
        out2 = cat_forward(store, TINY, x)
        assert out1.data.shape == (3, 24)
        assert np.array_equal(out1.data, out2.data)

    def test_batch_independence(self):
        # attention must stay within a frame: batching cannot mix frames
        store = tiny_store()
        x = 75e-3 + 8e-3 * np.random.default_rng(2).standard_normal((3, 20))
        batched = cat_forward(store, TINY, x).data
        for k in range(3):
            single = cat_forward(store, TINY, x[k:k + 1]).data
            assert np.allclose(batched[k], single[0], atol=1e-12)

    def test_position_dependence(self):
        # learned positional state: a constant input maps to a
        # non-constant output
        store = tiny_store()
        x = np.full((1, 24), 80e-3)
        out = cat_forward(store, TINY, x).data
        assert np.ptp(out) > 0

    def test_output_scales_with_power_ref(self):
        store = tiny_store()
        doubled = CatConfig(power_ref=2.0, d_model=8, n_heads=2, n_blocks=2,
                            kernel=3, ff_hidden=16, max_len=64)
        x = 75e-3 + 5e-3 * np.random.default_rng(3).standard_normal((2, 16))
        a = cat_forward(store, TINY, x).data
        b = cat_forward(store, doubled, x).data
        assert np.allclose(b, 2.0 * a, rtol=1e-12)


class TestLossAndTraining:
    def test_nrmse_loss_matches_reference(self):
        rng = np.random.default_rng(4)
        pred = rng.standard_normal((3, 32))
        target = rng.standard_normal((3, 32))
        loss = nrmse_loss(DiffValue(pred), target)
        assert loss.item() == pytest.approx(dsp.nrmse(pred, target),
                                            rel=1e-13)

    def test_nrmse_loss_rejects_flat_target(self):
        with pytest.raises(ValueError, match="span"):
            nrmse_loss(DiffValue(np.zeros((1, 8))), np.ones((1, 8)))

    def test_gradients_through_model(self):
        store = tiny_store(seed=5)
        rng = np.random.default_rng(6)
        x = 75e-3 + 10e-3 * rng.standard_normal((2, 24))
        target = 1.0 + 0.2 * rng.standard_normal((2, 24))

        def loss_fn():
            return nrmse_loss(cat_forward(store, TINY, x), target)

        worst = gradient_check(loss_fn, store.values(), n_coords=6)
        assert worst < 1e-5

    def test_batch_nrmse_matches_per_frame_mean(self):
        store = tiny_store(seed=7)
        rng = np.random.default_rng(8)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((5, 24))
        rec = 1.0 + 0.3 * rng.standard_normal((5, 24))
        total = batch_nrmse(store, TINY, cmds, rec, batch=2)
        per = [dsp.nrmse(cat_forward(store, TINY, cmds[k:k + 1]).data,
                         rec[k:k + 1]) for k in range(5)]
        assert total == pytest.approx(np.mean(per), rel=1e-12)

    def test_training_reduces_loss(self):
        rng = np.random.default_rng(9)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((8, 32))
        taps = np.array([0.25, 0.5, 0.25])
        rec = np.stack([dsp.fir_same(20.0 * c, taps) for c in cmds])
        data = FrameDataset(25e9, cmds, rec, np.full(8, 75e-3),
                            np.full(8, 40e-3), np.zeros(8, dtype=bool), 0)
        store, report = train_surrogate(data, TINY, epochs=15, batch=4,
                                        lr=3e-3, seed=0)
        assert report.train_curve[-1] < 0.5 * report.train_curve[0]
        assert report.best_test == pytest.approx(min(report.test_curve))
        assert report.best_epoch >= 0
        assert report.test_nrmse == pytest.approx(report.best_test)
        assert np.isfinite(report.train_nrmse)

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(10)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((4, 24))
        rec = 1.0 + 0.1 * rng.standard_normal((4, 24))
        data = FrameDataset(25e9, cmds, rec, np.full(4, 75e-3),
                            np.full(4, 40e-3), np.zeros(4, dtype=bool), 0)
        store_a, rep_a = train_surrogate(data, TINY, epochs=3, batch=2,
                                         lr=3e-2, seed=1)
        store_b, rep_b = train_surrogate(data, TINY, epochs=3, batch=2,
                                         lr=3e-2, seed=1)
        assert rep_a.train_curve == rep_b.train_curve
        assert rep_a.test_curve == rep_b.test_curve
        a, b = store_a.state_arrays(), store_b.state_arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_stalled_training_aborts(self):
        # zero learning rate never improves past the first epoch
        rng = np.random.default_rng(11)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((4, 24))
        rec = 1.0 + 0.1 * rng.standard_normal((4, 24))
        data = FrameDataset(25e9, cmds, rec, np.full(4, 75e-3),
                            np.full(4, 40e-3), np.zeros(4, dtype=bool), 0)
        with pytest.raises(RuntimeError, match="not improved for 3 epochs"):
            train_surrogate(data, TINY, epochs=20, batch=2, lr=0.0,
                            seed=1, patience=3)

    def test_per_frame_nrmse_matches_single_frames(self):
        store = tiny_store(seed=12)
        rng = np.random.default_rng(13)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((5, 24))
        rec = 1.0 + 0.3 * rng.standard_normal((5, 24))
        per = per_frame_nrmse(store, TINY, cmds, rec, batch=2)
        for k in range(5):
            single = dsp.nrmse(cat_forward(store, TINY,
                                           cmds[k:k + 1]).data, rec[k:k + 1])
            assert per[k] == pytest.approx(single, rel=1e-12)

    def test_nan_weights_abort_with_block_index(self):
        store = tiny_store(seed=14)
        store["block1_ff_w2"].data[0, 0] = np.nan
        x = np.full((1, 16), 75e-3)
        with pytest.raises(FloatingPointError, match="block 1"):
            cat_forward(store, TINY, x)

    def test_position_rows_matter_after_training(self):
        rng = np.random.default_rng(15)
        cmds = 75e-3 + 10e-3 * rng.standard_normal((4, 24))
        taps = np.array([0.3, 0.4, 0.3])
        rec = np.stack([dsp.fir_same(20.0 * c, taps) for c in cmds])
        data = FrameDataset(25e9, cmds, rec, np.full(4, 75e-3),
                            np.full(4, 40e-3), np.zeros(4, dtype=bool), 0)
        store, _ = train_surrogate(data, TINY, epochs=2, batch=2, lr=3e-3,
                                   seed=2)
        base = cat_forward(store, TINY, cmds[:1]).data.copy()
        pos = store["pos"].data
        pos[[0, 5]] = pos[[5, 0]]
        swapped = cat_forward(store, TINY, cmds[:1]).data
        assert not np.allclose(base, swapped)

    def test_fresh_model_is_finite_on_random_frames(self):
        store = tiny_store(seed=16)
        rng = np.random.default_rng(17)
        bias = rng.uniform(50e-3, 100e-3, size=(100, 1))
        swing = rng.uniform(0.0, 80e-3, size=(100, 1))
        cmds = bias + swing * (rng.random((100, 32)) - 0.5)
        out = cat_forward(store, TINY, cmds).data
        assert np.all(np.isfinite(out))


class TestGridEvaluation:
    def test_small_grid(self):
        cat_cfg = default_cat_config(PARAMS, LINK)
        store = build_cat(cat_cfg, np.random.default_rng(0))
        grid = evaluate_surrogate(store, cat_cfg, PARAMS, LINK, n_cells=2)
        assert grid.nrmse_grid.shape == (2, 2)
        assert np.all(np.isfinite(grid.nrmse_grid))
        assert np.all(grid.nrmse_grid > 0)
        assert grid.worst >= grid.mean
        assert grid.bias_edges[0] == pytest.approx(50e-3)
        assert grid.swing_edges[-1] == pytest.approx(80e-3)
