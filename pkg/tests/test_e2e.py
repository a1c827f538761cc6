"""Autoencoder graph, reference receivers, and the evaluation harness."""

import numpy as np
import pytest

from dmlink import dsp
from dmlink import diffcore as dc
from dmlink.diffcore import DiffValue, ParamStore, gradient_check
from dmlink.e2e import (Autoencoder, FfeBaseline, Normalization,
                        SlicerBaseline, VnleModel, bounded, encode_frame,
                        evaluate_autoencoder, evaluate_link, hard_metrics,
                        matched_grid_swing, refit_vnle_kernel, run_frames,
                        symbol_windows, train_vnle)
from dmlink.e2e.baselines import BASELINE_BIAS, VNLE_DELAY, VNLE_MEMORY
from dmlink.laser import default_params
from dmlink.surrogate import CatConfig, build_cat, cat_forward

PARAMS = default_params()
LINK = dsp.LinkConfig(symbol_rate=25e9)
SMALL = dsp.LinkConfig(symbol_rate=25e9, frame_len=192)

TINY_CAT = CatConfig(power_ref=5e-3, d_model=8, n_heads=2, n_blocks=2,
                     kernel=3, ff_hidden=16, max_len=SMALL.frame_len)


def tiny_surrogate(seed=0):
    return build_cat(TINY_CAT, np.random.default_rng(seed))


class TestEncoder:
    def test_bounded_maps_to_interval(self):
        mid = bounded(DiffValue(0.0), 50e-3, 100e-3)
        assert mid.data == pytest.approx(75e-3, rel=1e-12)
        low = bounded(DiffValue(-40.0), 50e-3, 100e-3)
        high = bounded(DiffValue(40.0), 50e-3, 100e-3)
        assert low.data == pytest.approx(50e-3, abs=1e-9)
        assert high.data == pytest.approx(100e-3, abs=1e-9)

    def test_initial_state_is_reference_square_chain(self):
        ae = Autoencoder.fresh(PARAMS, LINK, power_ref=5e-3, seed=0)
        assert ae.learned_currents() == (pytest.approx(75e-3),
                                         pytest.approx(40e-3))
        rng = np.random.default_rng(0)
        symbols = rng.integers(0, 4, size=LINK.symbols_per_frame)
        out = encode_frame(ae.encoder, symbols, LINK).data
        ref = dsp.tx_command(symbols, (1.0, 1.0), LINK, i_pp=40e-3,
                             i_bias=75e-3)
        assert np.allclose(out, ref, atol=1e-12)

    def test_encoder_receives_gradient(self):
        ae = Autoencoder.fresh(PARAMS, SMALL, power_ref=5e-3, seed=0)
        symbols = np.random.default_rng(1).integers(
            0, 4, size=SMALL.symbols_per_frame)
        out = encode_frame(ae.encoder, symbols, SMALL)
        (out * out).sum().backward()
        for name in ("mapping", "raw_bias", "raw_swing"):
            grad = ae.encoder[name].grad
            assert grad is not None and np.any(grad != 0.0), name


class TestDecoder:
    def test_logit_shape(self):
        ae = Autoencoder.fresh(PARAMS, SMALL, power_ref=5e-3, seed=0)
        frame = 3e-3 + 1e-4 * np.random.default_rng(2).standard_normal(
            SMALL.frame_len)
        from dmlink.e2e import decode_frame
        logits = decode_frame(ae.decoder, frame, ae.norm,
                              SMALL.symbols_per_frame)
        assert logits.data.shape == (SMALL.symbols_per_frame, 4)

    def test_normalization_from_laser(self):
        norm = Normalization.from_laser(PARAMS, power_ref=7e-3)
        from dmlink.laser import photon_to_power, steady_state
        expect = photon_to_power(PARAMS, steady_state(PARAMS, 75e-3).s)
        assert norm.center == pytest.approx(expect, rel=1e-12)
        assert norm.scale == pytest.approx(2.1e-3, rel=1e-12)


class TestFullGraph:
    def test_autoencoder_gradients(self):
        """Finite differences across the complete transceiver graph."""
        surrogate = tiny_surrogate(seed=3)
        ae = Autoencoder.fresh(PARAMS, SMALL, power_ref=TINY_CAT.power_ref,
                               seed=4)
        # shrink the mapping so the transmit clip stays inactive and the
        # graph is smooth at the probe point
        ae.encoder["mapping"].data = 0.7 * ae.encoder["mapping"].data
        rng = np.random.default_rng(5)
        symbols = rng.integers(0, 4, size=SMALL.symbols_per_frame)
        noise = 1e-4 * rng.standard_normal(SMALL.frame_len)
        valid = SMALL.metric_slice("symbol")

        def channel(command):
            batched = dc.reshape(command, (1, SMALL.frame_len))
            power = cat_forward(surrogate, TINY_CAT, batched)
            return dc.reshape(power, (SMALL.frame_len,)) + noise

        def loss_fn():
            logits = ae.logits_through(channel, symbols)
            return dc.softmax_cross_entropy(logits[valid], symbols[valid])

        worst = gradient_check(loss_fn, ae.trainable(), n_coords=4)
        assert worst < 1e-5


def synthetic_frames(n_frames, cfg, rng, isi=None, square_law=0.0):
    """Noiseless 2 sps PAM frames with optional ISI and memoryless bend."""
    symbols = rng.integers(0, 4, size=(n_frames, cfg.symbols_per_frame))
    levels = dsp.map_pam(symbols)
    received = np.repeat(levels, cfg.sps, axis=-1).astype(float)
    if square_law:
        received = received + square_law * received ** 2
    if isi is not None:
        received = np.stack([dsp.fir_same(f, np.asarray(isi))
                             for f in received])
    return received, symbols


class TestBaselines:
    def test_symbol_windows_oracle(self):
        received = np.arange(SMALL.frame_len, dtype=float)
        windows, valid = symbol_windows(received, SMALL)
        assert windows.shape == (valid.stop - valid.start, 21)
        m = valid.start + 3
        assert np.array_equal(windows[3],
                              received[2 * m - 10:2 * m + 11])

    def test_slicer_and_ffe_on_clean_channel(self):
        rng = np.random.default_rng(6)
        pilot_rx, pilot_sym = synthetic_frames(4, SMALL, rng)
        eval_rx, eval_sym = synthetic_frames(4, SMALL, rng)
        slicer = SlicerBaseline().fit(pilot_rx, pilot_sym, SMALL)
        ffe = FfeBaseline().fit(pilot_rx, pilot_sym, SMALL)
        ser_s, _ = hard_metrics(slicer.decide(eval_rx, SMALL), eval_sym,
                                SMALL)
        ser_f, _ = hard_metrics(ffe.decide(eval_rx, SMALL), eval_sym, SMALL)
        assert ser_s == 0.0
        assert ser_f == 0.0

    def test_ffe_removes_linear_isi(self):
        rng = np.random.default_rng(7)
        isi = np.array([0.65, 1.0, 0.65]) / 2.3
        pilot_rx, pilot_sym = synthetic_frames(6, SMALL, rng, isi=isi)
        eval_rx, eval_sym = synthetic_frames(6, SMALL, rng, isi=isi)
        slicer = SlicerBaseline().fit(pilot_rx, pilot_sym, SMALL)
        ffe = FfeBaseline().fit(pilot_rx, pilot_sym, SMALL)
        ser_s, _ = hard_metrics(slicer.decide(eval_rx, SMALL), eval_sym,
                                SMALL)
        ser_f, _ = hard_metrics(ffe.decide(eval_rx, SMALL), eval_sym, SMALL)
        assert ser_s > 0.02
        assert ser_f < 0.25 * ser_s

    def test_vnle_command_is_shaped_pulse(self):
        kernel = dc.VolterraKernel(0.0, np.zeros(VNLE_MEMORY),
                                   np.zeros((VNLE_MEMORY, VNLE_MEMORY)))
        model = VnleModel(np.array([1.0, 0.3]), kernel,
                          Normalization(0.0, 1.0), i_pp=40e-3)
        symbols = np.random.default_rng(8).integers(
            0, 4, size=SMALL.symbols_per_frame)
        expect = dsp.tx_command(symbols, (1.0, 0.3), SMALL, i_pp=40e-3,
                                i_bias=BASELINE_BIAS)
        assert np.allclose(model.command(symbols, SMALL), expect,
                           atol=1e-15)

    def test_vnle_delay_convention(self):
        # a pure delay-tap kernel must pick out the symbol instants
        linear = np.zeros(VNLE_MEMORY)
        linear[VNLE_DELAY] = 1.0
        kernel = dc.VolterraKernel(0.0, linear,
                                   np.zeros((VNLE_MEMORY, VNLE_MEMORY)))
        model = VnleModel(np.array([1.0, 1.0]), kernel,
                          Normalization(0.0, 1.0), i_pp=40e-3)
        rng = np.random.default_rng(9)
        frame = rng.standard_normal(SMALL.frame_len)
        out = model.equalize(frame, SMALL)
        valid = SMALL.metric_slice("symbol")
        centers = 2 * np.arange(valid.start, valid.stop)
        assert np.allclose(out, frame[centers], atol=1e-12)

    def test_refit_learns_mild_nonlinearity(self):
        rng = np.random.default_rng(10)
        pilot_rx, pilot_sym = synthetic_frames(
            8, SMALL, rng, isi=[0.2, 1.0, 0.2], square_law=0.25)
        eval_rx, eval_sym = synthetic_frames(
            4, SMALL, rng, isi=[0.2, 1.0, 0.2], square_law=0.25)
        kernel = dc.VolterraKernel(0.0, np.zeros(VNLE_MEMORY),
                                   np.zeros((VNLE_MEMORY, VNLE_MEMORY)))
        model = VnleModel(np.array([1.0, 1.0]), kernel,
                          Normalization(0.0, 1.0), i_pp=40e-3)
        refit_vnle_kernel(model, pilot_rx, pilot_sym, SMALL)
        model.fit_centroids(pilot_rx, pilot_sym, SMALL)
        ser, _ = hard_metrics(model.decide(eval_rx, SMALL), eval_sym, SMALL)
        assert ser == 0.0

    def test_train_vnle_runs_and_symmetrizes(self):
        surrogate = tiny_surrogate(seed=11)
        norm = Normalization(0.0, TINY_CAT.power_ref)
        model, report = train_vnle(surrogate, TINY_CAT, SMALL, i_pp=40e-3,
                                   sigma=1e-4, norm=norm, steps=3, seed=0)
        assert len(report.loss_curve) == 3
        assert np.all(np.isfinite(report.loss_curve))
        assert np.isfinite(report.ls_condition)
        assert model.pulse.shape == (2,)
        assert np.allclose(model.kernel.quad, model.kernel.quad.T)


class TestEvaluation:
    def test_run_frames_common_randomness(self):
        def build_a(symbols):
            return dsp.tx_command(symbols, (1.0, 1.0), SMALL, i_pp=30e-3,
                                  i_bias=70e-3)

        def build_b(symbols):
            return dsp.tx_command(symbols, (1.0, 0.5), SMALL, i_pp=60e-3,
                                  i_bias=70e-3)

        rx_a, sym_a = run_frames(PARAMS, SMALL, build_a, 70e-3, 1e-4, 21,
                                 0, 2)
        rx_b, sym_b = run_frames(PARAMS, SMALL, build_b, 70e-3, 1e-4, 21,
                                 0, 2)
        assert np.array_equal(sym_a, sym_b)
        clean_a = dsp.simulate_received(
            PARAMS, SMALL, np.stack([build_a(s) for s in sym_a]),
            i_bias=70e-3)
        clean_b = dsp.simulate_received(
            PARAMS, SMALL, np.stack([build_b(s) for s in sym_b]),
            i_bias=70e-3)
        assert np.allclose(rx_a - clean_a, rx_b - clean_b, atol=1e-12)
        assert not np.allclose(rx_a, rx_b, atol=1e-6)

    def test_run_frames_index_offset(self):
        def build(symbols):
            return dsp.tx_command(symbols, (1.0, 1.0), SMALL, i_pp=30e-3,
                                  i_bias=70e-3)

        _, sym = run_frames(PARAMS, SMALL, build, 70e-3, 0.0, 33, 5, 2)
        for j, k in enumerate((5, 6)):
            rng = dsp.frame_rng(33, k)
            expect = rng.integers(0, 4, size=SMALL.symbols_per_frame)
            assert np.array_equal(sym[j], expect)

    def test_matched_grid_swing_hits_exact_point(self):
        grid = (10e-3, 30e-3, 50e-3, 70e-3)
        target = dsp.received_power_metric(PARAMS, BASELINE_BIAS, 50e-3)
        assert matched_grid_swing(PARAMS, target, grid) == 50e-3

    def test_hard_metrics_perfect_decisions(self):
        rng = np.random.default_rng(12)
        symbols = rng.integers(0, 4, size=(2, SMALL.symbols_per_frame))
        valid = SMALL.metric_slice("symbol")
        ser, mi = hard_metrics(symbols[:, valid], symbols, SMALL)
        assert ser == 0.0
        assert mi == pytest.approx(2.0)

    def test_evaluate_autoencoder_row(self):
        ae = Autoencoder.fresh(PARAMS, SMALL, power_ref=5e-3, seed=13)
        row = evaluate_autoencoder(PARAMS, SMALL, ae, sigma=2e-5, seed=3,
                                   n_eval=2)
        assert row.approach == "ae"
        assert 0.0 <= row.ser <= 1.0
        assert row.mi_bits <= 2.0 + 1e-9
        assert row.ibias_ma == pytest.approx(75.0)
        assert row.ipp_ma == pytest.approx(40.0)
        assert np.isfinite(row.prec_dbm)
        assert row.seed == 3

    def test_evaluate_link_report(self):
        surrogate = tiny_surrogate(seed=14)
        ae = Autoencoder.fresh(PARAMS, SMALL, power_ref=TINY_CAT.power_ref,
                               seed=15)
        report = evaluate_link(PARAMS, SMALL, ae, surrogate, TINY_CAT,
                               sigma=2e-5, seed=4, n_pilot=2, n_eval=2,
                               vnle_steps=2)
        assert [m.approach for m in report.rows] == ["ae", "bl", "ffe",
                                                     "vnle"]
        assert report.by_approach("ffe").ipp_ma == pytest.approx(
            report.matched_swing * 1e3)
        assert report.by_approach("bl").ipp_ma == pytest.approx(
            report.matched_swing * 1e3)
        assert np.isfinite(report.ae_bias) and np.isfinite(report.ae_swing)
        with pytest.raises(KeyError):
            report.by_approach("nope")