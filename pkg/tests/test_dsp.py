"""DSP primitives, noise calibration and metric tests."""

import math

import numpy as np
import pytest

from dmlink import dsp
from dmlink.dsp import (
    PAM4_LEVELS,
    LinkConfig,
    add_awgn,
    apply_drive_scaling,
    calibrate_noise,
    compute_ser,
    design_lowpass,
    estimate_centroids,
    eye_histogram,
    fir_same,
    frame_rng,
    hard_decision_ce_bits,
    interp_to_solver_rate,
    decimate_from_solver_rate,
    map_pam,
    mld_decide,
    mutual_information_from_ce,
    nrmse,
    random_pulse_taps,
    received_power_metric,
    shape_pulses,
    simulate_received,
    softmax_ce_bits,
    tx_command,
)
from dmlink.laser import default_params, photon_to_power, steady_state

P = default_params()
CFG = LinkConfig(symbol_rate=25e9)


def test_link_config_validation():
    with pytest.raises(ValueError):
        LinkConfig(symbol_rate=25e9, i_bias=40e-3)
    with pytest.raises(ValueError):
        LinkConfig(symbol_rate=25e9, i_pp=90e-3)
    with pytest.raises(ValueError):
        LinkConfig(symbol_rate=25e9, oversample=33)
    with pytest.raises(ValueError):
        LinkConfig(symbol_rate=25e9, warmup=1024)
    with pytest.raises(ValueError):
        LinkConfig(symbol_rate=25e9, warmup=512, tail_guard=512)
    with pytest.warns(UserWarning, match="nominal"):
        LinkConfig(symbol_rate=10e9)


def test_metric_slice():
    sym = CFG.metric_slice("symbol")
    assert sym == slice(32, 496)
    samp = CFG.metric_slice()
    assert samp == slice(64, 992)
    with pytest.raises(ValueError):
        CFG.metric_slice("frame")


def test_pam_mapping():
    np.testing.assert_allclose(map_pam(np.array([0, 1, 2, 3])), PAM4_LEVELS)
    assert np.all(np.diff(PAM4_LEVELS) > 0)
    np.testing.assert_allclose(np.diff(PAM4_LEVELS), 1.0 / 3.0)
    with pytest.raises(ValueError):
        map_pam(np.array([0, 4]))


def test_shape_pulses_square_and_custom():
    amps = np.array([0.5, -1.0 / 6.0])
    square = shape_pulses(amps, (1.0, 1.0))
    np.testing.assert_allclose(square, [0.5, 0.5, -1 / 6, -1 / 6])
    shaped = shape_pulses(amps, (0.5, -1.0))
    np.testing.assert_allclose(shaped, [0.25, -0.5, -1 / 12, 1 / 6])
    with pytest.raises(ValueError):
        shape_pulses(amps, (1.0, 1.0, 1.0))


def test_random_pulse_taps_normalization():
    rng = np.random.default_rng(3)
    for _ in range(50):
        taps = random_pulse_taps(rng)
        assert np.abs(taps).max() == pytest.approx(1.0)
        assert taps.shape == (2,)


def test_lowpass_design_properties():
    taps = design_lowpass(0.1, 1.0)
    assert taps.sum() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(taps, taps[::-1])  # linear phase
    # tone in the stopband (1.5x cutoff) attenuated by at least 20 dB
    n = 4096
    t = np.arange(n)
    tone = np.sin(2 * math.pi * 0.15 * t)
    out = fir_same(tone, taps)[200:-200]
    gain = np.sqrt(np.mean(out ** 2) / 0.5)
    assert 20 * math.log10(gain) < -20.0
    # passband tone survives
    tone = np.sin(2 * math.pi * 0.05 * t)
    out = fir_same(tone, taps)[200:-200]
    gain = np.sqrt(np.mean(out ** 2) / 0.5)
    assert abs(20 * math.log10(gain)) < 0.5
    with pytest.raises(ValueError):
        design_lowpass(0.6, 1.0)
    with pytest.raises(ValueError):
        design_lowpass(0.1, 1.0, n_taps=64)


def test_fir_same_is_centered():
    taps = design_lowpass(0.2, 1.0, n_taps=9)
    x = np.zeros(33)
    x[16] = 1.0
    y = fir_same(x, taps)
    assert np.argmax(y) == 16
    # batch axis handling
    xb = np.stack([x, np.roll(x, 3)])
    yb = fir_same(xb, taps)
    np.testing.assert_allclose(yb[0], y, atol=1e-15)


def test_rate_change_round_trip():
    cfg = CFG
    t = np.arange(1024)
    tone = 0.3 * np.sin(2 * math.pi * 0.15 * t)  # 0.3 R_s at 2 sps
    up = interp_to_solver_rate(tone, cfg)
    assert up.shape == (1024 * 16,)
    back = decimate_from_solver_rate(up, cfg)
    mid = slice(200, -200)
    assert np.sqrt(np.mean((back[mid] - tone[mid]) ** 2)) < 0.01 * 0.3


def test_drive_scaling_clips_then_scales():
    x = np.array([-0.7, -0.25, 0.0, 0.25, 0.7])
    out = apply_drive_scaling(x, 80e-3, 75e-3)
    np.testing.assert_allclose(
        out, [35e-3, 55e-3, 75e-3, 95e-3, 115e-3], atol=1e-12)


def test_tx_command_envelope_and_mean():
    rng = frame_rng(11, 0)
    symbols = rng.integers(0, 4, size=512)
    cmd = tx_command(symbols, (1.0, 1.0), CFG)
    assert cmd.shape == (1024,)
    assert cmd.min() >= CFG.i_bias - CFG.i_pp / 2 - 1e-12
    assert cmd.max() <= CFG.i_bias + CFG.i_pp / 2 + 1e-12
    assert cmd.mean() == pytest.approx(CFG.i_bias, abs=2e-3)


def test_simulate_received_constant_frame():
    # a frame of identical symbols settles to the matching static power
    symbols = np.full(512, 3)
    cmd = tx_command(symbols, (1.0, 1.0), CFG, i_pp=40e-3, i_bias=75e-3)
    received = simulate_received(P, CFG, cmd, i_bias=75e-3)
    level_current = 75e-3 + 40e-3 * 0.5
    expected = photon_to_power(P, steady_state(P, level_current).s)
    settled = received[CFG.metric_slice()]
    assert np.allclose(settled, expected, rtol=5e-3)


def test_simulate_received_batch_matches_single():
    rng = frame_rng(5, 1)
    symbols = rng.integers(0, 4, size=(3, 512))
    cmd = tx_command(symbols, (1.0, 1.0), CFG)
    batch = simulate_received(P, CFG, cmd, i_bias=CFG.i_bias)
    one = simulate_received(P, CFG, cmd[1], i_bias=CFG.i_bias)
    np.testing.assert_allclose(batch[1], one, rtol=1e-12)


def test_noise_calibration_hits_target_snr():
    sigma = calibrate_noise(P, CFG, n_frames=32, seed=1)
    assert sigma > 0.0
    # measured SNR on an independently seeded reference equals 22 +- 0.1 dB
    ref = CFG.with_currents(75e-3, 80e-3)
    rng = frame_rng(99, 0)
    symbols = rng.integers(0, 4, size=(32, ref.symbols_per_frame))
    received = simulate_received(
        P, ref, tx_command(symbols, (1.0, 1.0), ref), i_bias=ref.i_bias)
    var = received[:, ref.metric_slice()].var()
    snr = 10 * math.log10(var / sigma ** 2)
    assert snr == pytest.approx(22.0, abs=0.1)


def test_noise_scales_with_swing():
    # halving I_pp drops the measured SNR by about 6 dB
    sigma = calibrate_noise(P, CFG, n_frames=32, seed=1)
    half = CFG.with_currents(75e-3, 40e-3)
    rng = frame_rng(7, 0)
    symbols = rng.integers(0, 4, size=(32, half.symbols_per_frame))
    received = simulate_received(
        P, half, tx_command(symbols, (1.0, 1.0), half), i_bias=half.i_bias)
    var = received[:, half.metric_slice()].var()
    snr = 10 * math.log10(var / sigma ** 2)
    assert snr == pytest.approx(16.0, abs=1.0)


def test_awgn_and_streams():
    rng = frame_rng(1, 2)
    x = np.zeros(4096)
    y = add_awgn(x, 0.0, rng)
    np.testing.assert_array_equal(y, x)
    rng = frame_rng(1, 2)
    z = add_awgn(x, 2.0, rng)
    assert z.std() == pytest.approx(2.0, rel=0.05)
    with pytest.raises(ValueError):
        add_awgn(x, -1.0, rng)
    a = frame_rng(10, 4).standard_normal(8)
    b = frame_rng(10, 4).standard_normal(8)
    c = frame_rng(10, 5).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_centroids_and_mld():
    rng = np.random.default_rng(0)
    symbols = rng.integers(0, 4, size=4000)
    values = PAM4_LEVELS[symbols] + 0.01 * rng.standard_normal(4000)
    cent = estimate_centroids(values, symbols)
    np.testing.assert_allclose(cent, PAM4_LEVELS, atol=2e-3)
    decided = mld_decide(values, cent)
    assert compute_ser(symbols, decided) == 0.0
    with pytest.raises(ValueError):
        estimate_centroids(values[:10], np.zeros(10, dtype=int))


def test_ser_oracle():
    tx = np.array([0, 1, 2, 3, 0, 1])
    rx = np.array([0, 1, 2, 3, 1, 1])
    assert compute_ser(tx, rx) == pytest.approx(1.0 / 6.0)
    with pytest.raises(ValueError):
        compute_ser(tx, rx[:-1])
    with pytest.raises(ValueError):
        compute_ser(np.array([]), np.array([]))


def test_hard_decision_information():
    tx = np.array([0, 1, 2, 3] * 100)
    assert hard_decision_ce_bits(tx, tx) == pytest.approx(0.0, abs=1e-12)
    assert mutual_information_from_ce(
        hard_decision_ce_bits(tx, tx)) == pytest.approx(2.0)
    # known confusion: symbol 0 flips to 1 half the time
    tx = np.array([0, 0, 1, 1])
    rx = np.array([0, 1, 1, 1])
    # H(X | X^) = 0.75 * h(1/3 vs 2/3) by hand
    expected = 0.75 * (-(1 / 3) * math.log2(1 / 3) - (2 / 3) * math.log2(2 / 3))
    assert hard_decision_ce_bits(tx, rx, n_levels=2) == pytest.approx(expected)


def test_soft_ce_and_mi_bounds():
    probs = np.full((8, 4), 0.25)
    tx = np.arange(8) % 4
    assert softmax_ce_bits(probs, tx) == pytest.approx(2.0)
    assert mutual_information_from_ce(2.0) == 0.0
    assert mutual_information_from_ce(2.5) == 0.0
    assert mutual_information_from_ce(0.5) == pytest.approx(1.5)


def test_nrmse_oracles():
    rng = np.random.default_rng(2)
    target = rng.uniform(-0.5, 0.5, size=(4, 256))
    span = np.ptp(target, axis=-1)
    shifted = target + 0.05
    assert nrmse(shifted, target) == pytest.approx(np.mean(0.05 / span))
    zero_mean = target - target.mean(axis=-1, keepdims=True)
    scaled = 1.01 * zero_mean
    expected = np.mean(0.01 * np.sqrt(np.mean(zero_mean ** 2, axis=-1))
                       / np.ptp(zero_mean, axis=-1))
    assert nrmse(scaled, zero_mean) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ValueError):
        nrmse(np.zeros((2, 4)), np.zeros((2, 4)))


def test_eye_histogram_counts():
    rng = np.random.default_rng(4)
    wave = rng.standard_normal(4096)
    eye = eye_histogram(wave, sps=2, bins=32)
    assert eye.counts.shape == (4, 32)
    assert eye.counts.sum() == 4096
    assert eye.counts.dtype == np.int64


def test_identity_channel_matches_closed_form_ser():
    # 4PAM + AWGN with known centroids: SER = (3/2) Q(delta / sigma)
    from scipy.special import erfc

    n = 200_000
    rng = frame_rng(42, 0)
    symbols = rng.integers(0, 4, size=n)
    delta = 1.0 / 6.0
    sigma = delta / 2.0
    noisy = add_awgn(PAM4_LEVELS[symbols], sigma, rng)
    ser = compute_ser(symbols, mld_decide(noisy, PAM4_LEVELS))
    expected = 1.5 * 0.5 * erfc(delta / sigma / math.sqrt(2.0))
    spread = 3.0 * math.sqrt(expected * (1.0 - expected) / n)
    assert abs(ser - expected) < spread


def test_received_power_metric():
    assert received_power_metric(P, 75e-3, 0.0) == -math.inf
    base = received_power_metric(P, 75e-3, 40e-3)
    double = received_power_metric(P, 75e-3, 80e-3)
    assert double - base == pytest.approx(3.01, abs=0.1)
    # flat in bias across the allowed range at fixed swing
    values = [received_power_metric(P, b, 80e-3)
              for b in (50e-3, 62.5e-3, 75e-3, 87.5e-3, 100e-3)]
    assert max(values) - min(values) < 0.2
    with pytest.raises(ValueError):
        received_power_metric(P, 75e-3, -1e-3)
