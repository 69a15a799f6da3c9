import numpy as np
import pytest

from rffi.channel import (
    NOISELESS,
    ChannelSpec,
    add_awgn,
    add_awgn_batch,
    apply_channel,
    apply_multipath,
    noise_rms_for,
    realized_snr_db,
    rms,
)
from rffi.waveform import ComplexSignal, LoRaConfig, synth_preamble


def sig(x):
    return ComplexSignal(np.asarray(x, dtype=complex), 1.0)


def test_multipath_examples():
    x = sig(np.arange(1, 6))
    np.testing.assert_array_equal(apply_multipath(x, [1]).samples, x.samples)
    np.testing.assert_allclose(apply_multipath(x, [0.5]).samples, 0.5 * x.samples)
    imp = apply_multipath(sig([1, 0, 0, 0]), [1, 0.3j]).samples
    np.testing.assert_allclose(imp, [1, 0.3j, 0, 0])


def test_multipath_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    h = [1.0, 0.4 - 0.2j, 0.1j]
    y = apply_multipath(sig(x), h).samples
    # oracle: the convolution sum written out
    ref = np.array([sum(h[k] * x[n - k] for k in range(len(h)) if n - k >= 0) for n in range(50)])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_noise_rms_targets():
    assert noise_rms_for(1.0, 0.0) == pytest.approx(1.0)
    assert noise_rms_for(3.0, 20.0) == pytest.approx(0.3)


def test_realized_snr_calibration():
    x = synth_preamble(LoRaConfig(9))
    rng = np.random.default_rng(42)
    snrs = [realized_snr_db(x.samples, add_awgn(x, 10.0, rng).samples) for _ in range(100)]
    assert abs(np.mean(snrs) - 10.0) < 0.2


def test_branch_variances():
    x = sig(np.ones(200_000))
    y = add_awgn(x, 3.0, np.random.default_rng(9)).samples - x.samples
    sigma2 = noise_rms_for(1.0, 3.0) ** 2
    assert np.var(y.real) == pytest.approx(sigma2 / 2, rel=0.05)
    assert np.var(y.imag) == pytest.approx(sigma2 / 2, rel=0.05)


def test_independent_streams():
    x = sig(np.ones(100_000))
    a = add_awgn(x, 0.0, np.random.default_rng(1)).samples - 1
    b = add_awgn(x, 0.0, np.random.default_rng(2)).samples - 1
    rho = np.abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert rho < 0.01


def test_zero_power_rejected():
    with pytest.raises(ValueError):
        add_awgn(sig(np.zeros(4)), 10.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        add_awgn_batch(np.zeros((2, 4), complex), 10.0, np.random.default_rng(0))


def test_batch_per_row_snr():
    x = np.ones((2, 100_000), complex)
    y = add_awgn_batch(x, np.array([0.0, 20.0]), np.random.default_rng(0))
    np.testing.assert_allclose(rms(y - x, axis=1), [1.0, 0.1], rtol=0.02)


def test_apply_channel_compositions():
    x = synth_preamble(LoRaConfig(7))
    np.testing.assert_array_equal(apply_channel(x, ChannelSpec()).samples, x.samples)
    two = ChannelSpec(taps=(1.0, 0.4j))
    np.testing.assert_array_equal(apply_channel(x, two).samples, apply_multipath(x, two.taps).samples)
    y = apply_channel(x, ChannelSpec(snr_db=40.0), np.random.default_rng(0))
    assert rms(y.samples - x.samples) / rms(x.samples) == pytest.approx(0.01, rel=0.05)
    with pytest.raises(ValueError):
        apply_channel(x, ChannelSpec(snr_db=10.0))


def test_snr_measured_after_multipath():
    x = synth_preamble(LoRaConfig(9))
    spec = ChannelSpec(taps=(0.5, 0.25), snr_db=10.0)
    y = apply_channel(x, spec, np.random.default_rng(3))
    clean = apply_multipath(x, spec.taps).samples
    assert realized_snr_db(clean, y.samples) == pytest.approx(10.0, abs=0.3)


def test_channel_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        ChannelSpec(taps=())
    with pytest.raises(ValueError):
        ChannelSpec(taps=(0, 1))
    with pytest.raises(ValueError):
        ChannelSpec(snr_db=float("inf"))
    spec = ChannelSpec(taps=(1, 0.2 - 0.1j), snr_db=5.0)
    assert ChannelSpec.from_dict(spec.to_dict()) == spec
    assert ChannelSpec.from_dict(ChannelSpec().to_dict()).snr_db == NOISELESS
