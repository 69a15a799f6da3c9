import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rffi import dsp
from rffi.channel import add_awgn, apply_multipath, awgn
from rffi.impairment import cfo_rotation
from rffi.waveform import ComplexSignal, LoRaConfig, samples_per_preamble, synth_preamble

FS = 250_000.0


def preamble(sf=7):
    return synth_preamble(LoRaConfig(sf))


def dft_oracle(frame):
    n = len(frame)
    k = np.arange(n)
    return np.array([np.sum(frame * np.exp(-2j * np.pi * kk * k / n)) for kk in k])


# --- STFT and spectrograms -----------------------------------------------


def test_stft_of_ones():
    out = dsp.stft(ComplexSignal(np.ones(8), 1.0), dsp.StftConfig(4, 2))
    assert out.shape == (4, 3)
    for col in out.T:
        np.testing.assert_allclose(col, [0, 0, 4, 0], atol=1e-12)


def test_stft_matches_dft_oracle_with_centred_rows():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    cfg = dsp.StftConfig(16, 8)
    out = dsp.stft(ComplexSignal(x, 1.0), cfg)
    m = (200 - 16) // 8 + 1
    assert out.shape == (16, m)
    for j in (0, 5, m - 1):
        ref = dft_oracle(x[j * 8 : j * 8 + 16])
        # bin 0 lives at row N/2
        np.testing.assert_allclose(out[8, j], ref[0], atol=1e-9)
        np.testing.assert_allclose(np.roll(out[:, j], -8), ref, atol=1e-9)


def test_stft_column_count():
    assert dsp.stft(preamble(7)).shape == (64, 63)


def test_stft_tone_concentrates():
    n = np.arange(640)
    k = 5
    x = np.exp(2j * np.pi * k * n / 64)
    out = np.abs(dsp.stft(ComplexSignal(x, 1.0)))
    assert np.all(out.argmax(axis=0) == 32 + k)


def test_stft_config_validation():
    for args in ((48, 16), (64, 0), (64, 65)):
        with pytest.raises(ValueError):
            dsp.StftConfig(*args)
    with pytest.raises(ValueError):
        dsp.stft(ComplexSignal(np.ones(10), 1.0))


@pytest.mark.parametrize("sf,width", [(7, 62), (8, 126), (9, 254)])
def test_width_law(sf, width):
    cfg = LoRaConfig(sf)
    assert dsp.spectrogram_width(cfg) == width == (samples_per_preamble(cfg) - 64) // 32
    spec = dsp.channel_independent_spectrogram(preamble(sf))
    assert spec.shape == (64, width)
    assert np.all(np.isfinite(spec.values))


def test_width_rejects_non_integer():
    with pytest.raises(ValueError):
        dsp.spectrogram_width(LoRaConfig(7), dsp.StftConfig(64, 48))


def test_spectrogram_formula_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    s = dsp.spectrogram_array(x)
    p = np.abs(dsp.stft_array(x, dsp.StftConfig())) ** 2
    eps = 1e-12 * p.mean()
    ref = 10 * np.log10(np.maximum(p[:, 1:], eps) / np.maximum(p[:, :-1], eps))
    np.testing.assert_allclose(s, ref, atol=1e-9)


@given(st.floats(1e-3, 1e3))
def test_scale_invariance(c):
    x = preamble().samples * np.exp(1j * np.linspace(0, 3, 2048))
    np.testing.assert_allclose(dsp.spectrogram_array(c * x), dsp.spectrogram_array(x), atol=1e-8)


def test_zero_cells_are_finite():
    x = np.zeros(256, complex)
    x[100] = 1
    assert np.all(np.isfinite(dsp.spectrogram_array(x)))
    with pytest.raises(ValueError):
        dsp.spectrogram_array(np.ones(64, complex))


def signal_cells(x):
    """Cells whose two STFT frames both carry more than the mean cell energy."""
    p = np.abs(dsp.stft(x)) ** 2
    return np.minimum(p[:, 1:], p[:, :-1]) > p.mean()


@pytest.mark.parametrize("sf", [7, 8, 9])
@pytest.mark.parametrize("tap2", [0.5, -0.5, 0.5j, 0.2 + 0.2j])
def test_static_channel_invariance(sf, tap2):
    x = preamble(sf)
    mask = signal_cells(x)
    for snr in (30.0, 40.0):
        ref = dsp.spectrogram_array(add_awgn(x, snr, np.random.default_rng(7)).samples)
        y = add_awgn(apply_multipath(x, [1.0, tap2]), snr, np.random.default_rng(8)).samples
        assert np.median(np.abs(dsp.spectrogram_array(y) - ref)[mask]) < 1.0


def test_static_channel_noiseless_all_cells():
    x = preamble(8)
    dev = np.abs(dsp.spectrogram_array(apply_multipath(x, [1.0, 0.5]).samples) - dsp.spectrogram_array(x.samples))
    assert np.median(dev) < 1.0


def test_spectrogram_serialisation():
    s = dsp.channel_independent_spectrogram(preamble(), sf_tag=7, device_label=2)
    blob = s.to_bytes()
    assert blob[:8] == np.array([64, 62], "<u4").tobytes()
    assert len(blob) == 8 + 64 * 62 * 4
    back = dsp.Spectrogram.from_bytes(blob, sf_tag=7)
    np.testing.assert_array_equal(back.values, s.values.astype(np.float32))
    assert back.to_bytes() == blob


def test_model_input_clip_and_standardise():
    rng = np.random.default_rng(0)
    v = rng.normal(0, 50, size=(3, 64, 62))
    v[0, 0, 0] = 500.0
    out = dsp.model_input(v)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out.mean(axis=(1, 2)), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(1, 2)), 1, atol=1e-4)
    clipped = np.clip(v[0], -60, 60)
    np.testing.assert_allclose(out[0], (clipped - clipped.mean()) / clipped.std(), atol=1e-5)
    assert np.all(dsp.model_input(np.zeros((64, 6))) == 0)


# --- slicing ---------------------------------------------------------------


@pytest.mark.parametrize("sf,n", [(7, 8), (8, 16), (9, 32)])
def test_slices(sf, n):
    x = preamble(sf)
    parts = dsp.slice_signal(x)
    assert len(parts) == n
    np.testing.assert_array_equal(np.concatenate([p.samples for p in parts]), x.samples)
    assert dsp.channel_independent_spectrogram(parts[0]).shape == (64, 6)
    assert dsp.slice_array(x.samples[None]).shape == (1, n, 256)
    with pytest.raises(ValueError):
        dsp.slice_signal(ComplexSignal(np.ones(300), 1.0))


# --- sync and CFO -----------------------------------------------------------


@pytest.mark.parametrize("offset", [0, 1, 100, 777])
def test_sync_exact_noiseless(offset):
    cfg = LoRaConfig(7)
    buf = np.zeros(2048 + 1000, complex)
    buf[offset : offset + 2048] = preamble().samples
    assert dsp.detect_and_sync(ComplexSignal(buf, FS), cfg) == offset


def test_sync_at_zero_db():
    cfg = LoRaConfig(7)
    rng = np.random.default_rng(11)
    hits = 0
    for _ in range(200):
        off = int(rng.integers(0, 500))
        buf = np.zeros(2048 + 600, complex)
        buf[off : off + 2048] = preamble().samples
        buf += awgn(buf.shape, 1.0, rng)
        found = dsp.detect_and_sync(ComplexSignal(buf, FS), cfg)
        hits += found is not None and abs(found - off) <= 1
    assert hits >= 190


def test_sync_rejects_noise():
    cfg = LoRaConfig(7)
    rng = np.random.default_rng(2)
    misses = sum(
        dsp.detect_and_sync(ComplexSignal(awgn(4096, 1.0, rng), FS), cfg) is None for _ in range(20)
    )
    assert misses == 20
    with pytest.raises(ValueError):
        dsp.detect_and_sync(ComplexSignal(np.ones(100), FS), cfg)


def rotate(x, f):
    return x.with_samples(x.samples * cfo_rotation(len(x), FS, f))


def test_cfo_estimate_noiseless():
    cfg = LoRaConfig(7)
    assert dsp.estimate_cfo(rotate(preamble(), 100.0), cfg) == pytest.approx(100.0, abs=0.1)


def test_cfo_zero_at_30db():
    cfg = LoRaConfig(7)
    y = add_awgn(preamble(), 30.0, np.random.default_rng(0))
    assert abs(dsp.estimate_cfo(y, cfg)) < 0.1 * 10  # symbol-pair average at 30 dB


def test_cfo_ambiguity():
    cfg = LoRaConfig(9)
    amb = dsp.cfo_ambiguity_hz(cfg)
    # an SF9 symbol is 1024 samples of 4 us at 250 kHz
    assert amb == pytest.approx(1 / (2 * 1024 * 4e-6))
    assert dsp.cfo_ambiguity_hz(LoRaConfig(7)) == pytest.approx(488.28125)
    est = dsp.estimate_cfo(rotate(preamble(9), 200.0), cfg)
    # aliased by an integer number of 2*amb steps
    assert abs(est - 200.0) > 1.0
    k = (200.0 - est) / (2 * amb)
    assert k == pytest.approx(round(k), abs=1e-6)


def test_cfo_round_trip_and_residual():
    x = preamble()
    np.testing.assert_allclose(dsp.compensate_cfo(rotate(x, 123.4), 123.4).samples, x.samples, atol=1e-9)
    np.testing.assert_array_equal(dsp.compensate_cfo(x, 0.0).samples, x.samples)
    cfg = LoRaConfig(7)
    y = add_awgn(rotate(x, 250.0), 40.0, np.random.default_rng(1))
    fixed = dsp.compensate_cfo(y, dsp.estimate_cfo(y, cfg))
    assert abs(dsp.estimate_cfo(fixed, cfg)) < 0.5
    with pytest.raises(ValueError):
        dsp.estimate_cfo(ComplexSignal(np.ones(300), FS), cfg)


def test_batch_cfo_matches_scalar():
    cfg = LoRaConfig(7)
    rows = np.stack([rotate(preamble(), f).samples for f in (-80.0, 0.0, 150.0)])
    est = dsp.estimate_cfo_batch(rows, cfg)
    for row, e in zip(rows, est):
        assert e == pytest.approx(dsp.estimate_cfo(ComplexSignal(row, FS), cfg), abs=1e-9)


def test_normalize_rms():
    x = ComplexSignal(np.full(10, 2.0 + 0j), 1.0)
    np.testing.assert_allclose(dsp.normalize_rms(x).samples, 1.0)
    rng = np.random.default_rng(5)
    y = ComplexSignal(rng.standard_normal(100) + 1j, 1.0)
    out = dsp.normalize_rms(y).samples
    assert np.sqrt(np.mean(np.abs(out) ** 2)) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(dsp.normalize_rms(y.with_samples(7 * y.samples)).samples, out, atol=1e-12)
    with pytest.raises(ValueError):
        dsp.normalize_rms(ComplexSignal(np.zeros(3), 1.0))


def test_preprocess_batch_matches_single_path():
    cfg = LoRaConfig(7)
    y = add_awgn(rotate(preamble(), 40.0), 20.0, np.random.default_rng(2))
    single = dsp.normalize_rms(dsp.compensate_cfo(y, dsp.estimate_cfo(y, cfg))).samples
    np.testing.assert_allclose(dsp.preprocess_batch(y.samples[None], cfg)[0], single, atol=1e-9)
