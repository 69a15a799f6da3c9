"""Receiver preprocessing and channel-independent spectrograms."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from rffi.waveform import ComplexSignal, LoRaConfig, synth_preamble

CLIP_DB = 60.0
EPS_REL = 1e-12
DETECT_THRESHOLD = 6.0


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 64
    hop: int = 32

    def __post_init__(self):
        n = self.window_len
        if n < 1 or n & (n - 1):
            raise ValueError(f"window_len must be a power of two, got {n}")
        if not 0 < self.hop <= n:
            raise ValueError(f"hop must be in (0, window_len], got {self.hop}")


@dataclass
class Spectrogram:
    """N x (M-1) dB matrix plus labelling metadata."""

    values: np.ndarray
    sf_tag: int | None = None
    device_label: int | None = None
    snr_db: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_bytes(self) -> bytes:
        n, w = self.values.shape
        return struct.pack("<II", n, w) + np.ascontiguousarray(self.values, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, **meta) -> "Spectrogram":
        n, w = struct.unpack_from("<II", blob)
        values = np.frombuffer(blob, dtype="<f4", count=n * w, offset=8).reshape(n, w)
        return cls(values.astype(np.float32), **meta)


# --- synchronisation and CFO ---------------------------------------------


def detect_and_sync(
    buffer: ComplexSignal, config: LoRaConfig, threshold: float = DETECT_THRESHOLD
) -> int | None:
    """Start index of the preamble in ``buffer``, or None when not detected.

    Full-overlap cross-correlation against the ideal preamble; the peak is
    refined by a parabola through its neighbours, then rounded.
    """
    template = synth_preamble(config).samples
    x = buffer.samples
    if x.size < template.size:
        raise ValueError("buffer shorter than one preamble")
    n_lags = x.size - template.size + 1
    nfft = 1 << int(np.ceil(np.log2(x.size + template.size)))
    corr = np.fft.ifft(np.fft.fft(x, nfft) * np.conj(np.fft.fft(template, nfft)))
    mag = np.abs(corr[:n_lags])

    peak = int(np.argmax(mag))
    median = float(np.median(mag))
    if median == 0:
        # only exact in the noiseless case: any nonzero peak is a hit
        if mag[peak] == 0:
            return None
    elif mag[peak] / median < threshold:
        return None

    if 0 < peak < n_lags - 1:
        a, b, c = mag[peak - 1], mag[peak], mag[peak + 1]
        denom = a - 2 * b + c
        if denom != 0:
            shift = 0.5 * (a - c) / denom
            return int(round(peak + float(np.clip(shift, -1.0, 1.0))))
    return peak


def cfo_ambiguity_hz(config: LoRaConfig) -> float:
    """Largest |CFO| the symbol-repetition estimator resolves."""
    return 1.0 / (2.0 * config.symbol_len / config.sample_rate_hz)


def estimate_cfo(preamble: ComplexSignal, config: LoRaConfig) -> float:
    """CFO from the phase drift between consecutive identical chirps.

    Aliases outside +/- :func:`cfo_ambiguity_hz`.
    """
    lag = config.symbol_len
    x = preamble.samples
    if x.size < 2 * lag:
        raise ValueError("CFO estimation needs at least two symbols")
    acc = np.vdot(x[:-lag], x[lag:])
    return float(np.angle(acc) / (2 * np.pi * lag / preamble.sample_rate_hz))


def estimate_cfo_batch(x: np.ndarray, config: LoRaConfig) -> np.ndarray:
    lag = config.symbol_len
    acc = np.sum(np.conj(x[..., :-lag]) * x[..., lag:], axis=-1)
    return np.angle(acc) / (2 * np.pi * lag / config.sample_rate_hz)


def compensate_cfo(signal: ComplexSignal, cfo_hz: float) -> ComplexSignal:
    n = np.arange(len(signal))
    return signal.with_samples(
        signal.samples * np.exp(-2j * np.pi * cfo_hz * n / signal.sample_rate_hz)
    )


def normalize_rms(signal: ComplexSignal) -> ComplexSignal:
    power = np.sqrt(np.mean(np.abs(signal.samples) ** 2))
    if power == 0:
        raise ValueError("cannot normalise a zero signal")
    return signal.with_samples(signal.samples / power)


def preprocess_batch(x: np.ndarray, config: LoRaConfig) -> np.ndarray:
    """CFO compensation then RMS normalisation for a (B, L) array of preambles."""
    cfo = estimate_cfo_batch(x, config)
    n = np.arange(x.shape[-1])
    y = x * np.exp(-2j * np.pi * cfo[..., None] * n / config.sample_rate_hz)
    power = np.sqrt(np.mean(np.abs(y) ** 2, axis=-1, keepdims=True))
    if np.any(power == 0):
        raise ValueError("cannot normalise a zero signal")
    return y / power


# --- spectrograms ----------------------------------------------------------


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n, r = cfg.window_len, cfg.hop
    length = x.shape[-1]
    if length < n:
        raise ValueError(f"signal of {length} samples is shorter than the window ({n})")
    m = (length - n) // r + 1
    idx = np.arange(m)[:, None] * r + np.arange(n)[None, :]
    return x[..., idx]  # (..., M, N)


def stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centred STFT of (..., L) samples -> (..., N, M)."""
    spec = np.fft.fftshift(np.fft.fft(_frames(x, cfg), axis=-1), axes=-1)
    return np.swapaxes(spec, -1, -2)


def stft(signal: ComplexSignal, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Rectangular-window STFT, N rows x M columns, DC at row N/2."""
    return stft_array(signal.samples, cfg)


def spectrogram_array(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """dB ratio of adjacent STFT frames for (..., L) samples -> (..., N, M-1)."""
    power = np.abs(stft_array(x, cfg)) ** 2
    if power.shape[-1] < 2:
        raise ValueError("signal too short for two STFT frames")
    eps = EPS_REL * np.mean(power, axis=(-2, -1), keepdims=True)
    eps = np.where(eps > 0, eps, np.finfo(float).tiny)
    floored = np.maximum(power, eps)
    return 10.0 * np.log10(floored[..., 1:] / floored[..., :-1])


def channel_independent_spectrogram(
    signal: ComplexSignal, cfg: StftConfig = StftConfig(), **meta
) -> Spectrogram:
    return Spectrogram(spectrogram_array(signal.samples, cfg), **meta)


def model_input(values: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Clip to +/-60 dB and standardise each spectrogram (last two axes)."""
    v = np.clip(values, -CLIP_DB, CLIP_DB)
    mu = v.mean(axis=(-2, -1), keepdims=True)
    sd = v.std(axis=(-2, -1), keepdims=True)
    return ((v - mu) / np.where(sd > 0, sd, 1.0)).astype(dtype)


def spectrogram_width(config: LoRaConfig, cfg: StftConfig = StftConfig()) -> int:
    """Exact column count (M - 1) for an untruncated preamble."""
    n_samples = (
        config.n_preamble_symbols
        * Fraction(2**config.sf)
        / Fraction(config.bandwidth_hz).limit_denominator()
        * Fraction(config.sample_rate_hz).limit_denominator()
    )
    width = (n_samples - cfg.window_len) / cfg.hop
    if width.denominator != 1:
        raise ValueError(f"spectrogram width {width} is not an integer")
    return int(width)


def slice_signal(signal: ComplexSignal, slice_len: int = 256) -> list[ComplexSignal]:
    if len(signal) % slice_len:
        raise ValueError(f"length {len(signal)} is not divisible by slice length {slice_len}")
    return [signal.with_samples(s) for s in signal.samples.reshape(-1, slice_len)]


def slice_array(x: np.ndarray, slice_len: int = 256) -> np.ndarray:
    """(..., L) -> (..., L / slice_len, slice_len)."""
    if x.shape[-1] % slice_len:
        raise ValueError(f"length {x.shape[-1]} is not divisible by slice length {slice_len}")
    return x.reshape(*x.shape[:-1], -1, slice_len)
