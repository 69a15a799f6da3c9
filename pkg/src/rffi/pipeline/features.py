"""IQ batches -> model-ready spectrogram tensors."""

from __future__ import annotations

import numpy as np

from rffi import dsp
from rffi.waveform import LoRaConfig

CHUNK = 256
SLICE_LEN = 256


def is_slicing(architecture: str) -> bool:
    return architecture == "SlicingCnn"


def packet_spectrograms(iq: np.ndarray, config: LoRaConfig, stft=dsp.StftConfig()) -> np.ndarray:
    """Preprocess (CFO, RMS) then channel-independent spectrograms: (n, L) -> (n, 64, W)."""
    out = []
    for start in range(0, len(iq), CHUNK):
        x = dsp.preprocess_batch(iq[start : start + CHUNK].astype(np.complex128), config)
        out.append(dsp.spectrogram_array(x, stft).astype(np.float32))
    return np.concatenate(out) if out else np.empty((0, stft.window_len, 0), np.float32)


def slice_spectrograms(
    iq: np.ndarray, config: LoRaConfig, positions=None, stft=dsp.StftConfig()
) -> np.ndarray:
    """Whole-packet preprocessing, then per-slice spectrograms: (n, L) -> (n, S, 64, 6)."""
    out = []
    for start in range(0, len(iq), CHUNK):
        x = dsp.preprocess_batch(iq[start : start + CHUNK].astype(np.complex128), config)
        slices = dsp.slice_array(x, SLICE_LEN)
        if positions is not None:
            slices = slices[:, list(positions)]
        out.append(dsp.spectrogram_array(slices, stft).astype(np.float32))
    return np.concatenate(out)


def training_inputs(architecture, iq, labels, config, slice_positions=None):
    """Standardised network inputs and labels; slicing models get one row per slice."""
    if is_slicing(architecture):
        spec = slice_spectrograms(iq, config, slice_positions)
        n, s = spec.shape[:2]
        return dsp.model_input(spec.reshape(n * s, *spec.shape[2:])), np.repeat(labels, s)
    return dsp.model_input(packet_spectrograms(iq, config)), np.asarray(labels)
