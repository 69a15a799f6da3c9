"""The desk-scale experiment matrix.

Every experiment derives all of its randomness from ``ExperimentSpec.seed``,
and arms that are compared against each other share datasets, test noise and
initial weights (paired design).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from rffi import dsp
from rffi.channel import awgn, noise_rms_for, rms
from rffi.impairment import PopulationSpec, default_ranges
from rffi.models import ARCHITECTURES, LENGTH_VERSATILE, ModelSpec, build_model, load_model
from rffi.pipeline.dataset import Dataset, SfGroup, generate_dataset, noise_group, stream
from rffi.pipeline.inference import fuse_blocks, packet_probs
from rffi.pipeline.training import TrainConfig, train
from rffi.tensornet.tensor import Tensor, no_grad
from rffi.waveform import ComplexSignal, LoRaConfig

from rffi.harness.report import Report

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "SnrSweep",
    "AugCompare",
    "MultiPacketCurve",
    "SlicingCompare",
    "PositionStudy",
    "Complexity",
)
TEST_KEY, SYNC_KEY = 31, 32
N_POSITIONS = 8


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    architectures: tuple = ("FlattenFreeCnn",)
    test_snrs_db: tuple = tuple(range(0, 45, 5))
    n_pkt_list: tuple = (1, 2, 3, 5, 10, 20)
    output_dir: str = "results"
    k_devices: int = 10
    sfs: tuple = (7, 8, 9)
    n_train: int = 500
    n_test: int = 100
    seed: int = 0
    scale: str = "desk"
    augmentation: str = "online"
    augmentations: tuple = ("none", "offline", "online")
    copies: int = 1
    max_epochs: int = 100
    batch_size: int = 32
    transient: bool = True
    realistic_sync: bool = False
    # overrides merged into the default impairment draw ranges
    ranges: dict = field(default_factory=dict)
    # evaluation SNR for the position study
    position_snr_db: float = 40.0
    positions: tuple = tuple(range(N_POSITIONS))
    # architecture -> checkpoint path; when given, training is skipped
    checkpoints: dict = field(default_factory=dict)
    timing_runs: int = 100

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        for name in ("architectures", "test_snrs_db", "n_pkt_list", "sfs"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must not be empty")
        if not all(np.isfinite(s) for s in self.test_snrs_db):
            raise ValueError("test SNRs must be finite")
        unknown = set(self.architectures) - set(ARCHITECTURES)
        if unknown:
            raise ValueError(f"unknown architectures {sorted(unknown)}")
        if any(n < 1 for n in self.n_pkt_list):
            raise ValueError("n_pkt values must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        for k in ("architectures", "test_snrs_db", "n_pkt_list", "sfs", "augmentations", "positions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def population(self) -> PopulationSpec:
        ranges = default_ranges()
        ranges.update({k: tuple(v) for k, v in self.ranges.items()})
        return PopulationSpec(k_devices=self.k_devices, ranges=ranges, seed=self.seed)

    def train_config(self, augmentation=None, **changes) -> TrainConfig:
        cfg = TrainConfig(
            augmentation=augmentation or self.augmentation,
            copies=self.copies,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        return replace(cfg, **changes)


# --- shared plumbing ----------------------------------------------------------


def make_datasets(spec: ExperimentSpec, sfs=None) -> tuple[Dataset, Dataset]:
    sfs = tuple(sfs or spec.sfs)
    pop = spec.population()
    train_ds = generate_dataset(pop, sfs, spec.n_train, spec.seed, "train", spec.transient)
    test_ds = generate_dataset(
        pop, sfs, spec.n_test, spec.seed, "test", spec.transient, profiles=train_ds.profiles
    )
    return train_ds, test_ds


def _snr_code(snr_db: float) -> int:
    # stream keys are non-negative integers; 1 mdB resolution
    return int(round((snr_db + 1000.0) * 1000))


def noisy_test_set(group: SfGroup, snr_db: float, seed: int) -> np.ndarray:
    """Noisy test copies; identical for every model evaluated under the same seed."""
    return noise_group(group, snr_db, seed, TEST_KEY, _snr_code(snr_db))


def realistic_capture(group: SfGroup, snr_db: float, seed: int, config):
    """Embed each preamble at a random offset in a noisy buffer and resynchronise.

    Returns (iq, detected) where undetected rows are zero-filled.
    """
    length = group.iq.shape[1]
    out = np.zeros(group.iq.shape, dtype=np.complex128)
    detected = np.zeros(len(group), dtype=bool)
    for i in range(len(group)):
        rng = stream(seed, SYNC_KEY, _snr_code(snr_db), group.sf, int(group.record_ids[i]))
        lead = int(rng.integers(0, config.symbol_len))
        sig = group.iq[i].astype(np.complex128)
        buf = np.zeros(length + config.symbol_len, dtype=np.complex128)
        buf[lead : lead + length] = sig
        buf += awgn(buf.shape, noise_rms_for(rms(sig), snr_db), rng)
        start = dsp.detect_and_sync(ComplexSignal(buf, config.sample_rate_hz), config)
        if start is None or start + length > buf.size:
            continue
        out[i] = buf[start : start + length]
        detected[i] = True
    return out, detected


def evaluate_probs(model, test_ds: Dataset, sf: int, snr_db: float, spec: ExperimentSpec, positions=None):
    """(probs (n, K), labels, detected mask) for one test condition."""
    group = test_ds.groups[sf]
    config = test_ds.lora_config(sf)
    if spec.realistic_sync:
        iq, detected = realistic_capture(group, snr_db, spec.seed, config)
    else:
        iq, detected = noisy_test_set(group, snr_db, spec.seed), np.ones(len(group), dtype=bool)
    probs = np.zeros((len(group), model.spec.k_classes))
    if detected.any():
        probs[detected] = packet_probs(model, iq[detected], config, positions)
    return probs, group.labels, detected


def predictions(probs: np.ndarray, detected: np.ndarray) -> np.ndarray:
    pred = probs.argmax(axis=1)
    pred[~detected] = -1
    return pred


def confusion(labels, pred, k: int, undetected_column: bool = False) -> np.ndarray:
    """Integer counts; row = true device. Undetected packets land in column K."""
    cols = k + 1 if undetected_column else k
    m = np.zeros((k, cols), dtype=np.int64)
    pred = np.where(pred < 0, k, pred)
    np.add.at(m, (labels, pred), 1)
    return m


def get_model(spec: ExperimentSpec, arch: str, train_ds: Dataset, cfg: TrainConfig, cache=None, tag=None):
    """Load a checkpoint, reuse a cached model or train a fresh one."""
    key = tag or f"{arch}/{cfg.augmentation}"
    if cache is not None and key in cache:
        return cache[key]
    if arch in spec.checkpoints:
        path = Path(spec.checkpoints[arch])
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint for {arch}: {path}")
        model = load_model(path)
    else:
        model = build_model(ModelSpec(arch, spec.k_devices, spec.scale, seed=spec.seed))
        t0 = time.time()
        model, history = train(model, train_ds, cfg)
        model.metadata["train_seconds"] = round(time.time() - t0, 3)
        model.metadata["history"] = history.rows
        log.info("trained %s in %d epochs", key, len(history.rows))
    if cache is not None:
        cache[key] = model
    return model


def _metadata(spec: ExperimentSpec, t0: float, models: dict) -> dict:
    return {
        "spec": spec.to_dict(),
        "population": spec.population().to_dict(),
        "wall_clock_s": round(time.time() - t0, 3),
        "models": {
            k: {"epochs": m.metadata.get("epochs"), "train_config": m.metadata.get("train_config")}
            for k, m in sorted(models.items())
        },
    }


def _condition(*parts) -> str:
    return "/".join(str(p) for p in parts)


def _snr_rows(report: Report, model, key_cols: dict, test_ds, sfs, spec, name_prefix):
    for sf in sfs:
        for snr in spec.test_snrs_db:
            probs, labels, detected = evaluate_probs(model, test_ds, sf, snr, spec)
            pred = predictions(probs, detected)
            cm = confusion(labels, pred, spec.k_devices, spec.realistic_sync)
            correct = int(np.trace(cm[:, : spec.k_devices]))
            report.rows.append(
                {**key_cols, "sf": sf, "snr_db": float(snr), "n": len(labels),
                 "correct": correct, "accuracy": correct / len(labels)}
            )
            report.confusions[_condition(*name_prefix, f"SF{sf}", f"{snr:g}dB")] = cm.tolist()


# --- experiments --------------------------------------------------------------


def run_snr_sweep(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Single-packet accuracy per (architecture, SF, test SNR)."""
    t0 = time.time()
    train_ds, test_ds = datasets or make_datasets(spec)
    cache = {} if cache is None else cache
    report = Report("SnrSweep", ["architecture", "sf", "snr_db", "n", "correct", "accuracy"])
    used = {}
    for arch in spec.architectures:
        model = get_model(spec, arch, train_ds, spec.train_config(), cache)
        used[f"{arch}/{spec.augmentation}"] = model
        _snr_rows(report, model, {"architecture": arch}, test_ds, spec.sfs, spec, (arch,))
    report.metadata = _metadata(spec, t0, used)
    return report


def run_aug_compare(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Each architecture under every augmentation strategy, one shared seed."""
    t0 = time.time()
    train_ds, test_ds = datasets or make_datasets(spec)
    cache = {} if cache is None else cache
    eval_sf = 7 if 7 in spec.sfs else min(spec.sfs)
    report = Report(
        "AugCompare", ["architecture", "augmentation", "sf", "snr_db", "n", "correct", "accuracy"]
    )
    used = {}
    for arch in spec.architectures:
        for aug in spec.augmentations:
            model = get_model(spec, arch, train_ds, spec.train_config(aug), cache)
            used[f"{arch}/{aug}"] = model
            _snr_rows(
                report, model, {"architecture": arch, "augmentation": aug}, test_ds, (eval_sf,), spec, (arch, aug)
            )
    report.metadata = _metadata(spec, t0, used)
    return report


def run_multipacket_curve(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Accuracy after fusing blocks of N_pkt same-device packets."""
    t0 = time.time()
    worst = max(spec.n_pkt_list)
    if spec.n_test < worst:
        raise ValueError(f"n_pkt={worst} needs at least {worst} test packets per device, have {spec.n_test}")
    train_ds, test_ds = datasets or make_datasets(spec)
    cache = {} if cache is None else cache
    report = Report("MultiPacketCurve", ["architecture", "sf", "snr_db", "n_pkt", "n", "correct", "accuracy"])
    used = {}
    for arch in spec.architectures:
        model = get_model(spec, arch, train_ds, spec.train_config(), cache)
        used[f"{arch}/{spec.augmentation}"] = model
        for sf in spec.sfs:
            for snr in spec.test_snrs_db:
                probs, labels, detected = evaluate_probs(model, test_ds, sf, snr, spec)
                for n_pkt in spec.n_pkt_list:
                    correct = total = 0
                    for device in range(spec.k_devices):
                        rows = np.flatnonzero(labels == device)
                        fused = fuse_blocks(probs[rows], n_pkt)
                        # a block with no detected packet carries no evidence
                        any_hit = fuse_blocks(detected[rows, None].astype(float), n_pkt)[:, 0] > 0
                        pred = np.where(any_hit, fused.argmax(axis=1), -1)
                        correct += int((pred == device).sum())
                        total += len(pred)
                    report.rows.append(
                        {"architecture": arch, "sf": sf, "snr_db": float(snr), "n_pkt": n_pkt,
                         "n": total, "correct": correct, "accuracy": correct / total}
                    )
    report.metadata = _metadata(spec, t0, used)
    return report


def run_slicing_compare(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Flatten-free CNN against the slicing CNN, identically trained."""
    t0 = time.time()
    train_ds, test_ds = datasets or make_datasets(spec)
    cache = {} if cache is None else cache
    report = Report("SlicingCompare", ["architecture", "sf", "snr_db", "n", "correct", "accuracy"])
    used = {}
    for arch in ("FlattenFreeCnn", "SlicingCnn"):
        model = get_model(spec, arch, train_ds, spec.train_config(), cache)
        used[f"{arch}/{spec.augmentation}"] = model
        _snr_rows(report, model, {"architecture": arch}, test_ds, spec.sfs, spec, (arch,))
    report.metadata = _metadata(spec, t0, used)
    report.metadata["param_counts"] = {k: m.network.param_count() for k, m in used.items()}
    return report


def run_position_study(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Slicing CNN j trained on SF7 slice j only, tested on every slice position."""
    t0 = time.time()
    if datasets is None:
        datasets = make_datasets(spec, sfs=(7,))
    train_ds, test_ds = datasets
    cache = {} if cache is None else cache
    positions = tuple(spec.positions)
    report = Report("PositionStudy", ["model_position", "test_position", "n", "correct", "accuracy"])
    grid = np.zeros((len(positions), len(positions)))
    used = {}
    for a, j in enumerate(positions):
        cfg = spec.train_config(slice_positions=(j,))
        model = get_model(spec, "SlicingCnn", train_ds, cfg, cache, tag=f"SlicingCnn/position{j}")
        used[f"SlicingCnn/position{j}"] = model
        for b, i in enumerate(positions):
            probs, labels, detected = evaluate_probs(model, test_ds, 7, spec.position_snr_db, spec, positions=(i,))
            correct = int((predictions(probs, detected) == labels).sum())
            grid[a, b] = correct / len(labels)
            report.rows.append(
                {"model_position": j + 1, "test_position": i + 1, "n": len(labels),
                 "correct": correct, "accuracy": correct / len(labels)}
            )
    report.matrices["position_accuracy"] = grid.tolist()
    report.metadata = _metadata(spec, t0, used)
    return report


def time_inference(model, width: int, runs: int, rng) -> float:
    """Mean wall-clock milliseconds of one forward pass on a (64, width) input."""
    x = Tensor(rng.standard_normal((1, 64, width)).astype(model.dtype))
    with no_grad():
        model.network(x)  # warm-up
        t0 = time.perf_counter()
        for _ in range(runs):
            model.network(x)
    return (time.perf_counter() - t0) / runs * 1e3


def run_complexity(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    """Parameter counts and single-input inference time per architecture and SF."""
    t0 = time.time()
    report = Report("Complexity", ["architecture", "sf", "width", "params", "inference_ms"])
    rng = np.random.default_rng(spec.seed)
    archs = [a for a in spec.architectures if a in LENGTH_VERSATILE]
    for arch in archs:
        model = build_model(ModelSpec(arch, spec.k_devices, spec.scale, seed=spec.seed))
        for sf in spec.sfs:
            width = dsp.spectrogram_width(LoRaConfig(sf))
            report.rows.append(
                {"architecture": arch, "sf": sf, "width": width, "params": model.network.param_count(),
                 "inference_ms": time_inference(model, width, spec.timing_runs, rng)}
            )
    report.metadata = {"spec": spec.to_dict(), "wall_clock_s": round(time.time() - t0, 3)}
    return report


RUNNERS = {
    "SnrSweep": run_snr_sweep,
    "AugCompare": run_aug_compare,
    "MultiPacketCurve": run_multipacket_curve,
    "SlicingCompare": run_slicing_compare,
    "PositionStudy": run_position_study,
    "Complexity": run_complexity,
}


def run_experiment(spec: ExperimentSpec, cache=None, datasets=None) -> Report:
    return RUNNERS[spec.experiment](spec, cache=cache, datasets=datasets)
