"""Simulated preamble datasets: generation, offline augmentation, persistence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rffi.channel import add_awgn_batch
from rffi.impairment import DeviceProfile, PopulationSpec, apply_impairments, draw_profiles
from rffi.waveform import ComplexSignal, LoRaConfig, samples_per_preamble, synth_preamble

SPLIT_CODES = {"train": 0, "test": 1, "val": 2}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by integers (seed first)."""
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


@dataclass
class DatasetRecord:
    iq: ComplexSignal
    label: int
    sf: int
    meta: dict = field(default_factory=dict)


@dataclass
class SfGroup:
    """All records of one spreading factor, stacked row-wise."""

    sf: int
    iq: np.ndarray  # (n, L) complex64
    labels: np.ndarray  # (n,)
    record_ids: np.ndarray  # (n,), unique within the group, keys noise streams
    snr_db: np.ndarray  # (n,), NaN for noiseless rows

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "SfGroup":
        idx = np.asarray(idx)
        return SfGroup(self.sf, self.iq[idx], self.labels[idx], self.record_ids[idx], self.snr_db[idx])


@dataclass
class Dataset:
    population: PopulationSpec
    profiles: list[DeviceProfile]
    seed: int
    split: str
    groups: dict[int, SfGroup]
    bandwidth_hz: float = 125_000.0
    sample_rate_hz: float = 250_000.0
    n_preamble_symbols: int = 8
    augmented: bool = False
    transient: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())

    @property
    def sfs(self) -> list[int]:
        return sorted(self.groups)

    @property
    def k_devices(self) -> int:
        return self.population.k_devices

    def lora_config(self, sf: int) -> LoRaConfig:
        return LoRaConfig(sf, self.bandwidth_hz, self.sample_rate_hz, self.n_preamble_symbols)

    def records(self):
        for sf in self.sfs:
            g = self.groups[sf]
            for i in range(len(g)):
                yield DatasetRecord(
                    ComplexSignal(g.iq[i], self.sample_rate_hz),
                    int(g.labels[i]),
                    sf,
                    {
                        "seed": self.seed,
                        "record_id": int(g.record_ids[i]),
                        "profile_hash": self.profiles[int(g.labels[i])].digest(),
                    },
                )

    def label_counts(self) -> np.ndarray:
        counts = np.zeros(self.k_devices, dtype=int)
        for g in self.groups.values():
            counts += np.bincount(g.labels, minlength=self.k_devices)
        return counts

    def with_groups(self, groups: dict[int, SfGroup], **changes) -> "Dataset":
        return replace(self, groups=groups, **changes)


def generate_dataset(
    population: PopulationSpec,
    sfs=(7, 8, 9),
    n_per_device_per_sf: int = 500,
    seed: int = 0,
    split: str = "train",
    transient: bool = True,
    profiles: list[DeviceProfile] | None = None,
    bandwidth_hz: float = 125_000.0,
    sample_rate_hz: float = 250_000.0,
) -> Dataset:
    """Noiseless impaired preambles for every device x SF x index.

    Each record draws its phase-noise walk from a stream keyed by
    (seed, split, sf, device, index), so any record can be regenerated alone.
    """
    if profiles is None:
        profiles = draw_profiles(population)
    split_code = SPLIT_CODES[split]
    groups = {}
    for sf in sorted(set(sfs)):
        cfg = LoRaConfig(sf, bandwidth_hz, sample_rate_hz)
        ideal = synth_preamble(cfg)
        length = samples_per_preamble(cfg)
        n = len(profiles) * n_per_device_per_sf
        iq = np.empty((n, length), dtype=np.complex64)
        labels = np.empty(n, dtype=np.int64)
        row = 0
        for profile in profiles:
            for index in range(n_per_device_per_sf):
                rng = stream(seed, split_code, sf, profile.device_id, index)
                out = apply_impairments(
                    ideal, profile, rng, transient_samples=cfg.symbol_len if transient else 0
                )
                iq[row] = out.samples
                labels[row] = profile.device_id
                row += 1
        groups[sf] = SfGroup(sf, iq, labels, np.arange(n), np.full(n, np.nan))
    return Dataset(
        population,
        list(profiles),
        seed,
        split,
        groups,
        bandwidth_hz,
        sample_rate_hz,
        transient=transient,
        meta={"n_per_device_per_sf": n_per_device_per_sf},
    )


def draw_snrs(rng: np.random.Generator, n: int, snr_range) -> np.ndarray:
    lo, hi = snr_range
    if hi < lo:
        raise ValueError("snr range must satisfy low <= high")
    return rng.uniform(lo, hi, size=n)


def noise_group(group: SfGroup, snr_db, seed: int, *key: int) -> np.ndarray:
    """Noisy copy of every row; row i uses the stream (seed, *key, sf, record_id)."""
    snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (len(group),))
    out = np.empty(group.iq.shape, dtype=np.complex128)
    for i in range(len(group)):
        rng = stream(seed, *key, group.sf, int(group.record_ids[i]))
        out[i] = add_awgn_batch(group.iq[i : i + 1].astype(np.complex128), snr[i], rng)[0]
    return out


def noise_group_uniform(group: SfGroup, snr_range, seed: int, *key: int):
    """Like :func:`noise_group` but each row draws its SNR from ``snr_range`` first."""
    out = np.empty(group.iq.shape, dtype=np.complex128)
    snrs = np.empty(len(group))
    for i in range(len(group)):
        rng = stream(seed, *key, group.sf, int(group.record_ids[i]))
        snrs[i] = draw_snrs(rng, 1, snr_range)[0]
        out[i] = add_awgn_batch(group.iq[i : i + 1].astype(np.complex128), snrs[i], rng)[0]
    return out, snrs


AUGMENT_KEY = 11


def augment_offline(dataset: Dataset, snr_range=(0.0, 40.0), copies: int = 1, seed: int = 0) -> Dataset:
    """Replace the dataset by ``copies`` noisy replicas of each record (SNR ~ U(range))."""
    if copies < 1:
        raise ValueError("copies must be >= 1")
    groups = {}
    for sf, g in dataset.groups.items():
        iqs, snrs = [], []
        for c in range(copies):
            noisy, snr = noise_group_uniform(g, snr_range, seed, AUGMENT_KEY, c)
            iqs.append(noisy.astype(np.complex64))
            snrs.append(snr)
        n = len(g)
        groups[sf] = SfGroup(
            sf,
            np.concatenate(iqs),
            np.tile(g.labels, copies),
            np.concatenate([g.record_ids + c * (int(g.record_ids.max()) + 1) for c in range(copies)])
            if n
            else g.record_ids,
            np.concatenate(snrs),
        )
    meta = dict(dataset.meta, augment={"copies": copies, "snr_range": list(snr_range), "seed": seed})
    return dataset.with_groups(groups, augmented=True, meta=meta)


# --- persistence ---------------------------------------------------------------


def _iq_filename(device: int, sf: int) -> str:
    return f"iq_dev{device:03d}_sf{sf}.bin"


def _interleave(iq: np.ndarray) -> bytes:
    out = np.empty(iq.shape + (2,), dtype="<f4")
    out[..., 0] = iq.real
    out[..., 1] = iq.imag
    return out.tobytes()


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``manifest.json`` plus one interleaved-float32 IQ file per (device, sf)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {directory}: {exc}") from exc
    files, index = {}, []
    for sf in dataset.sfs:
        g = dataset.groups[sf]
        length = g.iq.shape[1]
        for device in range(dataset.k_devices):
            rows = np.flatnonzero(g.labels == device)
            if rows.size == 0:
                continue
            name = _iq_filename(device, sf)
            blob = _interleave(g.iq[rows])
            path = directory / name
            try:
                path.write_bytes(blob)
            except OSError as exc:
                raise OSError(f"failed writing {path}: {exc}") from exc
            files[name] = {
                "device": device,
                "sf": sf,
                "n_records": int(rows.size),
                "samples_per_record": int(length),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
            for pos, r in enumerate(rows):
                snr = g.snr_db[r]
                index.append(
                    {
                        "file": name,
                        "position": pos,
                        "row": int(r),
                        "sf": sf,
                        "label": device,
                        "record_id": int(g.record_ids[r]),
                        "snr_db": None if np.isnan(snr) else float(snr),
                    }
                )
    manifest = {
        "format": "rffi-dataset/1",
        "seed": dataset.seed,
        "split": dataset.split,
        "population": dataset.population.to_dict(),
        "profiles": [p.to_dict() for p in dataset.profiles],
        "profile_hashes": [p.digest() for p in dataset.profiles],
        "bandwidth_hz": dataset.bandwidth_hz,
        "sample_rate_hz": dataset.sample_rate_hz,
        "n_preamble_symbols": dataset.n_preamble_symbols,
        "augmented": dataset.augmented,
        "transient": dataset.transient,
        "meta": dataset.meta,
        "files": files,
        "records": index,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def manifest_hash(directory) -> str:
    return hashlib.sha256((Path(directory) / "manifest.json").read_bytes()).hexdigest()


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read dataset manifest {path}: {exc}") from exc
    blobs = {}
    for name, info in manifest["files"].items():
        fpath = directory / name
        try:
            raw = np.frombuffer(fpath.read_bytes(), dtype="<f4")
        except OSError as exc:
            raise OSError(f"cannot read IQ file {fpath}: {exc}") from exc
        iq = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64)
        blobs[name] = iq.reshape(info["n_records"], info["samples_per_record"])

    by_sf: dict[int, list] = {}
    for rec in manifest["records"]:
        by_sf.setdefault(rec["sf"], []).append(rec)
    groups = {}
    for sf, recs in by_sf.items():
        recs.sort(key=lambda r: r["row"])
        iq = np.stack([blobs[r["file"]][r["position"]] for r in recs])
        groups[sf] = SfGroup(
            sf,
            iq,
            np.array([r["label"] for r in recs], dtype=np.int64),
            np.array([r["record_id"] for r in recs], dtype=np.int64),
            np.array([np.nan if r["snr_db"] is None else r["snr_db"] for r in recs]),
        )
    return Dataset(
        PopulationSpec.from_dict(manifest["population"]),
        [DeviceProfile.from_dict(p) for p in manifest["profiles"]],
        manifest["seed"],
        manifest["split"],
        groups,
        manifest["bandwidth_hz"],
        manifest["sample_rate_hz"],
        manifest["n_preamble_symbols"],
        manifest["augmented"],
        manifest["transient"],
        manifest["meta"],
    )
