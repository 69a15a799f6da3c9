"""Per-device transmitter impairments and reproducible device populations.

Each device distorts the ideal preamble through a fixed chain:
power-on ramp, IQ imbalance, DC offset, Rapp power amplifier, phase noise
and carrier frequency offset (in that order).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from rffi.waveform import ComplexSignal


@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    cfo_hz: float = 0.0
    iq_gain_imbalance_db: float = 0.0
    iq_phase_imbalance_deg: float = 0.0
    dc_offset: complex = 0j
    pa_smoothness: float = 2.0
    pa_saturation: float = float("inf")
    phase_noise_linewidth_hz: float = 0.0
    transient_tau_s: float = 0.0
    manufacturer_group: int = 0

    def __post_init__(self):
        if not self.pa_saturation > 0:
            raise ValueError("pa_saturation must be > 0")
        if not self.pa_smoothness > 0:
            raise ValueError("pa_smoothness must be > 0")
        if self.transient_tau_s < 0:
            raise ValueError("transient_tau_s must be >= 0")
        if self.phase_noise_linewidth_hz < 0:
            raise ValueError("phase_noise_linewidth_hz must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dc_offset"] = [self.dc_offset.real, self.dc_offset.imag]
        # JSON has no infinity literal
        if np.isinf(self.pa_saturation):
            d["pa_saturation"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        d = dict(d)
        re, im = d["dc_offset"]
        d["dc_offset"] = complex(re, im)
        if d.get("pa_saturation") is None:
            d["pa_saturation"] = float("inf")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Parameters drawn per device, in draw order. dc_offset draws real and
# imaginary parts separately from the same range.
DRAWN_PARAMETERS = (
    "cfo_hz",
    "iq_gain_imbalance_db",
    "iq_phase_imbalance_deg",
    "dc_offset",
    "pa_smoothness",
    "pa_saturation",
    "phase_noise_linewidth_hz",
    "transient_tau_s",
)


def default_ranges() -> dict[str, tuple[float, float]]:
    return {
        "cfo_hz": (-50.0, 50.0),
        "iq_gain_imbalance_db": (-1.5, 1.5),
        "iq_phase_imbalance_deg": (-8.0, 8.0),
        "dc_offset": (-0.1, 0.1),
        "pa_smoothness": (1.0, 3.0),
        "pa_saturation": (0.7, 1.5),
        "phase_noise_linewidth_hz": (5.0, 40.0),
        "transient_tau_s": (20e-6, 400e-6),
    }


@dataclass(frozen=True)
class PopulationSpec:
    k_devices: int = 10
    ranges: dict = field(default_factory=default_ranges)
    n_groups: int = 2
    group_offset_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_devices < 2:
            raise ValueError(f"need at least 2 devices, got {self.k_devices}")
        if not 1 <= self.n_groups <= self.k_devices:
            raise ValueError("n_groups must be in [1, k_devices]")
        if self.group_offset_scale < 0:
            raise ValueError("group_offset_scale must be >= 0")
        missing = set(DRAWN_PARAMETERS) - set(self.ranges)
        if missing:
            raise ValueError(f"missing draw ranges for {sorted(missing)}")
        for name, (lo, hi) in self.ranges.items():
            if hi < lo:
                raise ValueError(f"range for {name} has high < low")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        d = dict(d)
        d["ranges"] = {k: tuple(v) for k, v in d["ranges"].items()}
        return cls(**d)


def group_of(device_id: int, k_devices: int, n_groups: int) -> int:
    """Contiguous assignment: K=10, 2 groups -> {0..4}, {5..9}."""
    return device_id * n_groups // k_devices


def draw_profiles(spec: PopulationSpec) -> list[DeviceProfile]:
    """Draw K device profiles deterministically from ``spec.seed``.

    Every parameter is ``center + half_width * (s * u_group + u_device) / (1 + s)``
    with ``u ~ U(-1, 1)`` and ``s = group_offset_scale``, so devices of one
    manufacturer group cluster around a shared mean and all values stay
    inside the configured range.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.group_offset_scale
    n_draws = len(DRAWN_PARAMETERS) + 1  # dc_offset takes two
    group_u = rng.uniform(-1.0, 1.0, size=(spec.n_groups, n_draws))
    device_u = rng.uniform(-1.0, 1.0, size=(spec.k_devices, n_draws))

    profiles = []
    for i in range(spec.k_devices):
        g = group_of(i, spec.k_devices, spec.n_groups)
        u = (s * group_u[g] + device_u[i]) / (1.0 + s)
        values = {}
        col = 0
        for name in DRAWN_PARAMETERS:
            lo, hi = spec.ranges[name]
            center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            if name == "dc_offset":
                values[name] = complex(center + half * u[col], center + half * u[col + 1])
                col += 2
            else:
                values[name] = float(center + half * u[col])
                col += 1
        profiles.append(DeviceProfile(device_id=i, manufacturer_group=g, **values))
    return profiles


def identity_profile(device_id: int = 0) -> DeviceProfile:
    return DeviceProfile(device_id=device_id)


def power_on_ramp(n: int, sample_rate_hz: float, tau_s: float) -> np.ndarray:
    if tau_s <= 0:
        return np.ones(n)
    t = np.arange(n) / sample_rate_hz
    return 1.0 - np.exp(-t / tau_s)


def iq_imbalance(x: np.ndarray, gain_db: float, phase_deg: float) -> np.ndarray:
    # I' = I, Q' = g (Q cos(phi) - I sin(phi))
    g = 10.0 ** (gain_db / 20.0)
    phi = np.deg2rad(phase_deg)
    i, q = x.real, x.imag
    return i + 1j * (g * (q * np.cos(phi) - i * np.sin(phi)))


def rapp_pa(x: np.ndarray, saturation: float, smoothness: float) -> np.ndarray:
    """Memoryless Rapp AM/AM compression; phase untouched."""
    if np.isinf(saturation):
        return x.copy()
    a = np.abs(x)
    p2 = 2.0 * smoothness
    gain = 1.0 / (1.0 + (a / saturation) ** p2) ** (1.0 / p2)
    return x * gain


def phase_noise(n: int, sample_rate_hz: float, linewidth_hz: float, rng) -> np.ndarray:
    """Wiener phase process starting at zero; increment variance 2*pi*lw*Ts."""
    if linewidth_hz <= 0:
        return np.zeros(n)
    sigma = np.sqrt(2.0 * np.pi * linewidth_hz / sample_rate_hz)
    steps = rng.standard_normal(n - 1) * sigma
    return np.concatenate(([0.0], np.cumsum(steps)))


def cfo_rotation(n: int, sample_rate_hz: float, cfo_hz: float) -> np.ndarray:
    return np.exp(2j * np.pi * cfo_hz * np.arange(n) / sample_rate_hz)


def apply_impairments(
    signal: ComplexSignal,
    profile: DeviceProfile,
    rng: np.random.Generator | None = None,
    transient_samples: int = 0,
) -> ComplexSignal:
    """Distort ``signal`` as transmitted by ``profile``'s device.

    ``transient_samples`` marks how many leading samples (normally the first
    chirp) carry the power-on amplitude ramp; 0 disables it. ``rng`` feeds
    the phase-noise walk and may be omitted when the linewidth is zero.
    """
    x = signal.samples
    n, fs = x.size, signal.sample_rate_hz
    y = x.copy()

    if transient_samples > 0 and profile.transient_tau_s > 0:
        m = min(transient_samples, n)
        y[:m] = y[:m] * power_on_ramp(m, fs, profile.transient_tau_s)

    y = iq_imbalance(y, profile.iq_gain_imbalance_db, profile.iq_phase_imbalance_deg)
    y = y + profile.dc_offset
    y = rapp_pa(y, profile.pa_saturation, profile.pa_smoothness)

    if profile.phase_noise_linewidth_hz > 0:
        if rng is None:
            raise ValueError("phase noise requires an rng stream")
        y = y * np.exp(1j * phase_noise(n, fs, profile.phase_noise_linewidth_hz, rng))

    if profile.cfo_hz != 0:
        y = y * cfo_rotation(n, fs, profile.cfo_hz)
    return signal.with_samples(y)


def profiles_to_json(profiles: list[DeviceProfile]) -> str:
    return json.dumps([p.to_dict() for p in profiles], indent=2, sort_keys=True)


def profiles_from_json(text: str) -> list[DeviceProfile]:
    return [DeviceProfile.from_dict(d) for d in json.loads(text)]


def without(profile: DeviceProfile, *names: str) -> DeviceProfile:
    """Copy of ``profile`` with the named impairments set to identity."""
    neutral = {
        "cfo_hz": 0.0,
        "iq_gain_imbalance_db": 0.0,
        "iq_phase_imbalance_deg": 0.0,
        "dc_offset": 0j,
        "pa_saturation": float("inf"),
        "phase_noise_linewidth_hz": 0.0,
        "transient_tau_s": 0.0,
    }
    return replace(profile, **{k: neutral[k] for k in names})
