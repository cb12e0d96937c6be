"""Synthetic micro-Doppler data, recording ingestion, stratified splits and batching."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import containers, dsp
from .autodiff import Tensor

N_CLASSES = 6
CLASS_NAMES = ("walking", "sitting_down", "standing_up", "object_pick_up", "drinking", "fall")
MIN_CHIRPS = 64 + 20 * 16


class SplitError(ValueError):
    pass


class IngestionError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Scatterer:
    amplitude: float
    bulk_velocity: float = 0.0
    oscillation_amplitude: float = 0.0
    oscillation_rate: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class SyntheticClassSpec:
    class_id: int
    scatterers: tuple[Scatterer, ...]
    onset: float
    duration: float
    jitter: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("envelope duration must be positive")
        for s in self.scatterers:
            if s.amplitude <= 0 or s.oscillation_rate < 0:
                raise ValueError(f"invalid scatterer {s}")


@dataclass(frozen=True)
class RadarConfig:
    carrier_wavelength: float = 0.0517
    chirp_duration: float = 1e-3
    n_chirps: int = 4096
    noise_level: float = 0.02


@dataclass(frozen=True)
class LabeledSample:
    """A network-ready input with its label and the maps it was cut from."""

    input: Tensor
    label: int
    source_id: str
    shift_variant: int | None = None
    map128: dsp.DopplerTimeMap | None = None
    map148: dsp.DopplerTimeMap | None = None
    representation: str = "doppler_time"

    def __post_init__(self):
        if not 0 <= self.label < N_CLASSES:
            raise ValueError(f"label {self.label} outside 0..{N_CLASSES - 1}")

    def crop(self, offset: int) -> dsp.DopplerTimeMap:
        if self.map148 is None:
            raise ValueError(f"sample {self.source_id} carries no 148-column map")
        return dsp.temporal_crop(self.map148, offset)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.5, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        if not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-12):
            raise SplitError(f"split ratios must sum to 1, got {self.ratios}")


@dataclass(frozen=True)
class AdapterConfig:
    header_line_count: int = 4
    header_fields: tuple[str, ...] = ("carrier_frequency", "chirp_duration", "samples_per_chirp", "bandwidth")
    sample_format: str = "i_suffix"

    @classmethod
    def from_json(cls, path=None) -> "AdapterConfig":
        if path is None:
            text = resources.files("mdrobust.data").joinpath("adapter_default.json").read_text()
        else:
            text = Path(path).read_text()
        raw = json.loads(text)
        return cls(int(raw["header_line_count"]), tuple(raw["header_fields"]), raw.get("sample_format", "i_suffix"))


# -- configuration ---------------------------------------------------------------


def load_class_config(path=None) -> tuple[list[SyntheticClassSpec], RadarConfig]:
    """Read a synthetic-class config; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("mdrobust.data").joinpath("synthetic_classes_v1.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    jitter = raw.get("jitter", {})
    specs = []
    for entry in raw["classes"]:
        env = entry["envelope"]
        specs.append(
            SyntheticClassSpec(
                class_id=int(entry["class_id"]),
                scatterers=tuple(sc for s in entry["scatterers"] for sc in _expand_segment(s)),
                onset=float(env["onset"]),
                duration=float(env["duration"]),
                jitter=dict(entry.get("jitter", jitter)),
                name=entry.get("name", ""),
            )
        )
    if sorted(s.class_id for s in specs) != list(range(N_CLASSES)):
        raise ValueError(f"config must define class ids 0..{N_CLASSES - 1}")
    radar = RadarConfig(**raw.get("radar", {}))
    return sorted(specs, key=lambda s: s.class_id), radar


def _expand_segment(entry: dict) -> list[Scatterer]:
    """A ``points: n`` entry stands for a limb: n scatterers whose swing grows linearly toward the tip."""
    entry = dict(entry)
    n = int(entry.pop("points", 1))
    if n < 1:
        raise ValueError("points must be >= 1")
    base = Scatterer(**entry)
    return [replace(base, oscillation_amplitude=base.oscillation_amplitude * k / n) for k in range(1, n + 1)]


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


# -- synthesis ---------------------------------------------------------------------


def _jittered(value: float, rel_std: float, rng: np.random.Generator) -> float:
    if rel_std <= 0:
        return value
    return value * (1.0 + rel_std * rng.standard_normal())


def _envelope(t: np.ndarray, onset: float, duration: float) -> np.ndarray:
    taper = min(0.15, duration / 4.0)
    rise = np.clip((t - onset) / taper, 0.0, 1.0)
    fall = np.clip((onset + duration - t) / taper, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * np.minimum(rise, fall))


def synth_generate(
    spec: SyntheticClassSpec,
    carrier_wavelength: float,
    chirp_rate: float,
    n_chirps: int,
    seed: int | np.random.Generator,
    noise_level: float = 0.0,
) -> dsp.ComplexSeries:
    """Slow-time return of a set of kinematic point scatterers.

    Each scatterer follows ``r(t) = v t + B sin(2 pi f t + phi)`` and contributes
    ``A exp(j 4 pi r(t) / wavelength)``; the sum is gated by a raised-cosine
    activity envelope. Parameters are perturbed per call by the class's relative
    jitter. A positive bulk velocity (receding) maps to positive Doppler.
    """
    if n_chirps < MIN_CHIRPS:
        raise ValueError(f"n_chirps must be >= {MIN_CHIRPS}, got {n_chirps}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    jit = spec.jitter
    t = np.arange(n_chirps) / chirp_rate
    onset = _jittered(spec.onset, jit.get("onset", 0.0), rng)
    duration = max(_jittered(spec.duration, jit.get("duration", 0.0), rng), 1e-3)
    k = 4.0 * np.pi / carrier_wavelength
    signal = np.zeros(n_chirps, dtype=np.complex128)
    for s in spec.scatterers:
        amp = abs(_jittered(s.amplitude, jit.get("amplitude", 0.0), rng))
        v = _jittered(s.bulk_velocity, jit.get("bulk_velocity", 0.0), rng)
        b = _jittered(s.oscillation_amplitude, jit.get("oscillation_amplitude", 0.0), rng)
        f = abs(_jittered(s.oscillation_rate, jit.get("oscillation_rate", 0.0), rng))
        phi = s.phase + 2.0 * np.pi * jit.get("phase", 0.0) * rng.standard_normal()
        r = v * t + b * np.sin(2.0 * np.pi * f * t + phi)
        signal += amp * np.exp(1j * (k * r + 2.0 * np.pi * rng.random()))
    signal *= _envelope(t, onset, duration)
    if noise_level > 0:
        signal += noise_level * (rng.standard_normal(n_chirps) + 1j * rng.standard_normal(n_chirps)) / np.sqrt(2)
    return dsp.ComplexSeries(signal, 1.0 / chirp_rate)


def sample_from_series(
    series: dsp.ComplexSeries, label: int, source_id: str, representation: str = "doppler_time"
) -> LabeledSample:
    stft_map = dsp.stft(series)
    map128 = dsp.resample_time(stft_map, dsp.NETWORK_COLUMNS)
    map148 = dsp.resample_time(stft_map, dsp.SHIFT_COLUMNS)
    x = dsp.represent(dsp.temporal_crop(map148, 0), representation)
    return LabeledSample(Tensor(x), label, source_id, 0, map128, map148, representation)


def build_synthetic_dataset(
    class_specs: Sequence[SyntheticClassSpec],
    per_class: int,
    seed: int,
    radar: RadarConfig | None = None,
    representation: str = "doppler_time",
) -> list[LabeledSample]:
    """``per_class`` recordings for each of the six classes, ordered by class then index."""
    if per_class < 4:
        raise ValueError("per_class must be >= 4 so each split gets every class")
    if len(class_specs) != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} class specs, got {len(class_specs)}")
    radar = radar or RadarConfig()
    out = []
    for spec in sorted(class_specs, key=lambda s: s.class_id):
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, spec.class_id, i]))
            series = synth_generate(
                spec, radar.carrier_wavelength, 1.0 / radar.chirp_duration, radar.n_chirps, rng, radar.noise_level
            )
            out.append(sample_from_series(series, spec.class_id, f"c{spec.class_id}_{i:04d}", representation))
    return out


def with_representation(samples: Sequence[LabeledSample], representation: str) -> list[LabeledSample]:
    """Rebuild inputs from the canonical offset-0 crop in another representation."""
    out = []
    for s in samples:
        if s.representation == representation:
            out.append(s)
            continue
        x = dsp.represent(s.crop(0), representation)
        out.append(replace(s, input=Tensor(x), representation=representation))
    return out


def stack_inputs(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.input.data for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


# -- splitting and batching --------------------------------------------------------


def _allocate(n: int, ratios: Sequence[float], gaps: np.ndarray) -> np.ndarray:
    exact = n * np.asarray(ratios, dtype=float)
    counts = np.floor(exact + 1e-9).astype(int)
    remainder = exact - counts
    extra = n - counts.sum()
    order = sorted(range(len(ratios)), key=lambda j: (-round(remainder[j], 9), -round(gaps[j] + remainder[j], 9), j))
    for j in order[:extra]:
        counts[j] += 1
    return counts


def split_counts(labels: Sequence[int], ratios=(0.5, 0.25, 0.25)) -> dict[int, np.ndarray]:
    """Per-class split sizes by largest remainder; ties go to the split furthest behind its running target."""
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    gaps = np.zeros(len(ratios))
    out = {}
    for c in classes:
        n = int(np.sum(labels == c))
        counts = _allocate(n, ratios, gaps)
        gaps += n * np.asarray(ratios) - counts
        out[c] = counts
    return out


def stratified_split(samples: Sequence, spec: SplitSpec = SplitSpec(), labels: Sequence[int] | None = None):
    """Seeded per-class shuffle then partition into (train, val, test).

    ``labels`` defaults to ``sample.label`` for each element, so plain label
    lists can be split by passing them twice.
    """
    labels = np.asarray([s.label for s in samples] if labels is None else labels)
    counts = split_counts(labels, spec.ratios)
    rng = np.random.default_rng(spec.seed)
    parts: list[list[int]] = [[], [], []]
    for c, cnt in counts.items():
        if cnt.sum() < 4:
            raise SplitError(f"class {c} has {cnt.sum()} samples; at least 4 are required")
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        start = 0
        for j, k in enumerate(cnt):
            parts[j].extend(idx[start : start + k].tolist())
            start += k
    parts = [sorted(p) for p in parts]
    return tuple([samples[i] for i in p] for p in parts)


def batch_iter(split: Sequence, batch_size: int, shuffle_seed: int | None = None) -> Iterator[list]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(split))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(split))
    for start in range(0, len(split), batch_size):
        yield [split[i] for i in order[start : start + batch_size]]


# -- ingestion ---------------------------------------------------------------------


@dataclass
class Recording:
    raw: np.ndarray  # [samples_per_chirp, chirps]
    metadata: dict


def _parse_complex(token: str, fmt: str) -> complex:
    token = token.strip()
    if fmt == "i_suffix":
        token = token.replace("i", "j")
    elif fmt != "j_suffix":
        raise IngestionError(f"unknown sample format {fmt!r}")
    return complex(token.replace(" ", ""))


def ingest_recording(path, adapter: AdapterConfig | None = None) -> Recording:
    """Parse a header-plus-samples text recording into a fast-time by slow-time matrix."""
    adapter = adapter or AdapterConfig.from_json()
    lines = Path(path).read_text().splitlines()
    if len(lines) < adapter.header_line_count:
        raise IngestionError(f"file has {len(lines)} lines, header needs {adapter.header_line_count}", len(lines) + 1)
    meta: dict = {}
    for i, name in enumerate(adapter.header_fields[: adapter.header_line_count]):
        try:
            meta[name] = float(lines[i])
        except ValueError:
            raise IngestionError(f"malformed header field {name!r}: {lines[i]!r}", i + 1) from None
    spc = int(meta.get("samples_per_chirp", 0))
    if spc <= 0:
        raise IngestionError("samples_per_chirp must be positive", adapter.header_fields.index("samples_per_chirp") + 1)
    values = []
    for lineno, line in enumerate(lines[adapter.header_line_count :], start=adapter.header_line_count + 1):
        if not line.strip():
            continue
        try:
            values.append(_parse_complex(line, adapter.sample_format))
        except ValueError:
            raise IngestionError(f"malformed complex sample {line!r}", lineno) from None
    if not values:
        raise IngestionError("no samples after header", adapter.header_line_count + 1)
    if len(values) % spc:
        raise IngestionError(
            f"{len(values)} samples is not a multiple of samples_per_chirp={spc}", len(lines)
        )
    raw = np.asarray(values, dtype=np.complex128).reshape(-1, spc).T
    meta["path"] = str(path)
    return Recording(np.ascontiguousarray(raw), meta)


def write_recording(path, raw: np.ndarray, metadata: dict, adapter: AdapterConfig | None = None) -> None:
    """Inverse of :func:`ingest_recording`, used for round trips and fixtures."""
    adapter = adapter or AdapterConfig.from_json()
    out = [repr(float(metadata[name])) for name in adapter.header_fields[: adapter.header_line_count]]
    suffix = "i" if adapter.sample_format == "i_suffix" else "j"
    for z in np.asarray(raw, dtype=np.complex128).T.reshape(-1).tolist():
        out.append(f"{z.real!r}{'+' if math.copysign(1.0, z.imag) > 0 else '-'}{abs(z.imag)!r}{suffix}")
    Path(path).write_text("\n".join(out) + "\n")


def sample_from_recording(rec: Recording, label: int, source_id: str, representation: str = "doppler_time",
                          bin_range: tuple[int, int] | None = None) -> LabeledSample:
    chirp = float(rec.metadata.get("chirp_duration", 1e-3))
    series = dsp.integrate_range_bins(dsp.range_process(rec.raw, chirp), bin_range)
    return sample_from_series(series, label, source_id, representation)


# -- persistence -------------------------------------------------------------------


def save_dataset(directory, samples: Sequence[LabeledSample], splits: dict[str, str], meta: dict) -> dict:
    """Write map containers plus a JSON manifest; returns the manifest."""
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        rel148 = f"samples/{s.source_id}_148.mdar"
        rel128 = f"samples/{s.source_id}_128.mdar"
        containers.save(directory / rel148, s.map148.spectra)
        containers.save(directory / rel128, s.map128.spectra)
        entries.append({
            "id": s.source_id,
            "label": s.label,
            "split": splits.get(s.source_id, "unassigned"),
            "map148": rel148,
            "map128": rel128,
            "column_interval_148": s.map148.column_interval,
            "column_interval_128": s.map128.column_interval,
        })
    manifest = dict(meta)
    manifest["samples"] = entries
    manifest["config_hash"] = meta.get("config_hash") or config_hash(meta)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_dataset(directory, representation: str = "doppler_time"):
    """Read a saved dataset; returns ``(manifest, {split_name: [LabeledSample, ...]})``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    splits: dict[str, list[LabeledSample]] = {}
    for e in manifest["samples"]:
        m148 = dsp.DopplerTimeMap(containers.load(directory / e["map148"]), e["column_interval_148"])
        m128 = dsp.DopplerTimeMap(containers.load(directory / e["map128"]), e["column_interval_128"])
        x = dsp.represent(dsp.temporal_crop(m148, 0), representation)
        s = LabeledSample(Tensor(x), int(e["label"]), e["id"], 0, m128, m148, representation)
        splits.setdefault(e["split"], []).append(s)
    return manifest, splits
