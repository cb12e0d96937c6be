"""Radar preprocessing: raw chirps to Doppler-time maps, CVDs and network inputs."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor

DOPPLER_BINS = 128
NETWORK_COLUMNS = 128
SHIFT_COLUMNS = 148
MAX_TEMPORAL_OFFSET = SHIFT_COLUMNS - NETWORK_COLUMNS


class ParameterError(ValueError):
    """A transform was given parameters outside its domain."""


class DegenerateInputError(ValueError):
    """Input carries no signal power, so a ratio against it is undefined."""


@dataclass(frozen=True)
class ComplexSeries:
    samples: np.ndarray
    sample_interval: float

    def __post_init__(self):
        if np.asarray(self.samples).size == 0:
            raise ParameterError("series must be non-empty")
        if not self.sample_interval > 0:
            raise ParameterError("sample_interval must be positive")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class RangeTimeMap:
    bins: np.ndarray  # [range_bins, chirps]
    chirp_duration: float

    def __post_init__(self):
        if self.bins.ndim != 2 or 0 in self.bins.shape:
            raise ParameterError(f"range-time map must be a non-empty matrix, got {self.bins.shape}")


@dataclass(frozen=True)
class DopplerTimeMap:
    """Complex spectrogram, rows are Doppler bins with zero Doppler at row 64."""

    spectra: np.ndarray  # [128, T]
    column_interval: float
    centered: bool = True

    def __post_init__(self):
        if self.spectra.ndim != 2 or self.spectra.shape[0] != DOPPLER_BINS:
            raise ParameterError(f"expected {DOPPLER_BINS} Doppler rows, got shape {self.spectra.shape}")

    @property
    def n_columns(self) -> int:
        return self.spectra.shape[1]


@dataclass(frozen=True)
class CVDMap:
    """Cadence-velocity diagram; column 0 is zero cadence, row order follows the source map."""

    magnitudes: np.ndarray  # [128, 128]
    cadence_resolution: float | None = None


def blackman_window(length: int) -> np.ndarray:
    """Symmetric three-term Blackman window."""
    if length < 2:
        raise ParameterError(f"window length must be >= 2, got {length}")
    n = np.arange(length)
    phase = 2.0 * np.pi * n / (length - 1)
    return 0.42 - 0.5 * np.cos(phase) + 0.08 * np.cos(2.0 * phase)


def range_process(raw: np.ndarray, chirp_duration: float = 1e-3) -> RangeTimeMap:
    """FFT along fast time of a dechirped ``[samples_per_chirp, chirps]`` matrix."""
    raw = np.asarray(raw, dtype=np.complex128)
    if raw.ndim != 2 or 0 in raw.shape:
        raise ParameterError(f"raw data must be [samples_per_chirp, chirps], got {raw.shape}")
    return RangeTimeMap(np.fft.fft(raw, axis=0), chirp_duration)


def integrate_range_bins(rt: RangeTimeMap, bin_range: tuple[int, int] | None = None) -> ComplexSeries:
    """Coherent sum over range bins ``lo..hi`` (inclusive) for every chirp."""
    n_bins = rt.bins.shape[0]
    lo, hi = (0, n_bins - 1) if bin_range is None else bin_range
    if hi < lo:
        raise ParameterError(f"empty range-bin selection [{lo}, {hi}]")
    if lo < 0 or hi >= n_bins:
        raise ParameterError(f"range bins [{lo}, {hi}] outside 0..{n_bins - 1}")
    return ComplexSeries(rt.bins[lo : hi + 1].sum(axis=0), rt.chirp_duration)


def stft_column_count(n_samples: int, window_length: int = 64, overlap: int = 48) -> int:
    hop = window_length - overlap
    return (n_samples - window_length) // hop + 1


def stft(
    signal: ComplexSeries,
    window_length: int = 64,
    overlap: int = 48,
    fft_length: int = DOPPLER_BINS,
) -> DopplerTimeMap:
    """Blackman-windowed STFT, zero-padded to ``fft_length`` and Doppler-centred."""
    x = np.asarray(signal.samples, dtype=np.complex128)
    if not 0 <= overlap < window_length:
        raise ParameterError("overlap must lie in [0, window_length)")
    if fft_length < window_length:
        raise ParameterError("fft_length must be at least window_length")
    if len(x) < window_length:
        raise ParameterError(f"signal of {len(x)} samples is shorter than one {window_length}-point window")
    hop = window_length - overlap
    n_cols = stft_column_count(len(x), window_length, overlap)
    frames = np.lib.stride_tricks.sliding_window_view(x, window_length)[::hop][:n_cols]
    spectra = np.fft.fft(frames * blackman_window(window_length), n=fft_length, axis=1)
    spectra = np.fft.fftshift(spectra, axes=1).T
    return DopplerTimeMap(np.ascontiguousarray(spectra), hop * signal.sample_interval, centered=True)


def resample_time(dt: DopplerTimeMap, target_columns: int) -> DopplerTimeMap:
    """Linear interpolation of every Doppler row onto ``target_columns`` evenly spaced times."""
    if target_columns < 2:
        raise ParameterError(f"target_columns must be >= 2, got {target_columns}")
    n = dt.n_columns
    if n < 2:
        raise ParameterError("need at least 2 source columns to interpolate")
    pos = np.linspace(0.0, n - 1, target_columns)
    left = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = pos - left
    src = dt.spectra
    out = src[:, left] * (1.0 - frac) + src[:, left + 1] * frac
    interval = dt.column_interval * (n - 1) / (target_columns - 1)
    return replace(dt, spectra=np.ascontiguousarray(out), column_interval=interval)


def cvd_transform(dt: DopplerTimeMap) -> CVDMap:
    """Magnitude of the DFT along time, one transform per Doppler row."""
    if dt.n_columns != NETWORK_COLUMNS:
        raise ParameterError(f"CVD needs exactly {NETWORK_COLUMNS} columns, got {dt.n_columns}")
    mags = np.abs(np.fft.fft(dt.spectra, axis=1))
    return CVDMap(mags, cadence_resolution=1.0 / (NETWORK_COLUMNS * dt.column_interval))


def circular_doppler_shift(dt: DopplerTimeMap, shift: int) -> DopplerTimeMap:
    """Rotate rows; positive shifts move energy toward higher Doppler rows."""
    return replace(dt, spectra=np.roll(dt.spectra, int(shift), axis=0))


def temporal_crop(dt: DopplerTimeMap, offset: int, width: int = NETWORK_COLUMNS) -> DopplerTimeMap:
    """Columns ``[offset, offset + width)`` of a longer map."""
    max_offset = dt.n_columns - width
    if max_offset < 0:
        raise ParameterError(f"map has {dt.n_columns} columns, fewer than the crop width {width}")
    if not 0 <= offset <= max_offset:
        raise ParameterError(f"offset {offset} outside 0..{max_offset}")
    return replace(dt, spectra=dt.spectra[:, offset : offset + width])


def _normalized(values: np.ndarray) -> np.ndarray:
    peak = np.abs(values).max()
    if peak == 0:
        return values.copy()
    return values / peak


def network_array(rep: DopplerTimeMap | CVDMap) -> np.ndarray:
    """Peak-normalized network input: ``[2,128,128]`` real/imag or ``[1,128,128]`` CVD."""
    if isinstance(rep, CVDMap):
        mags = rep.magnitudes
        if mags.shape != (DOPPLER_BINS, NETWORK_COLUMNS):
            raise ParameterError(f"CVD must be {DOPPLER_BINS}x{NETWORK_COLUMNS}, got {mags.shape}")
        return _normalized(mags)[None].astype(np.float64)
    if isinstance(rep, DopplerTimeMap):
        if rep.spectra.shape != (DOPPLER_BINS, NETWORK_COLUMNS):
            raise ParameterError(f"Doppler-time input must be {DOPPLER_BINS}x{NETWORK_COLUMNS}, got {rep.spectra.shape}")
        z = _normalized(rep.spectra)
        return np.stack([z.real, z.imag]).astype(np.float64)
    raise ParameterError(f"cannot build a network input from {type(rep).__name__}")


def to_network_input(rep: DopplerTimeMap | CVDMap) -> Tensor:
    return Tensor(network_array(rep))


REPRESENTATIONS = ("doppler_time", "cvd")


def represent(dt: DopplerTimeMap, representation: str) -> np.ndarray:
    """Network array for a 128-column map in the requested representation."""
    if representation == "doppler_time":
        return network_array(dt)
    if representation == "cvd":
        return network_array(cvd_transform(dt))
    raise ParameterError(f"unknown representation {representation!r}; expected one of {REPRESENTATIONS}")


def add_noise_snr(x, snr_db: float, seed: int | np.random.Generator | None = None):
    """Add white Gaussian noise so the expected SNR against the mean input power is ``snr_db``.

    Accepts an array or a :class:`Tensor` and returns the same kind. ``snr_db=inf``
    returns the input unchanged.
    """
    as_tensor = isinstance(x, Tensor)
    values = x.data if as_tensor else np.asarray(x, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return x
    power = float(np.mean(values**2))
    if power == 0.0:
        raise DegenerateInputError("signal power is zero; SNR is undefined")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    noisy = values + rng.normal(0.0, sigma, size=values.shape)
    return Tensor(noisy) if as_tensor else noisy


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = np.asarray(noisy) - np.asarray(clean)
    return 10.0 * math.log10(np.mean(np.asarray(clean) ** 2) / np.mean(noise**2))


def doppler_time_from_series(
    series: ComplexSeries, columns: int = NETWORK_COLUMNS, window_length: int = 64, overlap: int = 48
) -> DopplerTimeMap:
    """STFT then resample to a fixed column count."""
    return resample_time(stft(series, window_length, overlap), columns)


def doppler_time_from_raw(raw: np.ndarray, chirp_duration: float, columns: int = NETWORK_COLUMNS,
                          bin_range: tuple[int, int] | None = None) -> DopplerTimeMap:
    """Full chain for a recorded ``[samples_per_chirp, chirps]`` matrix."""
    series = integrate_range_bins(range_process(raw, chirp_duration), bin_range)
    return doppler_time_from_series(series, columns)
