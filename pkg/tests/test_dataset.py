import math
from collections import Counter

import numpy as np
import pytest

from mdrobust import dataset as ds
from mdrobust import dsp

WAVELENGTH = 0.0517
CHIRP = 1e-3


def single(v=0.0, b=0.0, f=0.0, onset=0.0, duration=10.0):
    return ds.SyntheticClassSpec(0, (ds.Scatterer(1.0, v, b, f, 0.0),), onset, duration)


def series_map(spec, n_chirps=4096, seed=0):
    series = ds.synth_generate(spec, WAVELENGTH, 1 / CHIRP, n_chirps, seed)
    return ds.sample_from_series(series, spec.class_id, "x")


# -- synthesis ---------------------------------------------------------------------


def test_stationary_target_null_doppler():
    s = series_map(single())
    power = np.abs(s.map128.spectra) ** 2
    assert np.all(np.argmax(power, axis=0) == 64)
    assert power[60:69].sum() / power.sum() > 0.99


@pytest.mark.parametrize("v", [-1.2, -0.5, 0.6, 1.0, 2.0])
def test_constant_velocity_doppler_bin(v):
    expected = 64 + round(2 * v / WAVELENGTH * CHIRP * 128)
    rows = np.argmax(np.abs(series_map(single(v=v)).map128.spectra), axis=0)
    assert np.all(np.abs(rows - expected) <= 1)


@pytest.mark.parametrize("f", [0.7, 1.0, 2.3])
def test_oscillation_cadence_peak(f):
    # modulation index 4 pi B / wavelength = 1: the first Jacobi-Anger sideband dominates
    b = WAVELENGTH / (4 * np.pi)
    s = series_map(single(b=b, f=f))
    crop = s.crop(0)
    cvd = dsp.cvd_transform(crop).magnitudes
    profile = cvd.sum(axis=0)
    peak = 1 + int(np.argmax(profile[1:64]))
    assert profile[peak] > 0
    assert abs(peak - f * 128 * crop.column_interval) <= 1


def test_synth_deterministic_and_jittered():
    spec = ds.SyntheticClassSpec(0, (ds.Scatterer(1.0, 0.5, 0.1, 1.0),), 0.5, 2.0, {"bulk_velocity": 0.2})
    a = ds.synth_generate(spec, WAVELENGTH, 1000, 1024, 7).samples
    b = ds.synth_generate(spec, WAVELENGTH, 1000, 1024, 7).samples
    c = ds.synth_generate(spec, WAVELENGTH, 1000, 1024, 8).samples
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c)


def test_synth_formula_without_jitter():
    spec = ds.SyntheticClassSpec(0, (ds.Scatterer(2.0, 0.7, 0.03, 1.5, 0.4),), -1.0, 100.0)
    rng = np.random.default_rng(3)
    out = ds.synth_generate(spec, WAVELENGTH, 1000, 512, rng).samples
    t = np.arange(512) / 1000
    r = 0.7 * t + 0.03 * np.sin(2 * np.pi * 1.5 * t + 0.4)
    ref = 2.0 * np.exp(1j * 4 * np.pi * r / WAVELENGTH)
    # each scatterer carries a random constant phase; compare after removing it
    ratio = out / ref
    assert np.allclose(np.abs(out), 2.0, atol=1e-12)
    assert np.allclose(ratio, ratio[0], atol=1e-9)


def test_synth_too_short():
    with pytest.raises(ValueError):
        ds.synth_generate(single(), WAVELENGTH, 1000, ds.MIN_CHIRPS - 1, 0)
    ds.synth_generate(single(), WAVELENGTH, 1000, ds.MIN_CHIRPS, 0)


def test_min_chirps_gives_enough_columns():
    series = ds.synth_generate(single(), WAVELENGTH, 1000, ds.MIN_CHIRPS, 0)
    assert dsp.stft(series).n_columns == 21


def test_spec_validation():
    with pytest.raises(ValueError):
        ds.SyntheticClassSpec(0, (ds.Scatterer(-1.0),), 0.0, 1.0)
    with pytest.raises(ValueError):
        ds.SyntheticClassSpec(0, (ds.Scatterer(1.0, oscillation_rate=-1.0),), 0.0, 1.0)
    with pytest.raises(ValueError):
        ds.SyntheticClassSpec(0, (ds.Scatterer(1.0),), 0.0, 0.0)


@pytest.fixture(scope="module")
def small_dataset():
    specs, radar = ds.load_class_config()
    radar = ds.RadarConfig(radar.carrier_wavelength, radar.chirp_duration, 1024, radar.noise_level)
    return specs, radar, ds.build_synthetic_dataset(specs, 4, 11, radar)


def test_default_config_loads():
    specs, radar = ds.load_class_config()
    assert [s.class_id for s in specs] == list(range(6))
    assert radar.carrier_wavelength == 0.0517 and radar.chirp_duration == 1e-3


def test_build_dataset_counts_and_shapes(small_dataset):
    _, _, samples = small_dataset
    assert len(samples) == 24
    assert Counter(s.label for s in samples) == {c: 4 for c in range(6)}
    for s in samples:
        assert s.input.shape == (2, 128, 128)
        assert s.map128.spectra.shape == (128, 128) and s.map148.spectra.shape == (128, 148)
        assert np.all(np.isfinite(s.input.data))
    assert len({s.source_id for s in samples}) == 24


def test_build_dataset_deterministic(small_dataset):
    specs, radar, samples = small_dataset
    again = ds.build_synthetic_dataset(specs, 4, 11, radar)
    for a, b in zip(samples, again):
        assert a.map148.spectra.tobytes() == b.map148.spectra.tobytes()
        assert a.input.data.tobytes() == b.input.data.tobytes()


def test_build_dataset_rejects_small():
    specs, radar = ds.load_class_config()
    with pytest.raises(ValueError):
        ds.build_synthetic_dataset(specs, 3, 0, radar)


def test_classes_distinct_dominant_rows():
    specs, radar = ds.load_class_config()
    by_id = {s.class_id: s for s in specs}
    rows = {}
    for cid in (0, 5):
        # strip jitter and micro-motion: the strongest scatterer sets the dominant row
        main = max(by_id[cid].scatterers, key=lambda s: s.amplitude)
        spec = ds.SyntheticClassSpec(cid, (ds.Scatterer(main.amplitude, main.bulk_velocity),), 0.0, 10.0)
        m = series_map(spec).map128.spectra
        rows[cid] = int(np.bincount(np.argmax(np.abs(m), axis=0)).argmax())
        assert abs(rows[cid] - (64 + round(2 * main.bulk_velocity / WAVELENGTH * CHIRP * 128))) <= 1
    assert rows[0] != rows[5]


def test_with_representation_cvd(small_dataset):
    _, _, samples = small_dataset
    cvd = ds.with_representation(samples[:3], "cvd")
    for s, c in zip(samples, cvd):
        assert c.input.shape == (1, 128, 128)
        assert c.representation == "cvd" and c.label == s.label
        np.testing.assert_array_equal(c.input.data, dsp.represent(s.crop(0), "cvd"))


def test_sample_label_bounds():
    with pytest.raises(ValueError):
        ds.LabeledSample(None, 6, "x")


# -- splitting ---------------------------------------------------------------------


def test_split_60_balanced():
    labels = np.repeat(np.arange(6), 10)
    tr, va, te = ds.stratified_split(list(range(60)), ds.SplitSpec(seed=0), labels)
    assert (len(tr), len(va), len(te)) == (30, 15, 15)
    for part, share in ((tr, 0.5), (va, 0.25), (te, 0.25)):
        counts = Counter(labels[i] for i in part)
        assert all(abs(counts[c] - 10 * share) < 1 for c in range(6))
        assert all(counts[c] == 5 for c in range(6)) if share == 0.5 else True


def test_split_partition_and_determinism():
    labels = np.random.default_rng(0).integers(0, 6, 300)
    idx = list(range(300))
    a = ds.stratified_split(idx, ds.SplitSpec(seed=4), labels)
    b = ds.stratified_split(idx, ds.SplitSpec(seed=4), labels)
    c = ds.stratified_split(idx, ds.SplitSpec(seed=5), labels)
    assert a == b and a != c
    flat = [i for part in a for i in part]
    assert sorted(flat) == idx and len(set(flat)) == 300


def test_split_counts_largest_remainder():
    counts = ds.split_counts(np.repeat(np.arange(6), 10))
    totals = sum(counts.values())
    assert totals.tolist() == [30, 15, 15]
    for c in counts.values():
        assert c.sum() == 10 and c[0] == 5


def test_split_ratio_tolerance_large():
    labels = np.repeat(np.arange(6), [300, 290, 295, 287, 290, 290])
    counts = ds.split_counts(labels)
    for c, cnt in counts.items():
        n = int(np.sum(labels == c))
        assert np.all(np.abs(cnt - n * np.array([0.5, 0.25, 0.25])) < 1)


def test_split_errors():
    with pytest.raises(ds.SplitError):
        ds.stratified_split(list(range(9)), ds.SplitSpec(), [0] * 6 + [1] * 3)
    with pytest.raises(ds.SplitError):
        ds.SplitSpec(ratios=(0.5, 0.3, 0.3))


def test_batch_iter():
    split = list(range(15))
    assert [len(b) for b in ds.batch_iter(split, 4)] == [4, 4, 4, 3]
    assert [i for b in ds.batch_iter(split, 4) for i in b] == split
    shuffled = [i for b in ds.batch_iter(split, 4, shuffle_seed=3) for i in b]
    assert sorted(shuffled) == split and shuffled != split
    with pytest.raises(ValueError):
        list(ds.batch_iter(split, 0))


# -- ingestion ---------------------------------------------------------------------


META = {"carrier_frequency": 5.8e9, "chirp_duration": 1e-3, "samples_per_chirp": 8, "bandwidth": 4e8}


def test_recording_round_trip(tmp_path, rng):
    raw = rng.normal(size=(8, 30)) + 1j * rng.normal(size=(8, 30))
    path = tmp_path / "rec.dat"
    ds.write_recording(path, raw, META)
    rec = ds.ingest_recording(path)
    assert rec.raw.shape == (8, 30)
    assert rec.raw.tobytes() == raw.tobytes()
    assert rec.metadata["carrier_frequency"] == 5.8e9


def test_recording_malformed_sample_line(tmp_path, rng):
    raw = rng.normal(size=(8, 4)) + 0j
    path = tmp_path / "rec.dat"
    ds.write_recording(path, raw, META)
    lines = path.read_text().splitlines()
    lines[9] = "1.0+garbage"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ds.IngestionError) as err:
        ds.ingest_recording(path)
    assert err.value.line == 10 and "line 10" in str(err.value)


def test_recording_truncated(tmp_path, rng):
    path = tmp_path / "rec.dat"
    ds.write_recording(path, rng.normal(size=(8, 4)) + 0j, META)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ds.IngestionError, match="multiple"):
        ds.ingest_recording(path)
    path.write_text("5.8e9\n0.001\n")
    with pytest.raises(ds.IngestionError) as err:
        ds.ingest_recording(path)
    assert err.value.line == 3


def test_recording_bad_header(tmp_path):
    path = tmp_path / "rec.dat"
    path.write_text("5.8e9\nabc\n8\n4e8\n1+1i\n")
    with pytest.raises(ds.IngestionError) as err:
        ds.ingest_recording(path)
    assert err.value.line == 2


def test_recording_to_sample(tmp_path):
    spec = single(v=0.8)
    slow = ds.synth_generate(spec, WAVELENGTH, 1000, 1024, 0).samples
    raw = np.tile(slow, (4, 1)) * np.array([1, 0, 0, 0])[:, None]  # DC range tone
    path = tmp_path / "rec.dat"
    ds.write_recording(path, raw, dict(META, samples_per_chirp=4))
    s = ds.sample_from_recording(ds.ingest_recording(path), 2, "r")
    rows = np.argmax(np.abs(s.map128.spectra), axis=0)
    assert np.all(np.abs(rows - (64 + round(2 * 0.8 / WAVELENGTH * CHIRP * 128))) <= 1)


def test_adapter_default_file():
    cfg = ds.AdapterConfig.from_json()
    assert cfg.header_line_count == 4 and cfg.header_fields[2] == "samples_per_chirp"


# -- persistence -------------------------------------------------------------------


def test_dataset_save_load(tmp_path, small_dataset):
    _, _, samples = small_dataset
    tr, va, te = ds.stratified_split(samples, ds.SplitSpec(seed=1))
    splits = {s.source_id: name for name, part in (("train", tr), ("val", va), ("test", te)) for s in part}
    manifest = ds.save_dataset(tmp_path, samples, splits, {"seed": 11})
    assert len(manifest["samples"]) == 24 and manifest["config_hash"]
    _, loaded = ds.load_dataset(tmp_path)
    assert {k: len(v) for k, v in loaded.items()} == {"train": len(tr), "val": len(va), "test": len(te)}
    by_id = {s.source_id: s for s in samples}
    for part in loaded.values():
        for s in part:
            assert s.input.data.tobytes() == by_id[s.source_id].input.data.tobytes()
            assert s.label == by_id[s.source_id].label


def test_config_hash_stable():
    assert ds.config_hash({"a": 1, "b": (1, 2)}) == ds.config_hash({"b": [1, 2], "a": 1})
    assert ds.config_hash({"a": 1}) != ds.config_hash({"a": 2})
    assert len(ds.config_hash(ds.SplitSpec())) == 16
    assert math.isfinite(len(ds.config_hash(ds.RadarConfig())))
