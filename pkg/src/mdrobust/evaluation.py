"""Robustness metrics and report assembly.

Everything here is read-only over models and samples. Sweeps store raw
logits; softmax views are derived on demand.
"""
from __future__ import annotations

import csv
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dsp
from .autodiff import softmax
from .autodiff.tensor import ContractError
from .dataset import CLASS_NAMES, N_CLASSES, LabeledSample, stack_inputs

TEMPORAL_OFFSETS = tuple(range(0, dsp.MAX_TEMPORAL_OFFSET + 1))
DOPPLER_OFFSETS = tuple(range(-10, 11))
SCHEME_COLUMNS = ("S", "A", "T", "A+T")
EVAL_METADATA = {
    "input_normalization": "per-sample peak magnitude",
    "variance": "population (divisor N) over offsets",
    "activation": "pre-softmax logits",
    "standard_sample": "offset-0 crop of the 148-column map",
    "noise_at_evaluation": False,
}


def _representation(model) -> str:
    return "cvd" if model.input_shape[0] == 1 else "doppler_time"


def accuracy(model, samples: Sequence[LabeledSample], batch_size: int = 32) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if not samples:
        raise ValueError("accuracy of an empty sample set is undefined")
    x, y = stack_inputs(samples)
    pred = model.predict_logits(x, batch_size).argmax(axis=1)
    return float(np.mean(pred == y))


@dataclass(frozen=True)
class AccuracyTriple:
    standard: float
    pgd: float
    temp_shift_worst: float
    model_id: str = ""

    def __post_init__(self):
        for v in (self.standard, self.pgd, self.temp_shift_worst):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")


@dataclass
class ShiftSweep:
    axis: str
    offsets: list[int]
    logits: np.ndarray  # [n_samples, n_offsets, n_classes]
    labels: np.ndarray
    sample_ids: list[str]
    model_id: str = ""

    def __post_init__(self):
        lo, hi = (0, dsp.MAX_TEMPORAL_OFFSET) if self.axis == "temporal" else (-10, 10)
        if self.axis not in ("temporal", "doppler"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if any(not lo <= o <= hi for o in self.offsets):
            raise ValueError(f"{self.axis} offsets must lie in [{lo}, {hi}]")

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=2)

    @property
    def confidences(self) -> np.ndarray:
        return softmax(self.logits)

    def per_class_accuracy(self) -> np.ndarray:
        """``[n_offsets, n_classes]``; NaN for classes absent from the samples."""
        correct = self.predictions == self.labels[:, None]
        out = np.full((len(self.offsets), N_CLASSES), np.nan)
        for c in range(N_CLASSES):
            mask = self.labels == c
            if mask.any():
                out[:, c] = correct[mask].mean(axis=0)
        return out

    def accuracy_at(self, offset: int) -> float:
        j = self.offsets.index(offset)
        return float(np.mean(self.predictions[:, j] == self.labels))

    def worst_case_accuracy(self) -> float:
        return float(np.mean(np.all(self.predictions == self.labels[:, None], axis=1)))


def _sweep(model, samples, axis: str, offsets: Sequence[int], make_map, batch_size: int) -> ShiftSweep:
    rep = _representation(model)
    logits = np.empty((len(samples), len(offsets), N_CLASSES))
    for j, off in enumerate(offsets):
        x = np.stack([dsp.represent(make_map(s, off), rep) for s in samples])
        logits[:, j] = model.predict_logits(x, batch_size)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return ShiftSweep(axis, list(offsets), logits, labels, [s.source_id for s in samples])


def temporal_sweep(model, samples: Sequence[LabeledSample], offsets: Sequence[int] = TEMPORAL_OFFSETS,
                   batch_size: int = 32, model_id: str = "") -> ShiftSweep:
    """Predictions on 128-column crops of each sample's 148-column map."""
    for s in samples:
        if s.map148 is None:
            raise ContractError(f"sample {s.source_id} has no 148-column map")
    sweep = _sweep(model, samples, "temporal", offsets, lambda s, o: s.crop(o), batch_size)
    sweep.model_id = model_id
    return sweep


def doppler_sweep(model, samples: Sequence[LabeledSample], offsets: Sequence[int] = DOPPLER_OFFSETS,
                  batch_size: int = 32, model_id: str = "") -> ShiftSweep:
    """Predictions under circular Doppler shifts of the canonical crop (applied before any CVD)."""
    sweep = _sweep(model, samples, "doppler", offsets,
                   lambda s, o: dsp.circular_doppler_shift(s.crop(0), o), batch_size)
    sweep.model_id = model_id
    return sweep


def worst_case_temporal_accuracy(model, samples: Sequence[LabeledSample],
                                 offsets: Sequence[int] = TEMPORAL_OFFSETS, batch_size: int = 32) -> float:
    """A sample counts only if it is classified correctly at every offset."""
    return temporal_sweep(model, samples, offsets, batch_size).worst_case_accuracy()


@dataclass
class VarianceTable:
    """Mean per-class activation variance; ``values[c] = (t_total, t_gt, d_total, d_gt)``."""

    values: np.ndarray  # [n_classes, 4]
    activation: str = "logits"
    model_id: str = ""

    COLUMNS = ("temporal_total", "temporal_gt", "doppler_total", "doppler_gt")


def _group_variance(sweep: ShiftSweep, use_softmax: bool) -> tuple[np.ndarray, np.ndarray]:
    act = sweep.confidences if use_softmax else sweep.logits
    var = act.var(axis=1)  # population variance over offsets, [n_samples, n_classes]
    total = var.mean(axis=0)
    gt = np.array([var[sweep.labels == c, c].mean() if np.any(sweep.labels == c) else 0.0
                   for c in range(N_CLASSES)])
    return total, gt


def activation_variance_table(temporal: ShiftSweep, doppler: ShiftSweep, use_softmax: bool = False) -> VarianceTable:
    t_total, t_gt = _group_variance(temporal, use_softmax)
    d_total, d_gt = _group_variance(doppler, use_softmax)
    values = np.stack([t_total, t_gt, d_total, d_gt], axis=1)
    return VarianceTable(values, "softmax" if use_softmax else "logits", temporal.model_id)


# -- reports -----------------------------------------------------------------------


@dataclass
class RobustnessReport:
    model_id: str
    config_hash: str
    architecture: str
    scheme: str
    representation: str
    accuracy: dict
    temporal_accuracy: list  # [n_offsets][n_classes]
    doppler_accuracy: list
    variance: list  # [n_classes][4]
    transfer: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=lambda: dict(EVAL_METADATA))
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "RobustnessReport":
        return cls(**json.loads(text))


def environment_stamp() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine()}


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.6f}"


def assemble_report(model_id: str, config_hash: str, architecture: str, scheme: str, representation: str,
                    triple: AccuracyTriple, temporal: ShiftSweep, doppler: ShiftSweep, variance: VarianceTable,
                    transfer: Mapping[str, float] | None = None) -> RobustnessReport:
    ids = {x for x in (triple.model_id, temporal.model_id, doppler.model_id, variance.model_id) if x}
    if ids - {model_id}:
        raise ContractError(f"metric outputs come from different models: {sorted(ids | {model_id})}")
    nan_to_none = lambda a: [[None if np.isnan(v) else float(v) for v in row] for row in a]  # noqa: E731
    return RobustnessReport(
        model_id=model_id,
        config_hash=config_hash,
        architecture=architecture,
        scheme=scheme,
        representation=representation,
        accuracy={"standard": triple.standard, "pgd": triple.pgd, "temp_shift": triple.temp_shift_worst},
        temporal_accuracy=nan_to_none(temporal.per_class_accuracy()),
        doppler_accuracy=nan_to_none(doppler.per_class_accuracy()),
        variance=[[float(v) for v in row] for row in variance.values],
        transfer=dict(transfer or {}),
        metadata=dict(EVAL_METADATA, variance_activation=variance.activation),
        environment=environment_stamp(),
    )


def build_report(report: RobustnessReport, out_dir, temporal: ShiftSweep | None = None,
                 doppler: ShiftSweep | None = None) -> dict[str, Path]:
    """Write the JSON report and its per-model CSV tables; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report.model_id
    paths = {"json": out_dir / f"{stem}_report.json"}
    paths["json"].write_text(report.to_json())

    paths["accuracy"] = out_dir / f"{stem}_accuracy.csv"
    with open(paths["accuracy"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "architecture", "scheme", "representation", "standard", "pgd", "temp_shift"])
        a = report.accuracy
        w.writerow([stem, report.architecture, report.scheme, report.representation,
                    _fmt(a["standard"]), _fmt(a["pgd"]), _fmt(a["temp_shift"])])

    paths["variance"] = out_dir / f"{stem}_variance.csv"
    with open(paths["variance"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", *VarianceTable.COLUMNS])
        for name, row in zip(CLASS_NAMES, report.variance):
            w.writerow([name, *(_fmt(v) for v in row)])

    paths["shift_accuracy"] = out_dir / f"{stem}_shift_accuracy.csv"
    with open(paths["shift_accuracy"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "offset", "class", "accuracy"])
        for axis, offsets, table in (("temporal", TEMPORAL_OFFSETS, report.temporal_accuracy),
                                     ("doppler", DOPPLER_OFFSETS, report.doppler_accuracy)):
            for off, row in zip(offsets, table):
                for name, v in zip(CLASS_NAMES, row):
                    w.writerow([axis, off, name, _fmt(v)])

    sweeps = [s for s in (temporal, doppler) if s is not None]
    if sweeps:
        paths["traces"] = out_dir / f"{stem}_traces.csv"
        with open(paths["traces"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "label", "axis", "offset", "class", "logit", "softmax"])
            for sw in sweeps:
                conf = sw.confidences
                for i, sid in enumerate(sw.sample_ids):
                    for j, off in enumerate(sw.offsets):
                        for c, name in enumerate(CLASS_NAMES):
                            w.writerow([sid, int(sw.labels[i]), sw.axis, off, name,
                                        f"{sw.logits[i, j, c]:.6f}", f"{conf[i, j, c]:.6f}"])
    return paths


def write_accuracy_table(reports: Sequence[RobustnessReport], path) -> None:
    """One row per model: standard, PGD and worst-case temporal accuracy."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture", "training", "representation", "standard", "pgd", "temp_shift"])
        for r in sorted(reports, key=lambda r: (r.representation, r.architecture, SCHEME_COLUMNS.index(r.scheme))):
            a = r.accuracy
            w.writerow([r.architecture, r.scheme, r.representation,
                        _fmt(a["standard"]), _fmt(a["pgd"]), _fmt(a["temp_shift"])])


def write_transfer_table(rows: Mapping[str, Mapping[str, float]], path) -> None:
    """Rows keyed by target training mode; each maps ``no_attack`` and source modes to accuracy."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "no_attack", *SCHEME_COLUMNS])
        for mode in SCHEME_COLUMNS:
            if mode not in rows:
                continue
            row = rows[mode]
            w.writerow([mode, _fmt(row.get("no_attack")), *(_fmt(row.get(src)) for src in SCHEME_COLUMNS)])


def read_transfer_table(path) -> dict[str, dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["mode"]: {k: float(v) for k, v in row.items() if k != "mode" and v != ""} for row in reader}


def write_variance_table(table_a: VarianceTable, table_b: VarianceTable, path) -> None:
    """Per class: temporal variance (A total, A GT, B total, B GT), then Doppler variance in the same order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "temporal_A_total", "temporal_A_gt", "temporal_B_total", "temporal_B_gt",
                    "doppler_A_total", "doppler_A_gt", "doppler_B_total", "doppler_B_gt"])
        a, b = table_a.values, table_b.values
        for c, name in enumerate(CLASS_NAMES):
            w.writerow([name, *(_fmt(v) for v in (a[c, 0], a[c, 1], b[c, 0], b[c, 1],
                                                 a[c, 2], a[c, 3], b[c, 2], b[c, 3]))])
