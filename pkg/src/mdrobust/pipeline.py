"""Plan-driven orchestration of the experiment matrix.

A plan names architectures, training schemes, representations, a dataset
source and one root seed. Each stage writes under a single output directory::

    dataset/                      manifest.json + samples/
    models/{cell}.bin|.json       checkpoint and config sidecar
    models/{cell}.train.json      provenance, loss curves, selected epoch
    models/{cell}_loss.csv
    adversarial/{cell}/           PGD examples crafted on the test split
    reports/models/{cell}_*.csv   per-model report tables
    reports/accuracy_{rep}.csv    aggregate tables

Every stage is keyed by a config hash and skips work whose stamp matches.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from .adversary import AdversarialSet, AttackConfig, generate_adversarial_dataset, transfer_evaluate
from .models import Classifier, ModelConfig, build_model
from .training import TrainConfig, TrainingScheme, train

log = logging.getLogger(__name__)

ARCHITECTURES = ("A", "B")
REPRESENTATIONS = ("doppler_time", "cvd")
CHANNELS = {"doppler_time": 2, "cvd": 1}
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_OUTPUT = "mdrobust_runs"
OUTPUT_ENV = "MDROBUST_OUT"


class PlanError(ValueError):
    """Invalid plan or configuration; the CLI maps it to exit code 2."""


class MissingCellsError(RuntimeError):
    def __init__(self, stage: str, cells):
        self.cells = list(cells)
        super().__init__(f"{stage}: missing {', '.join(self.cells)}")


@dataclass(frozen=True)
class Cell:
    architecture: str
    scheme: str
    representation: str

    @property
    def model_id(self) -> str:
        return f"{self.architecture}_{TrainingScheme.parse(self.scheme).slug}_{self.representation}"


@dataclass
class ExperimentPlan:
    architectures: tuple = ARCHITECTURES
    schemes: tuple = ev.SCHEME_COLUMNS
    representations: tuple = REPRESENTATIONS
    dataset: dict = field(default_factory=lambda: {"source": "synthetic", "config": None, "per_class": 40})
    seed: int = 0
    training: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    eval_batch_size: int = 32
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.architectures = tuple(self.architectures)
        self.schemes = tuple(TrainingScheme.parse(s).value if isinstance(s, str) else s for s in self.schemes)
        self.representations = tuple(self.representations)
        for name, chosen, allowed in (("architectures", self.architectures, ARCHITECTURES),
                                      ("schemes", self.schemes, ev.SCHEME_COLUMNS),
                                      ("representations", self.representations, REPRESENTATIONS)):
            if not chosen:
                raise PlanError(f"plan selects no {name}")
            bad = [c for c in chosen if c not in allowed]
            if bad or len(set(chosen)) != len(chosen):
                raise PlanError(f"{name} must be distinct values from {list(allowed)}, got {list(chosen)}")
        self.dataset = dict(self.dataset)
        source = self.dataset.setdefault("source", "synthetic")
        if source == "synthetic":
            self.dataset.setdefault("config", None)
            self.dataset.setdefault("per_class", 40)
            if int(self.dataset["per_class"]) < 4:
                raise PlanError("dataset.per_class must be >= 4")
        elif source == "ingested":
            if not self.dataset.get("path"):
                raise PlanError("an ingested dataset needs dataset.path")
        else:
            raise PlanError(f"dataset.source must be 'synthetic' or 'ingested', got {source!r}")
        if int(self.workers) < 1:
            raise PlanError("workers must be >= 1")
        if int(self.eval_batch_size) < 1:
            raise PlanError("eval_batch_size must be >= 1")
        try:
            self.train_config("S")
            self.attack_config()
        except (TypeError, ValueError) as exc:
            raise PlanError(f"bad training or attack settings: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise PlanError(f"unknown plan keys: {unknown}")
        if "representation" in d:
            d = dict(d, representations=[d.pop("representation")])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise PlanError(f"plan file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise PlanError("plan file must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("architectures", "schemes", "representations"):
            d[k] = list(d[k])
        return d

    def train_config(self, scheme: str) -> TrainConfig:
        d = dict(self.training)
        attack = dict(d.pop("attack", {}), seed=self.seed)
        return TrainConfig.from_dict(dict(d, scheme=scheme, seed=self.seed, attack=attack))

    def attack_config(self) -> AttackConfig:
        return AttackConfig(**dict(self.attack, seed=self.seed))

    def cells(self, representation: str | None = None) -> list[Cell]:
        reps = self.representations if representation is None else (representation,)
        return [Cell(a, s, r) for r in reps for a in self.architectures for s in self.schemes]


def resolve_output(plan: ExperimentPlan, override=None) -> Path:
    """``--out`` beats the plan's ``output``, which beats ``$MDROBUST_OUT``."""
    out = Path(override or plan.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PlanError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise PlanError(f"output directory {out} is not writable")
    return out


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def _read_stamp(path: Path) -> str | None:
    try:
        return json.loads(path.read_text()).get("config_hash")
    except (FileNotFoundError, json.JSONDecodeError):
        return None


# -- dataset -----------------------------------------------------------------------


def _class_config_text(path) -> str:
    if path is None:
        return resources.files("mdrobust.data").joinpath("synthetic_classes_v1.json").read_text()
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise PlanError(f"class config not found: {path}") from None


def dataset_dir(plan: ExperimentPlan, out: Path) -> Path:
    if plan.dataset["source"] == "ingested":
        return Path(plan.dataset["path"])
    return out / "dataset"


def synthesize(plan: ExperimentPlan, out: Path) -> dict:
    """Generate and split the synthetic dataset unless an identical one is already on disk."""
    if plan.dataset["source"] != "synthetic":
        manifest_path = dataset_dir(plan, out) / "manifest.json"
        if not manifest_path.exists():
            raise PlanError(f"ingested dataset has no manifest: {manifest_path}")
        return json.loads(manifest_path.read_text())
    text = _class_config_text(plan.dataset["config"])
    try:
        class_config = json.loads(text)
        specs, radar = ds.load_class_config(plan.dataset["config"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise PlanError(f"bad class config: {exc!r}") from None
    meta = {
        "source": "synthetic",
        "class_config": class_config,
        "per_class": int(plan.dataset["per_class"]),
        "seed": plan.seed,
        "split": {"ratios": [0.5, 0.25, 0.25], "seed": plan.seed},
    }
    meta["config_hash"] = ds.config_hash(meta)
    directory = dataset_dir(plan, out)
    if _read_stamp(directory / "manifest.json") == meta["config_hash"]:
        log.info("dataset %s up to date", meta["config_hash"])
        return json.loads((directory / "manifest.json").read_text())
    samples = ds.build_synthetic_dataset(specs, meta["per_class"], plan.seed, radar)
    parts = ds.stratified_split(samples, ds.SplitSpec(seed=plan.seed))
    assignment = {s.source_id: name for name, part in zip(SPLIT_NAMES, parts) for s in part}
    return ds.save_dataset(directory, samples, assignment, meta)


def ingest(index_csv, out_dir, seed: int = 0, adapter_path=None, bin_range=None) -> dict:
    """Build a dataset directory from recordings listed in a ``path,label`` CSV."""
    index_csv = Path(index_csv)
    adapter = ds.AdapterConfig.from_json(adapter_path)
    rows = list(csv.DictReader(index_csv.open(newline="")))
    if not rows or not {"path", "label"} <= set(rows[0]):
        raise PlanError(f"{index_csv} needs 'path' and 'label' columns")
    samples = []
    for row in rows:
        label = row["label"].strip()
        label = ds.CLASS_NAMES.index(label) if label in ds.CLASS_NAMES else int(label)
        if not 0 <= label < ds.N_CLASSES:
            raise PlanError(f"label out of range in {index_csv}: {row['label']!r}")
        rec_path = Path(row["path"])
        if not rec_path.is_absolute():
            rec_path = index_csv.parent / rec_path
        rec = ds.ingest_recording(rec_path, adapter)
        samples.append(ds.sample_from_recording(rec, label, rec_path.stem, bin_range=bin_range))
    meta = {
        "source": "ingested",
        "index": [[r["path"], r["label"]] for r in rows],
        "adapter": asdict(adapter),
        "bin_range": list(bin_range) if bin_range else None,
        "split": {"ratios": [0.5, 0.25, 0.25], "seed": seed},
    }
    parts = ds.stratified_split(samples, ds.SplitSpec(seed=seed))
    assignment = {s.source_id: name for name, part in zip(SPLIT_NAMES, parts) for s in part}
    return ds.save_dataset(Path(out_dir), samples, assignment, meta)


def load_splits(plan: ExperimentPlan, out: Path, representation: str) -> tuple[dict, dict]:
    directory = dataset_dir(plan, out)
    if not (directory / "manifest.json").exists():
        raise MissingCellsError("dataset", [str(directory)])
    manifest, splits = ds.load_dataset(directory, representation)
    missing = [n for n in SPLIT_NAMES if not splits.get(n)]
    if missing:
        raise PlanError(f"dataset {directory} has empty splits: {missing}")
    return manifest, splits


# -- training ----------------------------------------------------------------------


def model_path(out: Path, cell: Cell) -> Path:
    return out / "models" / f"{cell.model_id}.bin"


def _model_config(plan: ExperimentPlan, cell: Cell) -> ModelConfig:
    return ModelConfig(cell.architecture, CHANNELS[cell.representation], seed=plan.seed)


def train_hash(plan: ExperimentPlan, cell: Cell, dataset_hash: str) -> str:
    return ds.config_hash({
        "dataset": dataset_hash,
        "model": _model_config(plan, cell).to_dict(),
        "train": plan.train_config(cell.scheme).to_dict(),
    })


def train_cell(plan: ExperimentPlan, cell: Cell, out: Path) -> str:
    """Train one cell unless its checkpoint stamp matches; returns ``trained`` or ``skipped``."""
    manifest, splits = load_splits(plan, out, cell.representation)
    h = train_hash(plan, cell, manifest["config_hash"])
    path = model_path(out, cell)
    stamp = path.with_name(f"{cell.model_id}.train.json")
    if path.exists() and _read_stamp(stamp) == h:
        log.info("%s up to date", cell.model_id)
        return "skipped"
    config = plan.train_config(cell.scheme)
    model = build_model(_model_config(plan, cell))
    log.info("training %s", cell.model_id)
    result = train(model, (splits["train"], splits["val"]), config)
    path.parent.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": h, "dataset_hash": manifest["config_hash"], "cell": asdict(cell),
                  "train_config": config.to_dict(), "selected_epoch": result.selected_epoch}
    model.save(path, provenance)
    with open(path.with_name(f"{cell.model_id}_loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(result.train_loss, result.val_loss), start=1):
            w.writerow([i, f"{a:.10g}", f"{b:.10g}"])
    _write_json(stamp, dict(
        provenance,
        plan=plan.to_dict(),
        train_loss=result.train_loss,
        val_loss=result.val_loss,
        best_val_loss=result.best_val_loss,
        forward_backward_passes=result.forward_backward_passes,
        offsets_seen={str(k): v for k, v in sorted(result.offsets_seen.items())},
        adversarial_examples=result.adversarial_examples,
        max_perturbation=result.max_perturbation,
        wall_time=result.wall_time,
    ))
    return "trained"


def _train_worker(plan_dict: dict, cell: Cell, out: str) -> str:
    return train_cell(ExperimentPlan.from_dict(plan_dict), cell, Path(out))


def train_all(plan: ExperimentPlan, out: Path) -> dict[str, str]:
    """Train every cell, in a process pool when ``plan.workers > 1``.

    A failing cell stops the run after the cells already finished have been
    written, so rerunning resumes where it stopped.
    """
    cells = plan.cells()
    if plan.workers == 1:
        return {c.model_id: train_cell(plan, c, out) for c in cells}
    status = {}
    with ProcessPoolExecutor(max_workers=plan.workers) as pool:
        futures = {c.model_id: pool.submit(_train_worker, plan.to_dict(), c, str(out)) for c in cells}
        for model_id, fut in futures.items():
            status[model_id] = fut.result()
    return status


def load_model(plan: ExperimentPlan, out: Path, cell: Cell) -> Classifier:
    return Classifier.load(model_path(out, cell))


def require_models(plan: ExperimentPlan, out: Path, cells, stage: str) -> None:
    missing = [c.model_id for c in cells if not model_path(out, c).exists()]
    if missing:
        raise MissingCellsError(stage, missing)


# -- attacks -----------------------------------------------------------------------


def adversarial_dir(out: Path, cell: Cell) -> Path:
    return out / "adversarial" / cell.model_id


def attack_cell(plan: ExperimentPlan, cell: Cell, out: Path) -> AdversarialSet:
    """PGD examples against one model on the test split, cached by model and attack hash."""
    directory = adversarial_dir(out, cell)
    config = plan.attack_config()
    model_hash = _read_stamp(model_path(out, cell).with_name(f"{cell.model_id}.train.json"))
    h = ds.config_hash({"model": model_hash, "attack": config.to_dict()})
    if _read_stamp(directory / "stamp.json") == h:
        return AdversarialSet.load(directory)
    _, splits = load_splits(plan, out, cell.representation)
    model = load_model(plan, out, cell)
    log.info("attacking %s", cell.model_id)
    adv = generate_adversarial_dataset(model, splits["test"], config, cell.model_id, plan.eval_batch_size)
    adv.save(directory)
    _write_json(directory / "stamp.json", {"config_hash": h, "attack": config.to_dict()})
    return adv


def attack_all(plan: ExperimentPlan, out: Path) -> dict[str, float]:
    cells = plan.cells()
    require_models(plan, out, cells, "attack")
    return {c.model_id: float(attack_cell(plan, c, out).linf.max()) for c in cells}


# -- evaluation --------------------------------------------------------------------


def report_dir(out: Path) -> Path:
    return out / "reports"


def evaluate_cell(plan: ExperimentPlan, cell: Cell, out: Path) -> ev.RobustnessReport:
    """Clean, PGD and worst-case temporal accuracy plus shift sweeps for one model."""
    model_dir = report_dir(out) / "models"
    json_path = model_dir / f"{cell.model_id}_report.json"
    adv = attack_cell(plan, cell, out)
    h = ds.config_hash({"attack": _read_stamp(adversarial_dir(out, cell) / "stamp.json"),
                        "eval": ev.EVAL_METADATA, "batch": plan.eval_batch_size})
    if json_path.exists():
        report = ev.RobustnessReport.from_json(json_path.read_text())
        if report.config_hash == h:
            return report
    _, splits = load_splits(plan, out, cell.representation)
    test = splits["test"]
    model = load_model(plan, out, cell)
    bs = plan.eval_batch_size
    temporal = ev.temporal_sweep(model, test, batch_size=bs, model_id=cell.model_id)
    doppler = ev.doppler_sweep(model, test, batch_size=bs, model_id=cell.model_id)
    triple = ev.AccuracyTriple(ev.accuracy(model, test, bs), transfer_evaluate(model, adv),
                               temporal.worst_case_accuracy(), cell.model_id)
    variance = ev.activation_variance_table(temporal, doppler)
    report = ev.assemble_report(cell.model_id, h, cell.architecture, cell.scheme, cell.representation,
                                triple, temporal, doppler, variance)
    ev.build_report(report, model_dir, temporal, doppler)
    return report


def evaluate_all(plan: ExperimentPlan, out: Path) -> list[ev.RobustnessReport]:
    cells = plan.cells()
    require_models(plan, out, cells, "evaluate")
    reports = [evaluate_cell(plan, c, out) for c in cells]
    for rep in plan.representations:
        ev.write_accuracy_table([r for r in reports if r.representation == rep],
                                report_dir(out) / f"accuracy_{rep}.csv")
    return reports


# -- transfer ----------------------------------------------------------------------


def transfer_rows(plan: ExperimentPlan, out: Path, representation: str, target_arch: str,
                  source_arch: str) -> dict[str, dict[str, float]]:
    """Rows are the target architecture's training modes; columns the source's modes."""
    if representation not in plan.representations:
        raise PlanError(f"representation {representation!r} is not part of the plan")
    targets = [Cell(target_arch, s, representation) for s in plan.schemes]
    sources = [Cell(source_arch, s, representation) for s in plan.schemes]
    require_models(plan, out, targets + sources, "transfer")
    adv_sets = {c.scheme: attack_cell(plan, c, out) for c in sources}
    rows = {}
    for cell in targets:
        report = evaluate_cell(plan, cell, out)
        model = load_model(plan, out, cell)
        row = {"no_attack": report.accuracy["standard"]}
        for scheme, adv in adv_sets.items():
            row[scheme] = transfer_evaluate(model, adv, representation)
        rows[cell.scheme] = row
    return rows


def transfer_all(plan: ExperimentPlan, out: Path) -> dict[str, Path]:
    """Cross-architecture matrices (sources from the other model) and within-architecture ones.

    In the within-architecture matrix the diagonal is each model's direct PGD
    accuracy.
    """
    paths = {}
    for rep in plan.representations:
        for target in plan.architectures:
            for source in plan.architectures:
                rows = transfer_rows(plan, out, rep, target, source)
                suffix = "_within" if source == target else ""
                path = report_dir(out) / f"transfer_{rep}_{target}{suffix}.csv"
                ev.write_transfer_table(rows, path)
                paths[path.stem] = path
    return paths


# -- aggregate ---------------------------------------------------------------------


def report_all(plan: ExperimentPlan, out: Path) -> dict[str, Path]:
    """Aggregate tables: accuracy per representation, variance for standard models, transfers."""
    reports = evaluate_all(plan, out)
    paths = {f"accuracy_{rep}": report_dir(out) / f"accuracy_{rep}.csv" for rep in plan.representations}
    paths.update(transfer_all(plan, out))
    if set(ARCHITECTURES) <= set(plan.architectures) and "S" in plan.schemes:
        by_id = {r.model_id: r for r in reports}
        for rep in plan.representations:
            a, b = (by_id[Cell(arch, "S", rep).model_id] for arch in ARCHITECTURES)
            path = report_dir(out) / f"variance_{rep}.csv"
            ev.write_variance_table(ev.VarianceTable(np.array(a.variance)), ev.VarianceTable(np.array(b.variance)),
                                    path)
            paths[path.stem] = path
    _write_json(report_dir(out) / "plan.json", plan.to_dict())
    return paths


def run_plan(plan: ExperimentPlan, out: Path) -> dict[str, Path]:
    """Every stage in order: dataset, training, attacks, evaluation, transfer, tables."""
    start = time.time()
    synthesize(plan, out)
    train_all(plan, out)
    attack_all(plan, out)
    paths = report_all(plan, out)
    log.info("plan finished in %.0f s", time.time() - start)
    return paths
