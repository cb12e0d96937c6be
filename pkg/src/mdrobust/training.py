"""The four training schemes with input-noise regularization and best-epoch checkpointing."""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import dsp
from .adversary import AttackConfig, pgd_batch
from .autodiff import AdamState, Tensor, adam_step, backward, ops
from .autodiff.tensor import ContractError
from .dataset import LabeledSample, batch_iter, stack_inputs

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingScheme(str, enum.Enum):
    STANDARD = "S"
    ADVERSARIAL = "A"
    TEMPORAL = "T"
    ADV_TEMPORAL = "A+T"

    @property
    def adversarial(self) -> bool:
        return self in (TrainingScheme.ADVERSARIAL, TrainingScheme.ADV_TEMPORAL)

    @property
    def temporal(self) -> bool:
        return self in (TrainingScheme.TEMPORAL, TrainingScheme.ADV_TEMPORAL)

    @property
    def slug(self) -> str:
        return self.value.replace("+", "")

    @classmethod
    def parse(cls, value) -> "TrainingScheme":
        if isinstance(value, cls):
            return value
        aliases = {"AT": "A+T", "standard": "S", "adversarial": "A", "temporal": "T"}
        return cls(aliases.get(value, value))


@dataclass(frozen=True)
class TrainConfig:
    scheme: TrainingScheme = TrainingScheme.STANDARD
    max_epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    noise_snr_db: float = 0.0
    attack: AttackConfig = field(default_factory=AttackConfig)
    temporal_shift_range: tuple[int, int] = (0, dsp.MAX_TEMPORAL_OFFSET)
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", TrainingScheme.parse(self.scheme))
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        lo, hi = self.temporal_shift_range
        if not 0 <= lo <= hi <= dsp.MAX_TEMPORAL_OFFSET:
            raise ValueError(f"temporal_shift_range must lie within [0, {dsp.MAX_TEMPORAL_OFFSET}]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["attack"] = self.attack.to_dict()
        d["temporal_shift_range"] = list(self.temporal_shift_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "attack" in d and isinstance(d["attack"], dict):
            d["attack"] = AttackConfig(**d["attack"])
        if "temporal_shift_range" in d:
            d["temporal_shift_range"] = tuple(d["temporal_shift_range"])
        return cls(**d)


@dataclass
class TrainResult:
    best_checkpoint: dict[str, np.ndarray]
    train_loss: list[float]
    val_loss: list[float]
    selected_epoch: int
    forward_backward_passes: list[int]
    offsets_seen: dict[int, int]
    wall_time: float
    adversarial_examples: int = 0
    max_perturbation: float = 0.0  # largest l-inf distance of a training PGD example

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.selected_epoch - 1]


def _representation(model) -> str:
    return "cvd" if model.input_shape[0] == 1 else "doppler_time"


def batch_inputs(samples: Sequence[LabeledSample], offsets: Sequence[int], representation: str) -> np.ndarray:
    """Network inputs for each sample cropped at the given temporal offset."""
    out = []
    for s, off in zip(samples, offsets):
        if off == 0 and s.representation == representation:
            out.append(s.input.data)
        else:
            out.append(dsp.represent(s.crop(int(off)), representation))
    return np.stack(out)


def evaluate_loss(model, split: Sequence[LabeledSample], batch_size: int = 32) -> float:
    """Mean clean cross-entropy: no augmentation, no noise."""
    if not split:
        raise ValueError("cannot evaluate loss on an empty split")
    x, y = stack_inputs(split)
    total = 0.0
    for start in range(0, len(x), batch_size):
        logits = model.predict_logits(x[start : start + batch_size], batch_size)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        total += float(-logp[np.arange(len(z)), y[start : start + batch_size]].sum())
    return total / len(x)


def train(model, data, config: TrainConfig) -> TrainResult:
    """Train ``model`` in place and leave it holding the lowest-validation-loss weights.

    ``data`` is ``(train, val)`` or a mapping with ``"train"`` and ``"val"``.
    """
    train_set, val_set = (data["train"], data["val"]) if isinstance(data, dict) else data[:2]
    rep = _representation(model)
    if any(s.representation != rep for s in list(train_set) + list(val_set)):
        raise ContractError(f"model expects {rep} inputs")
    scheme = config.scheme
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    params = list(model.parameters.values())
    state = AdamState(learning_rate=config.learning_rate)
    lo, hi = config.temporal_shift_range
    train_curve, val_curve, passes = [], [], []
    offsets_seen: dict[int, int] = {}
    best_val, best_state, best_epoch = math.inf, model.state_dict(), 1
    stale = 0
    n_adv, max_delta = 0, 0.0
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        epoch_loss, seen, epoch_passes = 0.0, 0, 0
        shuffle_seed = int(rng.integers(2**31))
        for b, batch in enumerate(batch_iter(train_set, config.batch_size, shuffle_seed)):
            if scheme.temporal:
                offsets = rng.integers(lo, hi + 1, size=len(batch))
            else:
                offsets = np.zeros(len(batch), dtype=int)
            for off in offsets:
                offsets_seen[int(off)] = offsets_seen.get(int(off), 0) + 1
            x = batch_inputs(batch, offsets, rep)
            y = np.array([s.label for s in batch], dtype=np.int64)
            if not math.isinf(config.noise_snr_db):
                x = np.stack([dsp.add_noise_snr(xi, config.noise_snr_db, rng) for xi in x])
            if scheme.adversarial:
                x_adv = pgd_batch(model, x, y, config.attack, rng)
                max_delta = max(max_delta, float(np.abs(x_adv - x).max()))
                n_adv += len(x)
                x = x_adv
                epoch_passes += config.attack.steps
            model.zero_grad()
            loss = ops.softmax_cross_entropy(model.forward(Tensor._wrap(x)), y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            backward(loss)
            adam_step(params, state)
            epoch_passes += 1
            epoch_loss += value * len(batch)
            seen += len(batch)
        val = evaluate_loss(model, val_set, config.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        train_curve.append(epoch_loss / seen)
        val_curve.append(val)
        passes.append(epoch_passes)
        log.info("epoch %d train %.4f val %.4f", epoch, train_curve[-1], val)
        if val < best_val:
            best_val, best_state, best_epoch = val, model.state_dict(), epoch
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state, train_curve, val_curve, best_epoch, passes, offsets_seen,
                       time.perf_counter() - t0, n_adv, max_delta)
