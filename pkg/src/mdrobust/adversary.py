"""Projected gradient descent attacks and cross-model transfer."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import containers
from .autodiff import Tensor, backward, ops
from .autodiff.tensor import ContractError
from .dataset import LabeledSample, config_hash, stack_inputs


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    steps: int = 20
    step_size: float | None = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / max(self.steps, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_size"] = self.alpha
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def input_gradient(model, x: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of the summed cross-entropy with respect to a batch of inputs."""
    xt = Tensor._wrap(x, requires_grad=True)
    logits = model.forward(xt, track_params=False)
    loss = ops.softmax_cross_entropy(logits, labels)
    backward(loss)
    return xt.grad * len(labels), float(loss.data)


def pgd_batch(model, x_clean: np.ndarray, labels: np.ndarray, config: AttackConfig,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Sign-gradient ascent on the loss, projected onto the l-inf ball after every step."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    eps = config.epsilon
    lo, hi = x_clean - eps, x_clean + eps
    if config.random_start and eps > 0:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        x = np.clip(x_clean + rng.uniform(-eps, eps, size=x_clean.shape), lo, hi)
    else:
        x = x_clean.copy()
    alpha = config.alpha
    for _ in range(config.steps):
        grad, _ = input_gradient(model, x, labels)
        if not np.all(np.isfinite(grad)):
            raise AttackError("non-finite input gradient during PGD")
        x = np.clip(x + alpha * np.sign(grad), lo, hi)
    return x


def pgd_attack(model, sample: LabeledSample, config: AttackConfig) -> np.ndarray:
    """Adversarial version of one sample's network input."""
    x = sample.input.data[None]
    return pgd_batch(model, x, np.array([sample.label]), config)[0]


@dataclass
class AdversarialSet:
    inputs: np.ndarray
    labels: np.ndarray
    source_model_id: str
    attack_hash: str
    representation: str
    sample_ids: list[str]
    linf: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        containers.save(directory / "inputs.mdar", self.inputs)
        manifest = {
            "source_model_id": self.source_model_id,
            "attack_hash": self.attack_hash,
            "representation": self.representation,
            "sample_ids": self.sample_ids,
            "labels": self.labels.tolist(),
            "linf": [float(v) for v in self.linf],
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "AdversarialSet":
        directory = Path(directory)
        m = json.loads((directory / "manifest.json").read_text())
        return cls(containers.load(directory / "inputs.mdar"), np.array(m["labels"], dtype=np.int64),
                   m["source_model_id"], m["attack_hash"], m["representation"], m["sample_ids"],
                   np.array(m["linf"]))


def generate_adversarial_dataset(model, split: Sequence[LabeledSample], config: AttackConfig,
                                 model_id: str = "model", batch_size: int = 16) -> AdversarialSet:
    """PGD examples for every sample; the random start is seeded from ``config.seed``."""
    if not split:
        raise ValueError("cannot attack an empty split")
    reps = {s.representation for s in split}
    if len(reps) != 1:
        raise ContractError(f"split mixes representations {sorted(reps)}")
    x, y = stack_inputs(split)
    rng = np.random.default_rng(config.seed)
    out = np.empty_like(x)
    for start in range(0, len(x), batch_size):
        sl = slice(start, start + batch_size)
        try:
            out[sl] = pgd_batch(model, x[sl], y[sl], config, rng)
        except AttackError as exc:
            ids = [s.source_id for s in split[sl]]
            raise AttackError(f"{exc} (samples {ids})") from None
    linf = np.abs(out - x).reshape(len(x), -1).max(axis=1)
    return AdversarialSet(out, y, model_id, config.hash, reps.pop(), [s.source_id for s in split], linf)


def predict(model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    return model.predict_logits(x, batch_size).argmax(axis=1)


def transfer_evaluate(target_model, adv_set: AdversarialSet, representation: str | None = None) -> float:
    """Accuracy of ``target_model`` on adversarial inputs crafted elsewhere."""
    expected_channels = target_model.input_shape[0]
    if adv_set.inputs.shape[1:] != target_model.input_shape:
        raise ContractError(
            f"adversarial set ({adv_set.representation}, {adv_set.inputs.shape[1:]}) does not fit "
            f"a model expecting {target_model.input_shape}"
        )
    if representation is not None and representation != adv_set.representation:
        raise ContractError(f"{adv_set.representation} set cannot be evaluated on a {representation} model")
    if expected_channels == 1 and adv_set.representation != "cvd":
        raise ContractError("Doppler-time set given to a CVD model")
    pred = predict(target_model, adv_set.inputs)
    return float(np.mean(pred == adv_set.labels))
