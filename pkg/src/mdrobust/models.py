"""Model A / Model B convolutional classifiers with a shared dense head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, checkpoint, glorot_uniform, ops
from .autodiff.tensor import DimensionError

N_CLASSES = 6

# Layer widths and pooling are declared choices, not recovered values.
DEFAULT_TOPOLOGY = {
    "A": {"conv_widths": (16, 32, 64, 64), "pools": (2, 2, 2, 2)},
    "B": {"conv_widths": (8, 16, 32), "pools": (2, 2, 4)},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "A"
    input_channels: int = 2
    conv_widths: tuple[int, ...] | None = None
    pools: tuple[int, ...] | None = None
    kernel_size: int = 9
    activation_slope: float = 0.01
    head_hidden: int = 128
    n_classes: int = N_CLASSES
    input_size: int = 128
    seed: int = 0

    def resolved(self) -> "ModelConfig":
        if self.architecture not in DEFAULT_TOPOLOGY:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        topo = DEFAULT_TOPOLOGY[self.architecture]
        widths = tuple(self.conv_widths) if self.conv_widths is not None else topo["conv_widths"]
        if self.pools is not None:
            pools = tuple(self.pools)
        elif self.conv_widths is None:
            pools = topo["pools"]
        else:
            pools = (2,) * len(widths)
        return ModelConfig(self.architecture, self.input_channels, widths, pools, self.kernel_size,
                           self.activation_slope, self.head_hidden, self.n_classes, self.input_size, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self.resolved())
        d["conv_widths"] = list(d["conv_widths"])
        d["pools"] = list(d["pools"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("conv_widths", "pools"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


class Conv2d:
    def __init__(self, name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        self.name = name
        self.padding = k // 2
        self.weight = Tensor(glorot_uniform((c_out, c_in, k, k), rng), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x, params):
        w, b = params
        return ops.conv2d(x, w, b, stride=1, padding=self.padding)


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.name = name
        self.weight = Tensor(glorot_uniform((n_out, n_in), rng), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias")

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x, params):
        w, b = params
        return ops.dense(x, w, b)


class LeakyReLU:
    def __init__(self, slope: float):
        self.slope = slope

    def params(self):
        return []

    def __call__(self, x, params):
        return ops.leaky_relu(x, self.slope)


class MaxPool2d:
    def __init__(self, window: int):
        self.window = window

    def params(self):
        return []

    def __call__(self, x, params):
        return ops.max_pool2d(x, self.window, self.window)


class Flatten:
    def params(self):
        return []

    def __call__(self, x, params):
        return ops.flatten(x, batched=x.ndim == 4)


class Classifier:
    """Ordered layers plus a registry of named parameter tensors.

    :meth:`forward` takes ``[C,H,W]`` or ``[N,C,H,W]`` and returns ``[6]`` or
    ``[N,6]`` logits. With ``track_params=False`` the weights enter the graph as
    constants, which is what attacks want: only the input gradient is built.
    """

    def __init__(self, layers: Sequence, input_shape: tuple[int, ...], config: ModelConfig | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.config = config
        self.parameters: dict[str, Tensor] = {}
        for layer in self.layers:
            for p in layer.params():
                if p.name in self.parameters:
                    raise ConfigError(f"duplicate parameter name {p.name}")
                self.parameters[p.name] = p

    @property
    def n_classes(self) -> int:
        return self.config.n_classes if self.config else N_CLASSES

    def forward(self, x: Tensor, track_params: bool = True) -> Tensor:
        shape = tuple(x.shape[-len(self.input_shape):])
        if shape != self.input_shape or x.ndim not in (len(self.input_shape), len(self.input_shape) + 1):
            raise DimensionError(f"model expects input {self.input_shape}, got {x.shape}")
        h = x
        for layer in self.layers:
            ps = layer.params()
            if not track_params:
                ps = [p.detach() for p in ps]
            h = layer(h, ps)
        return h

    __call__ = forward

    def predict_logits(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Logits for a stacked array of inputs, without building a graph."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == len(self.input_shape):
            return self.forward(Tensor._wrap(x), track_params=False).data
        out = [self.forward(Tensor._wrap(x[i : i + batch_size]), track_params=False).data
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.parameters):
            raise ConfigError("state dict parameter names do not match the model")
        for name, p in self.parameters.items():
            if state[name].shape != p.data.shape:
                raise ConfigError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def save(self, path, provenance: dict | None = None) -> None:
        """Binary checkpoint plus a ``.json`` sidecar with config and provenance."""
        path = Path(path)
        checkpoint.save(path, self.state_dict())
        sidecar = {"config": self.config.to_dict() if self.config else None, "provenance": provenance or {}}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Classifier":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        model = build_model(ModelConfig.from_dict(sidecar["config"]))
        model.load_state_dict(checkpoint.load(path))
        return model


def build_model(config: ModelConfig) -> Classifier:
    cfg = config.resolved()
    if cfg.kernel_size % 2 == 0 or cfg.kernel_size < 1:
        raise ConfigError("kernel_size must be a positive odd integer")
    if cfg.n_classes != N_CLASSES:
        raise ConfigError(f"n_classes must be {N_CLASSES}")
    if not cfg.conv_widths or any(w < 1 for w in cfg.conv_widths):
        raise ConfigError(f"invalid conv widths {cfg.conv_widths}")
    if len(cfg.pools) != len(cfg.conv_widths):
        raise ConfigError("one pooling window per conv block is required")
    if cfg.input_channels not in (1, 2):
        raise ConfigError("input_channels must be 2 (Doppler-time) or 1 (CVD)")
    rng = np.random.default_rng(cfg.seed)
    layers: list = []
    c, size = cfg.input_channels, cfg.input_size
    for i, (width, pool) in enumerate(zip(cfg.conv_widths, cfg.pools)):
        layers += [Conv2d(f"conv{i}", c, width, cfg.kernel_size, rng), LeakyReLU(cfg.activation_slope), MaxPool2d(pool)]
        c = width
        size //= pool
        if size < 1:
            raise ConfigError("pooling reduces the feature map below 1x1")
    layers += [
        Flatten(),
        Dense("head.hidden", c * size * size, cfg.head_hidden, rng),
        LeakyReLU(cfg.activation_slope),
        Dense("head.out", cfg.head_hidden, cfg.n_classes, rng),
    ]
    return Classifier(layers, (cfg.input_channels, cfg.input_size, cfg.input_size), cfg)


def parameter_count(model: Classifier) -> int:
    return int(sum(p.size for p in model.parameters.values()))


def forward(model: Classifier, x: Tensor) -> Tensor:
    return model.forward(x)
