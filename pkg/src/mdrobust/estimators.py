"""scikit-learn wrappers around the preprocessing chain and the classifiers.

Maps go in as complex arrays ``[n, 128, T]`` with ``T`` 128 or 148; network
inputs are real ``[n, C, 128, 128]`` arrays.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dsp
from .adversary import AttackConfig
from .autodiff import Tensor
from .dataset import N_CLASSES, LabeledSample, SplitSpec, stratified_split
from .models import ModelConfig, build_model
from .training import TrainConfig, train

_CHANNELS = {"doppler_time": 2, "cvd": 1}


def check_maps(X) -> np.ndarray:
    """Validate a stack of Doppler-time maps and return it as complex128."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != dsp.DOPPLER_BINS:
        raise ValueError(f"expected maps of shape [n, {dsp.DOPPLER_BINS}, T], got {X.shape}")
    if X.shape[2] not in (dsp.NETWORK_COLUMNS, dsp.SHIFT_COLUMNS):
        raise ValueError(f"map width must be {dsp.NETWORK_COLUMNS} or {dsp.SHIFT_COLUMNS}, got {X.shape[2]}")
    if len(X) == 0:
        raise ValueError("empty input")
    X = X.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("maps contain NaN or inf")
    return X


def check_inputs(X, channels: int | None = None) -> np.ndarray:
    """Validate a stack of network inputs ``[n, C, 128, 128]``."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        raise ValueError("network inputs must be real; pass complex maps to the transformer first")
    X = X.astype(np.float64, copy=False)
    if X.ndim == 3:
        X = X[None]
    size = dsp.NETWORK_COLUMNS
    if X.ndim != 4 or X.shape[2:] != (size, size) or X.shape[1] not in (1, 2):
        raise ValueError(f"expected inputs of shape [n, 1|2, {size}, {size}], got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    if len(X) == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs contain NaN or inf")
    return X


def _check_representation(rep: str) -> str:
    if rep not in _CHANNELS:
        raise ValueError(f"representation must be one of {sorted(_CHANNELS)}, got {rep!r}")
    return rep


class RepresentationTransformer(TransformerMixin, BaseEstimator):
    """Complex Doppler-time maps to normalized network inputs.

    Wide (148-column) maps are cropped at ``offset`` first; ``cvd`` then takes
    the magnitude spectrum along time.
    """

    def __init__(self, representation: str = "doppler_time", offset: int = 0):
        self.representation = representation
        self.offset = offset

    def fit(self, X, y=None):
        _check_representation(self.representation)
        X = check_maps(X)
        self.n_columns_in_ = X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_columns_in_")
        X = check_maps(X)
        out = []
        for m in X:
            dt = dsp.DopplerTimeMap(m, 1.0)
            if m.shape[1] == dsp.SHIFT_COLUMNS:
                dt = dsp.temporal_crop(dt, self.offset)
            out.append(dsp.represent(dt, self.representation))
        return np.stack(out)


class MicroDopplerClassifier(ClassifierMixin, BaseEstimator):
    """Model A or Model B trained under one of the four schemes.

    ``fit`` accepts either complex maps (148 columns are needed for the
    temporal schemes) or ready-made network inputs. Without an explicit
    validation set a stratified quarter of the training data is held out
    for checkpoint selection.
    """

    def __init__(self, architecture: str = "A", representation: str = "doppler_time", scheme: str = "S",
                 max_epochs: int = 50, learning_rate: float = 1e-3, batch_size: int = 32,
                 noise_snr_db: float = 0.0, epsilon: float = 0.1, attack_steps: int = 20,
                 patience: int | None = None, random_state: int = 0):
        self.architecture = architecture
        self.representation = representation
        self.scheme = scheme
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.noise_snr_db = noise_snr_db
        self.epsilon = epsilon
        self.attack_steps = attack_steps
        self.patience = patience
        self.random_state = random_state

    def _samples(self, X, labels, prefix: str) -> list[LabeledSample]:
        rep = self.representation
        X = np.asarray(X)
        out = []
        if np.iscomplexobj(X):
            X = check_maps(X)
            for i, (m, lab) in enumerate(zip(X, labels)):
                dt = dsp.DopplerTimeMap(m, 1.0)
                wide = dt if m.shape[1] == dsp.SHIFT_COLUMNS else None
                crop = dsp.temporal_crop(dt, 0) if wide is not None else dt
                out.append(LabeledSample(Tensor(dsp.represent(crop, rep)), int(lab), f"{prefix}{i}", 0,
                                         None, wide, rep))
        else:
            X = check_inputs(X, _CHANNELS[rep])
            out = [LabeledSample(Tensor(x), int(lab), f"{prefix}{i}", None, None, None, rep)
                   for i, (x, lab) in enumerate(zip(X, labels))]
        return out

    def _encode(self, y) -> np.ndarray:
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("labels not seen during fit")
        return idx

    def fit(self, X, y, X_val=None, y_val=None):
        _check_representation(self.representation)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"y must be 1-D with one label per sample, got shape {y.shape}")
        self.classes_ = np.unique(y)
        if len(self.classes_) > N_CLASSES:
            raise ValueError(f"at most {N_CLASSES} classes are supported, got {len(self.classes_)}")
        samples = self._samples(X, self._encode(y), "fit")
        if X_val is None:
            train_set, val_set, test_set = stratified_split(samples, SplitSpec((0.5, 0.25, 0.25), self.random_state))
            train_set = train_set + test_set
        else:
            train_set, val_set = samples, self._samples(X_val, self._encode(y_val), "val")
        scheme_needs_wide = self.scheme in ("T", "A+T", "AT")
        if scheme_needs_wide and any(s.map148 is None for s in train_set):
            raise ValueError("temporal schemes need complex 148-column maps")
        channels = _CHANNELS[self.representation]
        self.model_ = build_model(ModelConfig(self.architecture, channels, seed=self.random_state))
        config = TrainConfig(
            scheme=self.scheme, max_epochs=self.max_epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, noise_snr_db=self.noise_snr_db,
            attack=AttackConfig(self.epsilon, self.attack_steps, seed=self.random_state),
            patience=self.patience, seed=self.random_state,
        )
        self.result_ = train(self.model_, (train_set, val_set), config)
        self.n_channels_in_ = channels
        return self

    def _inputs(self, X) -> np.ndarray:
        X = np.asarray(X)
        if np.iscomplexobj(X):
            return RepresentationTransformer(self.representation).fit(X).transform(X)
        return check_inputs(X, self.n_channels_in_)

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        logits = self.model_.predict_logits(self._inputs(X), self.batch_size)
        return logits[:, : len(self.classes_)]

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
