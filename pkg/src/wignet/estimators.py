"""scikit-learn style estimators wrapping the training stack.

WiGClassifier is fit/predict-shaped over (N,3,32,32) image batches;
WiGDenoiser is fit/transform-shaped over grayscale images.  Both follow the
estimator contract: constructor args are stored untouched, ``get_params`` /
``set_params`` come from BaseEstimator, fitted state lives in trailing-
underscore attributes, so they compose with pipelines and search utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import optim
from .data import LabeledImageSet, add_noise


def _check_image_batch(X, channels: int, name: str = "X") -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3 and channels == 1:
        arr = arr[:, None, :, :]
    if arr.ndim != 4 or arr.shape[1] != channels:
        raise ValueError(
            f"{name} must be (N,{channels},H,W) images, got shape {np.asarray(X).shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} must be scaled to [0,1]")
    return arr


def _check_labels(y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ValueError(f"y must be ({n},) labels, got shape {arr.shape}")
    return arr


class WiGClassifier(ClassifierMixin, BaseEstimator):
    """Small gated-activation CNN classifier over (N,3,32,32) images in [0,1]."""

    def __init__(self, activation="wig", epochs=5, batch_size=64, lr=0.002,
                 lambda_wd=0.0, lambda_gate=0.0, init_mode="scratch",
                 gate_scale=1.0, augment=False, seed=0):
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_wd = lambda_wd
        self.lambda_gate = lambda_gate
        self.init_mode = init_mode
        self.gate_scale = gate_scale
        self.augment = augment
        self.seed = seed

    def _config(self, classes: int) -> optim.TrainConfig:
        return optim.TrainConfig(
            task="classify", net="classifier_desk", activation=self.activation,
            seed=self.seed, lr=self.lr, lambda_wd=self.lambda_wd,
            lambda_gate=self.lambda_gate, init_mode=self.init_mode,
            gate_scale=self.gate_scale, epochs=self.epochs,
            batch_size=self.batch_size, augment=self.augment, classes=classes,
        )

    def fit(self, X, y):
        X = _check_image_batch(X, channels=3)
        y = _check_labels(y, X.shape[0])
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        index = np.searchsorted(self.classes_, y)
        cfg = self._config(int(self.classes_.shape[0]))
        net = optim.build_from_config(cfg)
        train_set = LabeledImageSet(X.astype(np.float32), index.astype(np.int64),
                                    int(self.classes_.shape[0]))
        self.report_ = optim.train_classifier(net, train_set, None, cfg)
        self.net_ = net
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        if not hasattr(self, "net_"):
            raise NotFittedError("fit before predicting")
        X = _check_image_batch(X, channels=3)
        return self.net_.predict(X.astype(np.float32))

    def predict_proba(self, X):
        logits = self.decision_function(X).astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]


class WiGDenoiser(TransformerMixin, BaseEstimator):
    """Residual gated denoiser: fit on clean grayscale images, transform
    noisy ones.  Inputs are (N,H,W) or (N,1,H,W) in [0,1]."""

    def __init__(self, activation="wig", total_batches=500, batch_size=32,
                 patch=32, sigma_min=0.0, sigma_max=55.0, lr=0.002,
                 lambda_wd=0.0, lambda_gate=0.0, seed=0):
        self.activation = activation
        self.total_batches = total_batches
        self.batch_size = batch_size
        self.patch = patch
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.lr = lr
        self.lambda_wd = lambda_wd
        self.lambda_gate = lambda_gate
        self.seed = seed

    def _config(self) -> optim.TrainConfig:
        return optim.TrainConfig(
            task="denoise", net="denoiser_desk", activation=self.activation,
            seed=self.seed, lr=self.lr, lambda_wd=self.lambda_wd,
            lambda_gate=self.lambda_gate, total_batches=self.total_batches,
            batch_size=self.batch_size, patch=self.patch,
            sigma_min=self.sigma_min, sigma_max=self.sigma_max,
            log_every=max(1, self.total_batches // 5),
        )

    def fit(self, X, y=None):
        X = _check_image_batch(X, channels=1)
        cfg = self._config()
        net = optim.build_from_config(cfg)
        corpus = [im.astype(np.float32) for im in X]
        self.report_ = optim.train_denoiser(net, corpus, cfg)
        self.net_ = net
        return self

    def transform(self, X):
        if not hasattr(self, "net_"):
            raise NotFittedError("fit before transforming")
        X = _check_image_batch(X, channels=1)
        return np.stack([optim.denoise_image(self.net_, im) for im in X])

    def corrupt(self, X, sigma: float, seed: int = 0):
        """Convenience: synthesize noisy copies at a fixed sigma."""
        X = _check_image_batch(X, channels=1)
        rng = np.random.Generator(np.random.PCG64(seed))
        return np.stack([add_noise(im, sigma, rng) for im in X])
