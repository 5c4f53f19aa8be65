"""scikit-learn style wrapper around the attention network and its trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted

from .augment import AugmentConfig
from .dataset import LabeledDataset
from .errors import InvalidShapeError
from .model import forward, predict_two_pass_batch
from .trainer import TrainConfig, train


def _check_images(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim != 4 or X.shape[3] != 3 or X.shape[1] != X.shape[2]:
        raise InvalidShapeError(f"expected images of shape (n, S, S, 3), got {X.shape}")
    return X


class WSDANClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Fine-grained image classifier: attention maps, bilinear attention pooling,
    and attention-guided crop/drop augmentation during training.

    ``X`` holds square RGB images ``(n, S, S, 3)`` with values in ``[0, 1]``.
    ``transform`` returns the flattened part-feature matrix ``(n, M * C)``.
    """

    def __init__(self, epochs=30, batch_size=12, base_lr=0.001, momentum=0.9, decay=0.8,
                 beta=0.05, lambda_a=1.0, n_attention=8, widths=(8, 16, 32), use_augment=True,
                 theta_crop=0.5, theta_drop=0.5, theta_object=0.5, two_pass=True, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.decay = decay
        self.beta = beta
        self.lambda_a = lambda_a
        self.n_attention = n_attention
        self.widths = widths
        self.use_augment = use_augment
        self.theta_crop = theta_crop
        self.theta_drop = theta_drop
        self.theta_object = theta_object
        self.two_pass = two_pass
        self.random_state = random_state

    def _config(self, resolution: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, base_lr=self.base_lr,
            momentum=self.momentum, decay=self.decay, beta=self.beta, lambda_a=self.lambda_a,
            seed=int(self.random_state or 0), resolution=resolution, n_attention=self.n_attention,
            widths=tuple(self.widths), use_augment=self.use_augment, theta_object=self.theta_object,
            augment=AugmentConfig(self.theta_crop, self.theta_drop),
        )

    def fit(self, X, y):
        X = _check_images(X)
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        ds = LabeledDataset(X, codes, [str(c) for c in self.classes_])
        cfg = self._config(X.shape[1])
        state, rows = train(cfg, ds)
        self.params_ = state.params
        self.history_ = rows
        self.resolution_ = X.shape[1]
        return self

    def _validate(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = _check_images(X)
        if X.shape[1] != self.resolution_:
            raise InvalidShapeError(f"fitted on {self.resolution_}px images, got {X.shape[1]}px")
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._validate(X)
        r = predict_two_pass_batch(self.params_, X, self.theta_object)
        return r.p if self.two_pass else r.p1

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        X = self._validate(X)
        return forward(self.params_, X).parts.reshape(len(X), -1)
