"""Scikit-learn style classifier wrapping the training loop.

``ShortcutCNNClassifier`` exposes fit/predict/predict_proba/score and
get_params/set_params, so the network drops into pipelines, grid
searches, and cross-validation like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array, check_X_y

from scnn.network import (
    ConvSpec,
    NetworkSpec,
    PoolSpec,
    ShortcutIndicator,
    forward,
    validate_spec,
)
from scnn.optimize import TrainConfig, train
from scnn.data import Dataset


def _default_network(input_shape: tuple[int, int, int], num_classes: int) -> NetworkSpec:
    """Small two-pair architecture that validates for inputs of 6x6 and up."""
    return NetworkSpec(
        input_shape=input_shape,
        num_classes=num_classes,
        pairs=(
            (ConvSpec(8, (3, 3)), PoolSpec(2, 2, "max", ceil_mode=True)),
            (ConvSpec(16, (2, 2)), PoolSpec(2, 2, "max", ceil_mode=True)),
        ),
    )


class ShortcutCNNClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier with shortcut feature concatenation.

    Parameters
    ----------
    network : NetworkSpec or None
        Architecture to train.  When None, a small default is built from
        the training data's shape and class count.
    si : str or None
        Shortcut indicator bits (e.g. ``"010"``).  None means no
        shortcuts (the plain stacked network).
    input_shape : tuple or None
        (channels, height, width) used to reshape flat 2-D inputs.
        Unnecessary when X already has image axes or ``network`` is given.
    max_iterations, batch_size, base_lr, bias_lr_multiplier, momentum,
    weight_decay, optimizer, init, random_state
        Training hyperparameters; see TrainConfig.

    Attributes
    ----------
    classes_ : ndarray of unique labels seen in fit.
    spec_ : the NetworkSpec actually trained.
    si_ : the ShortcutIndicator actually trained.
    params_ : trained Parameters.
    history_ : per-iteration loss records from the training run.
    """

    def __init__(
        self,
        network: NetworkSpec | None = None,
        si: str | None = None,
        input_shape: tuple[int, int, int] | None = None,
        max_iterations: int = 300,
        batch_size: int = 20,
        base_lr: float = 0.01,
        bias_lr_multiplier: float = 2.0,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        optimizer: str = "sgd_momentum",
        init: str = "xavier",
        random_state: int = 0,
    ):
        self.network = network
        self.si = si
        self.input_shape = input_shape
        self.max_iterations = max_iterations
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.bias_lr_multiplier = bias_lr_multiplier
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.init = init
        self.random_state = random_state

    def _image_shape(self) -> tuple[int, int, int] | None:
        if self.network is not None:
            return self.network.input_shape
        return tuple(self.input_shape) if self.input_shape is not None else None

    def _as_images(self, X) -> np.ndarray:
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim == 2:
            shape = self._image_shape()
            if shape is None:
                raise ValueError(
                    "flat 2-D X needs input_shape=(channels, height, width) "
                    "or an explicit network"
                )
            if int(np.prod(shape)) != X.shape[1]:
                raise ValueError(
                    f"X has {X.shape[1]} features but input_shape {shape} implies "
                    f"{int(np.prod(shape))}"
                )
            return X.reshape(X.shape[0], *shape)
        if X.ndim == 3:  # (N, H, W) grayscale
            return X[:, None, :, :]
        if X.ndim == 4:
            return X
        raise ValueError(f"X must have 2, 3 or 4 dims, got {X.ndim}")

    def fit(self, X, y):
        """Train the network on images X and labels y.

        X may be (N, C, H, W), (N, H, W) for single-channel images, or a
        flat (N, features) matrix when the image shape is known.
        """
        if np.asarray(X).ndim == 2:
            X, y = check_X_y(X, y)
        images = self._as_images(X)
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("fit needs at least 2 classes")

        spec = self.network
        if spec is None:
            spec = _default_network(images.shape[1:], len(self.classes_))
        elif spec.num_classes != len(self.classes_):
            raise ValueError(
                f"network expects {spec.num_classes} classes but y has {len(self.classes_)}"
            )
        si = (
            ShortcutIndicator.from_string(self.si)
            if self.si is not None
            else ShortcutIndicator.zeros(spec.r)
        )
        validate_spec(spec, si)

        cfg = TrainConfig(
            batch_size=min(self.batch_size, images.shape[0]),
            max_iterations=self.max_iterations,
            base_lr=self.base_lr,
            bias_lr_multiplier=self.bias_lr_multiplier,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            init=self.init,
            rng_seed=self.random_state,
        )
        dataset = Dataset(
            images=images, labels=encoded.astype(np.int64),
            num_classes=len(self.classes_), source="memory",
        )
        self.params_, self.history_ = train(spec, si, dataset, cfg)
        self.spec_ = spec
        self.si_ = si
        self.n_features_in_ = int(np.prod(images.shape[1:]))
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this ShortcutCNNClassifier is not fitted yet; call fit first"
            )

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities, columns ordered like ``classes_``."""
        self._check_fitted()
        images = self._as_images(X)
        if images.shape[1:] != self.spec_.input_shape:
            raise ValueError(
                f"X images {images.shape[1:]} do not match the fitted network "
                f"{self.spec_.input_shape}"
            )
        probs = []
        for start in range(0, images.shape[0], 256):
            cache = forward(self.spec_, self.params_, self.si_, images[start : start + 256])
            probs.append(cache.probs)
        return np.concatenate(probs)

    def predict(self, X) -> np.ndarray:
        """Most probable class label per sample."""
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
