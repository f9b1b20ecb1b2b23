"""scikit-learn compatible wrapper around model construction, training and
scoring."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import split_train_val
from .exceptions import ShapeMismatch, TooFewSamples
from .model import ModelConfig, init_model
from .scoring import score_batch
from .training import FULL_VARIANT, TrainConfig, train


def check_sequences(X, n_channels=None, length=None) -> np.ndarray:
    """Validate a batch of series and return it as a float64 ``(n, C, L)``
    array. 2-D input is read as ``(n, L)`` univariate series."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ShapeMismatch(f"expected (n, L) or (n, C, L) input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinite values")
    if n_channels is not None and (X.shape[1] != n_channels or X.shape[2] != length):
        raise ShapeMismatch(
            f"expected series of shape ({n_channels}, {length}), got {X.shape[1:]}"
        )
    return X


class NeuCoReClassAD(TransformerMixin, BaseEstimator):
    """One-class time-series anomaly detector trained on normal series only.

    After :meth:`fit`, :meth:`decision_function` returns anomaly scores
    (higher is more anomalous) and :meth:`transform` maps series to their
    per-transformation score contributions, shape ``(n, K)``.

    Parameters mirror :class:`~neucoreclass.model.ModelConfig` and
    :class:`~neucoreclass.training.TrainConfig`; ``normalize`` standardizes
    each channel with statistics of the training data.
    """

    def __init__(self, n_transformations=12, latent_dim=320, hidden_channels=64,
                 encoder_depth=10, decoder_depth=None, kernel_size=3, transform_channels=32,
                 transformation_mode="learnable", pooling="max", tau=0.1, batch_size=32,
                 max_epochs=10000, lr=1e-3, patience=10, lr_decay=0.5, min_lr=1e-6,
                 tasks=FULL_VARIANT, val_fraction=0.1, normalize=True, random_state=0):
        self.n_transformations = n_transformations
        self.latent_dim = latent_dim
        self.hidden_channels = hidden_channels
        self.encoder_depth = encoder_depth
        self.decoder_depth = decoder_depth
        self.kernel_size = kernel_size
        self.transform_channels = transform_channels
        self.transformation_mode = transformation_mode
        self.pooling = pooling
        self.tau = tau
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.lr = lr
        self.patience = patience
        self.lr_decay = lr_decay
        self.min_lr = min_lr
        self.tasks = tasks
        self.val_fraction = val_fraction
        self.normalize = normalize
        self.random_state = random_state

    def _model_config(self, n_channels, length):
        return ModelConfig(
            input_channels=n_channels, input_length=length,
            n_transformations=self.n_transformations, latent_dim=self.latent_dim,
            hidden_channels=self.hidden_channels, encoder_depth=self.encoder_depth,
            decoder_depth=self.decoder_depth, kernel_size=self.kernel_size,
            transform_channels=self.transform_channels,
            transformation_mode=self.transformation_mode, pooling=self.pooling,
        )

    def _train_config(self, seed):
        return TrainConfig(
            max_epochs=self.max_epochs, batch_size=self.batch_size, initial_lr=self.lr,
            scheduler_patience=self.patience, lr_decay_factor=self.lr_decay,
            min_lr=self.min_lr, tau=self.tau, seed=seed, enabled_tasks=self.tasks,
        )

    def fit(self, X, y=None):
        """Train on normal series ``X``; ``y`` is ignored."""
        X = check_sequences(X)
        if len(X) < 2:
            raise TooFewSamples("need at least 2 training series")
        seed = 0 if self.random_state is None else int(self.random_state)
        n, c, length = X.shape
        if self.normalize:
            self.mean_ = X.mean(axis=(0, 2))
            std = X.std(axis=(0, 2))
            self.scale_ = np.where(std > 1e-12, std, 1.0)
        else:
            self.mean_ = np.zeros(c)
            self.scale_ = np.ones(c)
        X = self._standardize(X)
        split = split_train_val(n, val_fraction=self.val_fraction, seed=seed)
        model = init_model(self._model_config(c, length), seed=seed)
        self.model_, self.history_ = train(model, X, split, self._train_config(seed))
        self.n_channels_in_ = c
        self.length_in_ = length
        return self

    def _standardize(self, X):
        return (X - self.mean_[None, :, None]) / self.scale_[None, :, None]

    def _scores(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.n_channels_in_, self.length_in_)
        return score_batch(self.model_, self._standardize(X))

    def score_breakdown(self, X):
        """Per-sample task scores, overall score and contributions as a
        :class:`~neucoreclass.scoring.ScoreTable`."""
        return self._scores(X)

    def decision_function(self, X):
        """Overall anomaly score; higher means more anomalous."""
        return self._scores(X).overall

    def score_samples(self, X):
        """Negated anomaly score, following the scikit-learn convention that
        lower values are more abnormal."""
        return -self.decision_function(X)

    def transform(self, X):
        """Per-transformation contributions to the anomaly score, ``(n, K)``."""
        return self._scores(X).contributions
