"""scikit-learn compatible wrappers around the demosaicer and the sequence classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import model as model_mod
from ._validation import check_binary_labels, check_mosaic_batch, check_sequence_batch
from .demosaic import demosaic_array


class BayerDemosaicer(TransformerMixin, BaseEstimator):
    """Stateless transformer from (..., H, W) Bayer mosaics to (..., H, W, 3) RGB."""

    def fit(self, X, y=None):
        check_mosaic_batch(X)
        return self

    def transform(self, X):
        X = check_mosaic_batch(X)
        lead = X.shape[:-2]
        flat = X.reshape((-1,) + X.shape[-2:])
        out = np.stack([demosaic_array(m) for m in flat]) if len(flat) else np.zeros(flat.shape + (3,), np.uint8)
        return out.reshape(lead + X.shape[-2:] + (3,))


class SpoofSequenceClassifier(ClassifierMixin, BaseEstimator):
    """CNN + bidirectional LSTM over (T, H, W, 3) sequences.

    A full :class:`~seqpad.model.ModelConfig` passed as ``model_config``
    takes precedence over ``preset``, ``seq_len``, ``lstm_units`` and ``dtype``.

    ``classes_[1]`` is treated as the spoof class, so with string labels
    ``"live"``/``"spoof"`` column 1 of :meth:`predict_proba` is spoofness.
    """

    def __init__(self, preset="desk", seq_len=10, lstm_units=None, dtype="float64", lr=0.001,
                 batch_size=4, max_epochs=80, patience=20, val_fraction=0.1, random_state=0,
                 model_config=None):
        self.preset = preset
        self.seq_len = seq_len
        self.lstm_units = lstm_units
        self.dtype = dtype
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.random_state = random_state
        self.model_config = model_config

    def _model_config(self) -> model_mod.ModelConfig:
        if self.model_config is not None:
            return self.model_config
        if self.preset not in model_mod.PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(model_mod.PRESETS)}")
        cfg = model_mod.PRESETS[self.preset](seq_len=self.seq_len)
        if self.lstm_units is not None:
            cfg.lstm_units = int(self.lstm_units)
        cfg.dtype = self.dtype
        cfg.__post_init__()
        return cfg

    def _train_config(self) -> model_mod.TrainConfig:
        return model_mod.TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                                     patience=self.patience, seed=self.random_state,
                                     val_fraction=self.val_fraction)

    def init_model(self):
        """Build the untrained network for the current parameters (no fitting)."""
        return model_mod.build(self._model_config(), seed=self.random_state)

    def fit(self, X, y, groups=None):
        cfg = self._model_config()
        X = check_sequence_batch(X, cfg.seq_len, cfg.backbone.input_size, dtype=cfg.dtype)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        self.classes_, encoded = check_binary_labels(y)
        self.model_ = model_mod.build(cfg, seed=self.random_state)
        self.history_ = model_mod.train(self.model_, X, encoded, self._train_config(), groups=groups)
        return self

    @classmethod
    def from_model(cls, model: model_mod.Model, classes=("live", "spoof")) -> "SpoofSequenceClassifier":
        est = cls(seq_len=model.config.seq_len, dtype=model.config.dtype)
        est.model_ = model
        est.classes_ = np.asarray(classes)
        est.history_ = model.history
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        cfg = self.model_.config
        X = check_sequence_batch(X, cfg.seq_len, cfg.backbone.input_size, dtype=cfg.dtype)
        return self.model_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
