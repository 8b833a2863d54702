"""Scikit-learn style wrapper around the spiking classifier.

Lets the spiking network slot into pipelines, grid search and
cross-validation. All the heavy lifting lives in :mod:`spikefed.network`;
this class only adapts the fit/predict surface and input validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import build_network_config
from .network import TrainConfig, forward_batch, init_params, train_local

__all__ = ["SNNClassifier"]


class SNNClassifier(ClassifierMixin, BaseEstimator):
    """Integrate-and-fire spiking network classifier.

    Parameters
    ----------
    hidden_layers : str
        Layer tokens, e.g. ``"dense:100"`` or ``"conv:4x3x2,dense:64"``;
        the output layer is sized from the training labels.
    t_steps : int
        Timesteps the static input is presented for.
    u_theta, u_reset : float
        Firing threshold and post-spike reset potential.
    surrogate_alpha : float
        Sharpness of the arctan surrogate gradient.
    lr, epochs, batch_size, seed
        SGD settings; the seed controls both weight init and shuffling.
    """

    def __init__(self, hidden_layers: str = "dense:100", t_steps: int = 12,
                 u_theta: float = 1.0, u_reset: float = 0.0,
                 surrogate_alpha: float = 2.0, lr: float = 0.1, epochs: int = 5,
                 batch_size: int = 128, seed: int = 0):
        self.hidden_layers = hidden_layers
        self.t_steps = t_steps
        self.u_theta = u_theta
        self.u_reset = u_reset
        self.surrogate_alpha = surrogate_alpha
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        self.net_config_ = build_network_config(
            self.hidden_layers, (X.shape[1],), len(self.classes_),
            t_steps=self.t_steps, u_theta=self.u_theta, u_reset=self.u_reset,
            surrogate_alpha=self.surrogate_alpha)
        train_cfg = TrainConfig(learning_rate=self.lr, epochs=self.epochs,
                                batch_size=self.batch_size, seed=self.seed)
        params = init_params(self.net_config_, self.seed)
        self.params_ = train_local(params, X, y_enc, train_cfg, self.net_config_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forward_batch(self.params_, X, self.net_config_).class_probs

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
