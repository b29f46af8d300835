"""scikit-learn style classifier wrapping the trainers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .network import predictive_proba
from .training import IMBConfig, train


class IMBClassifier(ClassifierMixin, BaseEstimator):
    """Binary stochastic network trained with JointIMB, GreedyIMB or MLE.

    Inputs must lie in [0, 1]. Labels may be any hashable values; they are
    encoded to ``0..K-1`` internally and decoded by :meth:`predict`.
    Predictions average ``n_samples`` sampled paths drawn from a stream fixed
    by ``random_state``, so repeated calls agree.
    """

    def __init__(
        self,
        hidden=(10, 8, 6, 4),
        algorithm="joint",
        beta=1e-4,
        gamma=1.0,
        n_samples=32,
        optimizer="sgd",
        learning_rate=None,
        epochs=100,
        batch_size=128,
        deterministic=False,
        init_scale=1.0,
        random_state=0,
    ):
        self.hidden = hidden
        self.algorithm = algorithm
        self.beta = beta
        self.gamma = gamma
        self.n_samples = n_samples
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.deterministic = deterministic
        self.init_scale = init_scale
        self.random_state = random_state

    def _config(self) -> IMBConfig:
        return IMBConfig(
            hidden=tuple(self.hidden),
            algorithm=self.algorithm,
            beta=self.beta,
            gamma=self.gamma,
            n_samples=self.n_samples,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            deterministic=self.deterministic,
            init_scale=self.init_scale,
            seed=int(self.random_state),
        )

    @staticmethod
    def _check_range(X):
        if X.size and (X.min() < 0 or X.max() > 1):
            raise ValueError("IMBClassifier expects features scaled to [0, 1]")

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self._check_range(X)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("IMBClassifier needs at least two classes")
        config = self._config()
        dataset = Dataset(X, self._encoder.transform(y), len(self.classes_), "custom")
        self.log_ = train(dataset, config)
        self.params_ = self.log_.params
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        self._check_range(X)
        rng = np.random.default_rng([int(self.random_state), 0x55])
        return predictive_proba(self.params_, X, self.n_samples, rng, deterministic=self.deterministic)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]
