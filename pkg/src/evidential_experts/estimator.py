"""Scikit-learn estimator wrapping the multi-expert evidential classifier.

The estimator owns nothing algorithmic: it validates input, maps arbitrary
label values onto contiguous class indexes, and drives the training loop
and fused inference from the underlying modules.  It follows the sklearn
contract (bare `__init__`, trailing-underscore fitted attributes,
`get_params`/`set_params` via BaseEstimator), so it composes with
pipelines, grid search, and cross-validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .losses import AnnealSchedule, LossConfig
from .network import (
    NetworkConfig,
    TrainConfig,
    init_ensemble,
    load_checkpoint,
    save_checkpoint,
    train_model,
)
from .opinions import FusionConfig
from .evaluation import fused_outputs


def anneal_horizon_for(epochs: int, fraction: float = 0.6) -> int:
    """Default KL ramp horizon: the given fraction of the training run."""
    return max(1, round(fraction * epochs))


class EvidentialEnsembleClassifier(BaseEstimator, ClassifierMixin):
    """Multi-expert classifier with evidence-based uncertainty.

    Parameters
    ----------
    n_experts : number of evidence heads sharing one trunk.
    hidden_sizes : trunk layer widths.
    epochs, batch_size, learning_rate, momentum : SGD settings.
    gate_threshold : prefix-weight cutoff for engaging an expert.
    diversity_weight : coefficient of the expert-diversity term.
    anneal_fraction : fraction of epochs over which the KL penalty ramps in.
    kl_enabled : ablation switch for the KL penalty.
    fusion_temperature : softmax temperature for evidence fusion.
    random_state : seed for init and shuffling; fixes the whole run.
    """

    def __init__(self, n_experts=3, hidden_sizes=(256, 128), epochs=200,
                 batch_size=16, learning_rate=0.02, momentum=0.9,
                 gate_threshold=0.54, diversity_weight=0.01,
                 anneal_fraction=0.6, kl_enabled=True,
                 fusion_temperature=0.1, random_state=0):
        self.n_experts = n_experts
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.gate_threshold = gate_threshold
        self.diversity_weight = diversity_weight
        self.anneal_fraction = anneal_fraction
        self.kl_enabled = kl_enabled
        self.fusion_temperature = fusion_temperature
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.random_state,
            loss=LossConfig(
                gate_threshold=self.gate_threshold,
                diversity_weight=self.diversity_weight,
                anneal=AnnealSchedule(anneal_horizon_for(self.epochs, self.anneal_fraction)),
                kl_enabled=self.kl_enabled,
            ),
            fusion=FusionConfig(
                temperature=self.fusion_temperature,
                max_experts=self.n_experts,
            ),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least 2 classes to fit")
        cfg = self._train_config()
        model = init_ensemble(NetworkConfig(
            input_dim=X.shape[1],
            hidden_sizes=tuple(self.hidden_sizes),
            num_classes=self.classes_.shape[0],
            num_experts=self.n_experts,
            seed=self.random_state,
        ))
        history = train_model(model, X, y_idx, cfg)
        self.model_ = model
        self.train_config_ = cfg
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def _outputs(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features; expected {self.n_features_in_}"
            )
        return fused_outputs(
            self.model_, X, self.train_config_.fusion, self.gate_threshold
        )

    def predict(self, X):
        """Fused-opinion class predictions."""
        outputs = self._outputs(X)
        return self.classes_[outputs.predictions]

    def predict_proba(self, X):
        """Fused normalized Dirichlet probabilities, columns per classes_."""
        return self._outputs(X).probs

    def uncertainty(self, X):
        """Joint combined uncertainty in (0, 1] per sample."""
        return self._outputs(X).joint_uncertainty

    def n_engaged(self, X):
        """Number of engaged experts per sample (always >= 1)."""
        return self._outputs(X).engaged

    def save(self, path) -> None:
        """Write the fitted model and estimator parameters to a checkpoint."""
        check_is_fitted(self, "model_")
        configs = {
            "estimator_params": {k: _plain(v) for k, v in self.get_params().items()},
            "classes": [_plain(c) for c in self.classes_.tolist()],
        }
        save_checkpoint(self.model_, path, configs=configs, epoch=self.epochs)

    @classmethod
    def load(cls, path) -> "EvidentialEnsembleClassifier":
        """Rebuild a fitted estimator from a checkpoint written by save()."""
        model, meta = load_checkpoint(path)
        params = meta.get("configs", {}).get("estimator_params", {})
        if "hidden_sizes" in params:
            params["hidden_sizes"] = tuple(params["hidden_sizes"])
        est = cls(**params)
        est.model_ = model
        est.train_config_ = est._train_config()
        est.history_ = []
        est.n_features_in_ = model.config.input_dim
        classes = meta.get("configs", {}).get("classes")
        est.classes_ = (
            np.array(classes) if classes is not None
            else np.arange(model.config.num_classes)
        )
        return est


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value
