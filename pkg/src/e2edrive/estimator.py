"""scikit-learn style wrapper around :class:`DrivingModel` training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig, TrainConfig
from .evaluation import evaluate_dataset
from .model import DrivingModel
from .training import Trainer
from .validation import check_episodes


class DrivingPolicy(BaseEstimator):
    """Fit on episodes, predict ``[n, 10, 6]`` trajectories, score by mean composite.

    ``X`` is a sequence of episodes; targets travel inside each episode, so
    ``y`` is accepted for API symmetry and ignored. With ``warm_start`` a
    second ``fit`` continues from the current weights (and, in LORA mode,
    the current adapters).
    """

    def __init__(self, d_model=128, n_layers=4, n_heads=4, d_ff=512, lr=3e-4, batch_size=8,
                 steps=1000, lambda_text=0.5, mode="full", seed=0, warm_start=False):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.lambda_text = lambda_text
        self.mode = mode
        self.seed = seed
        self.warm_start = warm_start

    @classmethod
    def from_model(cls, model: DrivingModel, **params) -> "DrivingPolicy":
        """Wrap an existing (e.g. loaded) model as a fitted estimator."""
        cfg = model.config
        est = cls(d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads, d_ff=cfg.d_ff, **params)
        est.model_ = model
        est.log_lines_ = []
        return est

    def _model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, steps=self.steps,
                           lambda_text=self.lambda_text, mode=self.mode, seed=self.seed)

    def fit(self, X, y=None):
        episodes = check_episodes(X, require_targets=True)
        train_cfg = self._train_config()
        if self.warm_start and hasattr(self, "model_"):
            model = self.model_
        else:
            model = DrivingModel(self._model_config(), seed=self.seed)
        if train_cfg.mode == "lora":
            model.enable_lora(self.seed)
        trainer = Trainer(model, episodes, train_cfg)
        trainer.run(train_cfg.steps)
        self.model_ = model
        self.log_lines_ = trainer.log_lines
        self.n_steps_ = trainer.step_count
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        preds = self.model_.predict_batch(check_episodes(X), with_text=False)
        return np.stack([traj for traj, _ in preds])

    def predict_text(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        return [text for _, text in self.model_.predict_batch(check_episodes(X), with_text=True)]

    def score(self, X, y=None) -> float:
        """Mean composite driving score; episodes need a scenario for collision and route checks."""
        check_is_fitted(self, "model_")
        return evaluate_dataset(self.model_, check_episodes(X, require_targets=True), with_text=False).mean_composite
