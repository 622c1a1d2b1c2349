"""Scikit-learn style estimator wrapping the dense network engine.

The regressor maps (N, 4) input rays — source position in mm plus transverse
direction — to (N, 4) output rays on the target plane, and composes with the
usual sklearn tooling (get_params/set_params, clone, pipelines, R^2 score).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import nn
from ._util import STREAM_SHUFFLE, keyed_rng
from .evaluation import ray_errors


class RayMlpRegressor(BaseEstimator, RegressorMixin):
    """Residual-skip MLP regressor trained with AdamW and a geometric
    learning-rate decay.

    Hidden layers are ReLU-activated and grouped into identity-residual
    blocks of ``skip_period`` layers. Inputs and targets are normalized
    per-feature to [-1, 1] from the training data; the loss is MSE in the
    normalized output space. Training is deterministic for a fixed seed.

    Parameters mirror the engine: see ``rayproxy.nn``.
    """

    def __init__(
        self,
        hidden_width: int = 256,
        hidden_layers: int = 6,
        skip_period: int = 3,
        epochs: int = 3000,
        batch_size: int = 4096,
        base_lr: float = 5e-4,
        final_lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-2,
        seed: int = 0,
    ):
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.skip_period = skip_period
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.final_lr = final_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y, eval_set=None, epoch_callback=None):
        """Train on (N, in) -> (N, out) pairs.

        eval_set: optional (X_test, y_test) scored each epoch with the ray
        metrics (positional um / angular degrees, assuming the 4-feature ray
        layout). epoch_callback(epoch, params, entry) runs after each epoch;
        ``entry`` is the history dict for that epoch.
        """
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64, ensure_2d=True)
        if len(X) != len(y):
            raise ValueError(f"X and y disagree on sample count: {len(X)} vs {len(y)}")
        self.n_features_in_ = X.shape[1]

        cfg = nn.MlpConfig(
            input_dim=X.shape[1],
            output_dim=y.shape[1],
            hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers,
            skip_period=self.skip_period,
            weight_init_seed=self.seed,
        )
        params = nn.init_params(cfg)
        params.input_norm = nn.fit_normalization(X)
        params.output_norm = nn.fit_normalization(y)
        state = nn.init_optimizer(
            params,
            base_lr=self.base_lr, final_lr=self.final_lr,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            weight_decay=self.weight_decay,
        )

        n = len(X)
        bs = min(self.batch_size, n)
        shuffle_rng = keyed_rng(self.seed, STREAM_SHUFFLE)
        history: list[dict] = []
        for epoch in range(self.epochs):
            lr = nn.lr_at(state, epoch, self.epochs)
            perm = shuffle_rng.permutation(n)
            batch_losses = []
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                loss, grads = nn.loss_and_grads(params, X[idx], y[idx])
                nn.adamw_step(state, params, grads, lr=lr)
                batch_losses.append(loss)
            for arr in params.arrays():
                if not np.all(np.isfinite(arr)):
                    raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(batch_losses)),
                "test_pos_um": float("nan"),
                "test_ang_deg": float("nan"),
            }
            if eval_set is not None:
                pos, ang = ray_errors(nn.forward(params, eval_set[0]), np.asarray(eval_set[1]))
                entry["test_pos_um"] = float(np.mean(pos))
                entry["test_ang_deg"] = float(np.mean(ang))
            history.append(entry)
            if epoch_callback is not None:
                epoch_callback(epoch, params, entry)

        self.params_ = params
        self.history_ = history
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return nn.forward(self.params_, X)

    @classmethod
    def from_params(cls, params: nn.MlpParams) -> "RayMlpRegressor":
        """Wrap existing parameters (e.g. a loaded checkpoint) as a fitted
        estimator."""
        cfg = params.config
        est = cls(
            hidden_width=cfg.hidden_width,
            hidden_layers=cfg.hidden_layers,
            skip_period=cfg.skip_period,
            seed=cfg.weight_init_seed,
        )
        est.params_ = params
        est.history_ = []
        est.n_features_in_ = cfg.input_dim
        return est
