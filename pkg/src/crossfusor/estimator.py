"""scikit-learn style front end for the Crossfusor model."""
from __future__ import annotations

import hashlib
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .diffusion import predict_x0
from .model import Crossfusor, ModelConfig
from .platoon import fit_normalization
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .validation import check_future, check_history

logger = logging.getLogger(__name__)


def window_seed(random_state: int, history: np.ndarray, draw: int = 0) -> int:
    """Seed derived from the window contents, so a window's sample does not
    depend on its position in a batch or on the batch size."""
    digest = hashlib.blake2b(np.ascontiguousarray(history, dtype=np.float64).tobytes(), digest_size=8).digest()
    seq = np.random.SeedSequence([int(random_state), int.from_bytes(digest, "little"), int(draw)])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


class CrossfusorRegressor(BaseEstimator, RegressorMixin):
    """Predicts the study vehicle's future positions from a platoon history.

    ``X`` is (n, H, 8) in :data:`crossfusor.platoon.CHANNELS` order (feet,
    feet per second); ``y`` is (n, F) future study-vehicle positions.
    Predictions are reverse-diffusion samples, averaged when
    ``n_samples > 1``.
    """

    def __init__(self, hidden_size=50, gru_layers=2, n_heads=5, ff_size=100,
                 unet_channels=(8, 16, 32, 64, 128), n_steps=200, beta_start=1e-4, beta_end=0.02,
                 ablations=(), stop_scale_grad=True, future_reference="constant_velocity", learning_rate=1e-3, batch_size=64, epochs=10,
                 max_steps=None, weight_decay=0.01, grad_clip=1.0, n_samples=1, random_state=0,
                 dtype="float32", predict_batch_size=512, checkpoint_dir=None):
        self.hidden_size = hidden_size
        self.gru_layers = gru_layers
        self.n_heads = n_heads
        self.ff_size = ff_size
        self.unet_channels = unet_channels
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.ablations = ablations
        self.stop_scale_grad = stop_scale_grad
        self.future_reference = future_reference
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.n_samples = n_samples
        self.random_state = random_state
        self.dtype = dtype
        self.predict_batch_size = predict_batch_size
        self.checkpoint_dir = checkpoint_dir

    def _model_config(self, history_frames, future_frames):
        return ModelConfig(
            history_frames=history_frames, future_frames=future_frames, hidden_size=self.hidden_size,
            gru_layers=self.gru_layers, n_heads=self.n_heads, ff_size=self.ff_size,
            unet_channels=tuple(self.unet_channels), n_steps=self.n_steps, beta_start=self.beta_start,
            beta_end=self.beta_end, ablations=tuple(self.ablations), stop_scale_grad=self.stop_scale_grad)

    def _train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.random_state, weight_decay=self.weight_decay, max_steps=self.max_steps,
                           grad_clip=self.grad_clip, dtype=self.dtype)

    def fit(self, X, y, resume=False):
        X = check_history(X)
        y = check_future(y, len(X))
        cfg = self._train_config()
        self.stats_ = fit_normalization(X, y, self.future_reference)
        torch.manual_seed(self.random_state)
        self.model_ = Crossfusor(self._model_config(X.shape[1], y.shape[1])).to(cfg.torch_dtype)
        ref = self.stats_.reference(X, y.shape[1])
        result = train(self.model_, self.stats_.transform_history(X), self.stats_.transform_future(y, ref),
                       cfg, stats=self.stats_, checkpoint_dir=self.checkpoint_dir, resume=resume)
        self.loss_curve_ = result.epoch_loss
        self.step_loss_ = result.step_loss
        self.n_iter_ = result.n_steps
        self.n_features_in_ = X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("CrossfusorRegressor is not fitted yet")

    def _generators(self, X, draw):
        return [torch.Generator().manual_seed(window_seed(self.random_state, h, draw)) for h in X]

    def sample(self, X, draw: int = 0) -> np.ndarray:
        """One reverse-diffusion sample per window, in feet."""
        self._check_fitted()
        X = check_history(X, self.model_.config.history_frames)
        dtype = next(self.model_.parameters()).dtype
        out = []
        self.model_.eval()
        for s in range(0, len(X), self.predict_batch_size):
            xb = X[s:s + self.predict_batch_size]
            h = torch.as_tensor(self.stats_.transform_history(xb), dtype=dtype)
            z = self.model_.sample(h, self._generators(xb, draw)).numpy()
            out.append(self.stats_.inverse_future(z, self.stats_.reference(xb)))
        return np.concatenate(out)

    def predict(self, X, n_samples=None):
        n_samples = self.n_samples if n_samples is None else n_samples
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        return np.mean([self.sample(X, draw=d) for d in range(n_samples)], axis=0)

    def denoising_trace(self, history, steps, draw: int = 0) -> dict:
        """Intermediate reverse-chain states for one window.

        Returns {k: (x_k in feet, per-frame |x_k - x0_hat(k)| in feet)} for
        each requested k in [0, K]; x0_hat(0) is x_0 itself.
        """
        self._check_fitted()
        K = self.model_.schedule.n_steps
        steps = sorted({int(k) for k in steps}, reverse=True)
        if any(k < 0 or k > K for k in steps):
            raise ValueError(f"steps must lie in [0, {K}]")
        X = check_history(history, self.model_.config.history_frames)[:1]
        dtype = next(self.model_.parameters()).dtype
        ref = self.stats_.reference(X)
        h = torch.as_tensor(self.stats_.transform_history(X), dtype=dtype)
        trace = {}

        def record(k, x_k, eps_hat):
            if k not in steps:
                return
            x0_hat = x_k if eps_hat is None else predict_x0(x_k, k, eps_hat, self.model_.schedule)
            feet = self.stats_.inverse_future(x_k.numpy(), ref)[0]
            feet_hat = self.stats_.inverse_future(x0_hat.numpy(), ref)[0]
            trace[k] = (feet, np.abs(feet - feet_hat))

        self.model_.sample(h, self._generators(X, draw), callback=record)
        return trace

    def save(self, path, extra=None):
        self._check_fitted()
        extra = {"estimator_params": _jsonable(self.get_params()), "loss_curve": self.loss_curve_,
                 "n_steps_trained": self.n_iter_, **(extra or {})}
        return save_checkpoint(path, self.model_, self.stats_, epoch=len(self.loss_curve_),
                               loss=self.loss_curve_[-1] if self.loss_curve_ else None,
                               train_config=self._train_config(), extra=extra)

    @classmethod
    def load(cls, path):
        model, stats, manifest, _ = load_checkpoint(path)
        params = dict(manifest.get("estimator_params") or {})
        for key in ("unet_channels", "ablations"):
            if key in params:
                params[key] = tuple(params[key])
        est = cls(**params)
        est.model_ = model
        est.stats_ = stats
        est.loss_curve_ = manifest.get("loss_curve", [])
        est.n_iter_ = manifest.get("n_steps_trained", 0)
        est.n_features_in_ = 8
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out
