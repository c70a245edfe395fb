"""Noise-regression training, checkpoints, evaluation and the ablation harness."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import forward_closed_form
from .metrics import HORIZON_SECONDS, horizon_metrics
from .model import ABLATIONS, Crossfusor, ModelConfig
from .platoon import NormalizationStats

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    weight_decay: float = 0.01
    max_steps: int | None = None
    grad_clip: float | None = 1.0
    dtype: str = "float64"
    checkpoint_every: int = 1   # epochs

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]


def training_loss(model: Crossfusor, history, future, generator, denoiser=None, return_parts=False):
    """Mean squared error between the scaled noise and its prediction.

    Per element: encode the history, draw k ~ U{1..K} and eps ~ N(0,
    diag(sigma2)), diffuse the future to step k in closed form, predict the
    noise. ``denoiser(x_k, k, c)`` overrides the model's U-Net.

    Only this simplified regression is optimized. The full variational bound
    adds per-step KL terms between Gaussian posteriors; with the reverse
    variance fixed those terms reduce to weighted versions of the same noise
    error plus constants, so no separate training path exists for them.
    """
    _, scale, c = model.encode(history)
    B, F = future.shape
    k = torch.randint(1, model.schedule.n_steps + 1, (B,), generator=generator)
    eps0 = torch.randn((B, F), generator=generator, dtype=future.dtype)
    eps = scale.sigma * eps0
    x_k = forward_closed_form(future, k, model.schedule, scale, noise=eps)
    eps_hat = (denoiser or model.predict_noise)(x_k, k, c)
    per_sample = ((eps - eps_hat) ** 2).mean(dim=-1)
    loss = per_sample.mean()
    if not torch.isfinite(loss):
        bad = int(torch.nonzero(~torch.isfinite(per_sample))[0, 0])
        raise FloatingPointError(f"non-finite loss at batch element {bad} (k={int(k[bad])})")
    if return_parts:
        return loss, {"k": k, "eps": eps, "eps_hat": eps_hat, "sigma2": scale.sigma2, "per_sample": per_sample}
    return loss


def training_step(model: Crossfusor, history, future, generator, denoiser=None):
    """Loss and its gradient w.r.t. every named parameter."""
    loss = training_loss(model, history, future, generator, denoiser)
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return loss.item(), {n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads)}


# checkpoints: weights.npz (named arrays) + manifest.json

def save_checkpoint(path, model: Crossfusor, stats: NormalizationStats | None = None, *, epoch: int = 0,
                    loss: float | None = None, optimizer=None, train_config: TrainConfig | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    groups = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        for idx, st in sd["state"].items():
            for key, val in st.items():
                arrays[f"optim/{idx}/{key}"] = torch.as_tensor(val).cpu().numpy()
        groups = sd["param_groups"]
    tmp = path / "weights.tmp.npz"
    np.savez(tmp, **arrays)
    tmp.replace(path / "weights.npz")
    manifest = {
        "format": "crossfusor-checkpoint",
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "config_hash": model.config.digest(),
        "train_config": asdict(train_config) if train_config else None,
        "epoch": epoch,
        "loss": loss,
        "normalization": stats.to_dict() if stats is not None else None,
        "optimizer_param_groups": groups,
        **(extra or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path, dtype=None):
    """Return (model, stats, manifest, optimizer_state or None)."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version", 0) > CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"checkpoint format {manifest['format_version']} is newer than supported "
                         f"{CHECKPOINT_FORMAT_VERSION}")
    model = Crossfusor(ModelConfig.from_dict(manifest["model_config"]))
    with np.load(path / "weights.npz") as z:
        arrays = {k: z[k] for k in z.files}
    state = {k[len("model/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model/")}
    if dtype is None:
        dtype = next(iter(state.values())).dtype
    model.to(dtype)
    model.load_state_dict(state)
    stats = NormalizationStats.from_dict(manifest["normalization"]) if manifest.get("normalization") else None
    optim_state = None
    if manifest.get("optimizer_param_groups") is not None:
        st = {}
        for k, v in arrays.items():
            if k.startswith("optim/"):
                _, idx, key = k.split("/", 2)
                st.setdefault(int(idx), {})[key] = torch.from_numpy(v)
        optim_state = {"state": st, "param_groups": manifest["optimizer_param_groups"]}
    return model, stats, manifest, optim_state


@dataclass
class TrainResult:
    epoch_loss: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)
    n_steps: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss"])
            for i, v in enumerate(self.epoch_loss, 1):
                w.writerow([i, repr(v)])


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def train(model: Crossfusor, history: np.ndarray, future: np.ndarray, cfg: TrainConfig, *,
          stats: NormalizationStats | None = None, checkpoint_dir=None, resume: bool = False,
          log_every: int = 0) -> TrainResult:
    """Fit ``model`` on normalized arrays with seeded shuffling.

    Deterministic for a fixed seed in single-process double precision. With
    ``checkpoint_dir`` a checkpoint is written every ``cfg.checkpoint_every``
    epochs; ``resume`` continues from the one found there.
    """
    if len(history) == 0:
        raise ValueError("empty training split")
    dtype = cfg.torch_dtype
    model.to(dtype)
    X = torch.as_tensor(history, dtype=dtype)
    Y = torch.as_tensor(future, dtype=dtype)
    opt = make_optimizer(model, cfg)
    result = TrainResult()
    start_epoch = 0
    if resume and checkpoint_dir and (Path(checkpoint_dir) / "manifest.json").exists():
        loaded, _, manifest, optim_state = load_checkpoint(checkpoint_dir, dtype)
        model.load_state_dict(loaded.state_dict())
        if optim_state is not None:
            opt.load_state_dict(optim_state)
        start_epoch = manifest["epoch"]
        result.epoch_loss = list(manifest.get("epoch_loss", []))
        result.n_steps = manifest.get("n_steps", 0)
        logger.info("resumed from epoch %d", start_epoch)

    n = len(X)
    t0 = time.time()
    for epoch in range(start_epoch, cfg.epochs):
        # per-epoch streams keep resumed runs identical to uninterrupted ones
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        gen = torch.Generator().manual_seed(cfg.seed * 100003 + epoch)
        model.train()
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[s:s + cfg.batch_size])
            loss = training_loss(model, X[idx], Y[idx], gen)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            losses.append(loss.item())
            result.n_steps += 1
            if log_every and result.n_steps % log_every == 0:
                logger.info("step %d loss %.5f (%.1fs)", result.n_steps, losses[-1], time.time() - t0)
            if cfg.max_steps and result.n_steps >= cfg.max_steps:
                break
        result.step_loss.extend(losses)
        result.epoch_loss.append(float(np.mean(losses)))
        logger.info("epoch %d mean loss %.5f", epoch + 1, result.epoch_loss[-1])
        stop = bool(cfg.max_steps and result.n_steps >= cfg.max_steps)
        if checkpoint_dir and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs or stop):
            try:
                save_checkpoint(checkpoint_dir, model, stats, epoch=epoch + 1, loss=result.epoch_loss[-1],
                                optimizer=opt, train_config=cfg,
                                extra={"epoch_loss": result.epoch_loss, "n_steps": result.n_steps})
            except OSError as exc:
                raise RuntimeError(f"checkpoint write failed at epoch {epoch + 1}: {exc}") from exc
        if stop:
            break
    model.eval()
    return result


@dataclass
class EvalReport:
    """Per-model RMSE/FDE/ADE at each horizon, in feet."""

    seconds: tuple = HORIZON_SECONDS
    rows: dict = field(default_factory=dict)
    n_windows: int = 0
    config_hash: str = ""
    failures: dict = field(default_factory=dict)

    def add(self, name, truth, pred):
        self.rows[name] = horizon_metrics(truth, pred, self.seconds)

    def table(self, metric="rmse"):
        return {name: m[metric] for name, m in self.rows.items()}

    def write_csv(self, path, metrics=("rmse", "fde", "ade")):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "metric"] + [f"{s:g}s" for s in self.seconds])
            for name, m in self.rows.items():
                for metric in metrics:
                    w.writerow([name, metric] + [f"{v:.6f}" for v in m[metric]])
            for name, msg in self.failures.items():
                w.writerow([name, "failed"] + [msg] + [""] * (len(self.seconds) - 1))

    def to_dict(self):
        return asdict(self)


def evaluate(estimator, X, y, n_samples: int | None = None, baseline=True, name="crossfusor",
             seconds=HORIZON_SECONDS) -> EvalReport:
    """Score a fitted estimator (and optionally the CV baseline) on raw windows."""
    from .baselines import ConstantVelocityRegressor

    if len(X) == 0:
        raise ValueError("empty test split")
    report = EvalReport(seconds=tuple(seconds), n_windows=len(X))
    if hasattr(estimator, "model_"):
        report.config_hash = estimator.model_.config.digest()
    kwargs = {} if n_samples is None else {"n_samples": n_samples}
    report.add(name, y, estimator.predict(X, **kwargs))
    if baseline:
        cv = ConstantVelocityRegressor(n_future=np.shape(y)[1]).fit(X, y)
        report.add("cv", y, cv.predict(X))
    return report


VARIANT_NAMES = {
    (): "crossfusor",
    ("no_noise_scaling",): "w/o noise scaling",
    ("no_hist_encoding",): "w/o hist encoding",
    ("no_cross_attention",): "w/o cross-attention",
}


def run_ablations(make_estimator, X_train, y_train, X_test, y_test, n_samples=None, on_fitted=None,
                  seconds=HORIZON_SECONDS) -> EvalReport:
    """Train and score the full model and the three single-component ablations.

    ``make_estimator(ablations)`` returns an unfitted estimator; all variants
    share seed and data. A failing variant is reported, not raised.
    ``on_fitted(name, estimator)`` lets callers inspect each trained variant.
    """
    report = EvalReport(seconds=tuple(seconds), n_windows=len(X_test))
    for flags, name in VARIANT_NAMES.items():
        assert set(flags) <= set(ABLATIONS)
        try:
            est = make_estimator(flags).fit(X_train, y_train)
            kwargs = {} if n_samples is None else {"n_samples": n_samples}
            report.add(name, y_test, est.predict(X_test, **kwargs))
            if on_fitted is not None:
                on_fitted(name, est)
        except Exception as exc:  # noqa: BLE001 - partial report on any variant failure
            logger.exception("variant %s failed", name)
            report.failures[name] = f"{type(exc).__name__}: {exc}"
    return report
