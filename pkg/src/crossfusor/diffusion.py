"""History-scaled DDPM: noise scale, schedule, forward and reverse chains.

Noise throughout is drawn from N(0, diag(sigma2)) instead of N(0, I), with
sigma2 = softplus(time-mean of the encoded history). With sigma2 = 1 every
function here is the textbook DDPM step.

Steps are 1-based: ``k`` ranges over 1..K and ``schedule.beta[k - 1]`` is
beta_k. The variational bound over the whole chain is not optimized; the
training objective is the simplified noise-regression loss, see
:func:`crossfusor.training.training_step`.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class NoiseScale:
    mu: torch.Tensor | None
    sigma2: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return torch.sqrt(self.sigma2)

    @classmethod
    def isotropic(cls, shape, dtype=torch.float64) -> NoiseScale:
        return cls(mu=None, sigma2=torch.ones(shape, dtype=dtype))


def compute_noise_scale(z_stu_his: torch.Tensor) -> NoiseScale:
    """Mean over the time axis (dim -2), then softplus."""
    mu = z_stu_his.mean(dim=-2)
    return NoiseScale(mu=mu, sigma2=softplus(mu))


def softplus(x: torch.Tensor) -> torch.Tensor:
    """log(1 + exp(x)) without overflow and without torch's linear cutoff."""
    return torch.logaddexp(x, torch.zeros_like(x))


class DiffusionSchedule:
    """Linear beta schedule from ``beta_start`` to ``beta_end`` over ``n_steps``."""

    def __init__(self, n_steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02,
                 dtype=torch.float64):
        if n_steps < 2:
            raise ValueError("need at least 2 diffusion steps")
        if not 0 < beta_start < beta_end < 1:
            raise ValueError(f"require 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.beta = torch.linspace(beta_start, beta_end, n_steps, dtype=torch.float64)
        self.alpha = 1.0 - self.beta
        self.alpha_bar = torch.cumprod(self.alpha, dim=0)
        if dtype != torch.float64:
            self.to(dtype)

    def to(self, dtype) -> DiffusionSchedule:
        self.beta = self.beta.to(dtype)
        self.alpha = self.alpha.to(dtype)
        self.alpha_bar = self.alpha_bar.to(dtype)
        return self

    @property
    def K(self) -> int:
        return self.n_steps

    def config(self) -> dict:
        return {"n_steps": self.n_steps, "beta_start": self.beta_start, "beta_end": self.beta_end}

    def check_step(self, k, low: int = 1):
        kt = torch.as_tensor(k)
        if (kt < low).any() or (kt > self.n_steps).any():
            raise ValueError(f"step {k} outside [{low}, {self.n_steps}]")

    def _at(self, table, k, like):
        """Gather ``table[k - 1]`` shaped to broadcast against ``like``."""
        k = torch.as_tensor(k)
        vals = table[k - 1].to(like.dtype)
        if vals.ndim:
            vals = vals.reshape(vals.shape + (1,) * (like.ndim - vals.ndim))
        return vals


def _randn_like(x: torch.Tensor, rng) -> torch.Tensor:
    """Standard normal noise shaped like ``x``.

    ``rng`` may be one generator or a sequence with one generator per
    leading-axis element, so a window's draws do not depend on batching.
    """
    if isinstance(rng, (list, tuple)):
        if len(rng) != x.shape[0]:
            raise ValueError("need one generator per batch element")
        return torch.stack([torch.randn(x.shape[1:], generator=g, dtype=x.dtype) for g in rng])
    return torch.randn(x.shape, generator=rng, dtype=x.dtype)


def sample_scaled_noise(scale: NoiseScale, rng, shape=None) -> torch.Tensor:
    """epsilon = sigma * epsilon0, epsilon0 ~ N(0, I)."""
    sigma = scale.sigma
    if shape is not None:
        sigma = sigma.expand(shape)
    return sigma * _randn_like(sigma, rng)


def forward_step(x_prev, k, schedule: DiffusionSchedule, scale: NoiseScale, rng=None, noise=None):
    """One forward transition: sqrt(alpha_k) x_{k-1} + sqrt(beta_k) eps."""
    schedule.check_step(k)
    eps = sample_scaled_noise(scale, rng, x_prev.shape) if noise is None else noise
    return (torch.sqrt(schedule._at(schedule.alpha, k, x_prev)) * x_prev
            + torch.sqrt(schedule._at(schedule.beta, k, x_prev)) * eps)


def forward_closed_form(x0, k, schedule: DiffusionSchedule, scale: NoiseScale, rng=None, noise=None):
    """Jump straight to step k: sqrt(abar_k) x0 + sqrt(1 - abar_k) eps."""
    schedule.check_step(k)
    eps = sample_scaled_noise(scale, rng, x0.shape) if noise is None else noise
    abar = schedule._at(schedule.alpha_bar, k, x0)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps


def reverse_mean(x_k, k, eps_hat, schedule: DiffusionSchedule):
    alpha = schedule._at(schedule.alpha, k, x_k)
    beta = schedule._at(schedule.beta, k, x_k)
    abar = schedule._at(schedule.alpha_bar, k, x_k)
    return (x_k - beta / torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(alpha)


def reverse_step(x_k, k: int, eps_hat, schedule: DiffusionSchedule, scale: NoiseScale, rng=None, noise=None):
    """Ancestral step x_k -> x_{k-1} with fixed variance beta_k * sigma2.

    ``noise`` overrides the standard-normal draw z; at k = 1 the mean is
    returned without noise.
    """
    if k < 1:
        raise ValueError(f"reverse step needs k >= 1, got {k}")
    schedule.check_step(k)
    mean = reverse_mean(x_k, k, eps_hat, schedule)
    if k == 1:
        return mean
    z = _randn_like(x_k, rng) if noise is None else noise
    return mean + torch.sqrt(schedule._at(schedule.beta, k, x_k)) * (scale.sigma * z)


def predict_x0(x_k, k, eps_hat, schedule: DiffusionSchedule):
    """Clean-signal estimate implied by a noise prediction at step k."""
    abar = schedule._at(schedule.alpha_bar, k, x_k)
    return (x_k - torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(abar)


def sample_trajectory(scale: NoiseScale, schedule: DiffusionSchedule, denoiser, context, rng,
                      shape=None, callback=None):
    """Run the reverse chain from x_K ~ N(0, diag(sigma2)) down to x_0.

    ``denoiser(x_k, k, context)`` returns the predicted scaled noise.
    ``callback(k, x_k, eps_hat)`` is invoked before every reverse step and
    once more with ``(0, x_0, None)``.
    """
    sigma = scale.sigma if shape is None else scale.sigma.expand(shape)
    x = sigma * _randn_like(sigma, rng)
    for k in range(schedule.n_steps, 0, -1):
        eps_hat = denoiser(x, k, context)
        if callback is not None:
            callback(k, x, eps_hat)
        x = reverse_step(x, k, eps_hat, schedule, scale, rng)
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite sample at reverse step {k}")
    if callback is not None:
        callback(0, x, None)
    return x
