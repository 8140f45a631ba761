"""Prompt-embedding inversion: adapt text embeddings to an image by gradient
descent on the denoiser's noise-prediction error at random noise levels.

The optimizer is plain gradient descent on the full embedding. Timesteps are
sampled uniformly over [1, num_steps] and noise is resampled each iteration,
so a run is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .backends.base import Backend
from .diffusion import Latent, NoiseSchedule, forward_diffuse


@dataclass(frozen=True)
class InversionConfig:
    iterations: int = 100
    learning_rate: float = 1e-4
    batch_timesteps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_timesteps < 1:
            raise ValueError("batch_timesteps must be >= 1")

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("a training run needs at least one iteration")


def inversion_loss(
    c_text: np.ndarray,
    z0: Latent,
    t: int,
    eps: np.ndarray,
    backend: Backend,
    schedule: NoiseSchedule,
) -> float:
    """Euclidean norm of (predicted noise - true noise) at one (t, eps) draw."""
    z_t = forward_diffuse(z0, t, eps, schedule)
    eps_hat = backend.predict_eps(z_t.data, t, c_text)
    return float(np.linalg.norm(eps_hat - eps))


def loss_gradient(
    c_text: np.ndarray,
    z0: Latent,
    t: int,
    eps: np.ndarray,
    backend: Backend,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Analytic gradient of inversion_loss w.r.t. the embedding (via the backend VJP)."""
    if not backend.caps.supports_grad_wrt_embedding:
        raise ValueError(f"{type(backend).__name__} does not support embedding gradients")
    z_t = forward_diffuse(z0, t, eps, schedule)
    residual = backend.predict_eps(z_t.data, t, c_text) - eps
    norm = float(np.linalg.norm(residual))
    if norm < 1e-12:
        return np.zeros_like(np.asarray(c_text, dtype=np.float64))
    return backend.eps_grad_vjp(z_t.data, t, c_text, residual / norm)


def _draw(rng: np.random.Generator, schedule: NoiseSchedule, shape: tuple) -> tuple[int, np.ndarray]:
    t = int(rng.integers(1, schedule.num_steps + 1))
    return t, rng.standard_normal(shape)


def invert_prompt(
    initial: np.ndarray,
    z0: Latent,
    cfg: InversionConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> np.ndarray:
    """Optimize the entire embedding against one latent.

    With iterations = 0 the initial embedding is returned unchanged
    (evaluation mode).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    c = np.asarray(initial, dtype=np.float64).copy()
    shape = z0.data.shape
    for step in range(cfg.iterations):
        grad = np.zeros_like(c)
        loss_acc = 0.0
        for _ in range(cfg.batch_timesteps):
            t, eps = _draw(rng, schedule, shape)
            grad += loss_gradient(c, z0, t, eps, backend, schedule)
            loss_acc += inversion_loss(c, z0, t, eps, backend, schedule)
        grad /= cfg.batch_timesteps
        c -= cfg.learning_rate * grad
        if on_step is not None:
            on_step(step, loss_acc / cfg.batch_timesteps)
    return c


def invert_shared_negative(
    initial: np.ndarray,
    z0_a: Latent,
    z0_b: Latent,
    cfg: InversionConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> np.ndarray:
    """Optimize one negative embedding against the mean loss of both latents.

    The pair shares the result: attach the same embedding to both images'
    conditioning.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    c = np.asarray(initial, dtype=np.float64).copy()
    shape = z0_a.data.shape
    for step in range(cfg.iterations):
        grad = np.zeros_like(c)
        loss_acc = 0.0
        for _ in range(cfg.batch_timesteps):
            t, eps = _draw(rng, schedule, shape)
            for z0 in (z0_a, z0_b):
                grad += 0.5 * loss_gradient(c, z0, t, eps, backend, schedule)
                loss_acc += 0.5 * inversion_loss(c, z0, t, eps, backend, schedule)
        grad /= cfg.batch_timesteps
        c -= cfg.learning_rate * grad
        if on_step is not None:
            on_step(step, loss_acc / cfg.batch_timesteps)
    return c


def gradient_check(
    c: np.ndarray,
    z0: Latent,
    t: int,
    eps: np.ndarray,
    backend: Backend,
    schedule: NoiseSchedule,
    h: float = 1e-5,
    num_coords: int = 24,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between the analytic gradient and central differences
    over a random coordinate subset."""
    if rng is None:
        rng = np.random.default_rng(0)
    c = np.asarray(c, dtype=np.float64)
    analytic = loss_gradient(c, z0, t, eps, backend, schedule)
    coords = rng.choice(c.size, size=min(num_coords, c.size), replace=False)
    worst = 0.0
    flat = c.ravel()
    for i in coords:
        bumped = flat.copy()
        bumped[i] += h
        lo_plus = inversion_loss(bumped.reshape(c.shape), z0, t, eps, backend, schedule)
        bumped[i] -= 2 * h
        lo_minus = inversion_loss(bumped.reshape(c.shape), z0, t, eps, backend, schedule)
        numeric = (lo_plus - lo_minus) / (2 * h)
        denom = max(abs(analytic.ravel()[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic.ravel()[i] - numeric) / denom)
    return worst
