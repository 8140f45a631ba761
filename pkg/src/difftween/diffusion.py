"""Deterministic diffusion math: schedules, noising, DDIM steps, latent warps.

Everything here is a pure function of its inputs. Latents and schedules are
frozen after construction so they can be shared across threads freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.linalg import expm, logm

if TYPE_CHECKING:
    from .backends.base import Backend, ConditioningBundle

SCHEDULE_PROFILES = ("vp-cosine", "vp-linear")

# Smallest signal level retained at the last timestep; keeps alpha in (0, 1]
# and sigma in [0, 1) as the schedule contract requires.
_ALPHA_FLOOR = 0.02

# Cosine of the angle above which slerp degenerates to lerp.
SLERP_DOT_THRESHOLD = 1.0 - 1e-7


def _read_only(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Discretized variance-preserving diffusion process.

    ``alphas``/``sigmas`` hold the closed-form coefficients of
    ``z_t = alpha_t * z_0 + sigma_t * eps`` for t = 0..num_steps.
    ``betas[t]`` is the per-step noise scale of the stepwise recursion
    ``z_t = (alpha_t / alpha_{t-1}) * z_{t-1} + beta_t * eps_t`` chosen so
    that composing steps 1..t reproduces the closed form in distribution.
    """

    num_steps: int
    alphas: np.ndarray
    sigmas: np.ndarray
    betas: np.ndarray
    profile: str = "vp-cosine"

    def step_alpha(self, t: int) -> float:
        """Per-step signal multiplier alpha_t / alpha_{t-1}."""
        return float(self.alphas[t] / self.alphas[t - 1])

    def validate(self) -> None:
        a, s = self.alphas, self.sigmas
        if len(a) != self.num_steps + 1 or len(s) != self.num_steps + 1:
            raise ValueError("coefficient arrays must have num_steps + 1 entries")
        if a[0] != 1.0 or s[0] != 0.0:
            raise ValueError("schedule must start clean: alpha_0 = 1, sigma_0 = 0")
        if not (np.all(np.diff(a) < 0) and np.all(np.diff(s) > 0)):
            raise ValueError("alpha must strictly decrease and sigma strictly increase")
        if a[-1] <= 0 or s[-1] >= 1:
            raise ValueError("schedule endpoint out of range")


@dataclass(frozen=True)
class Latent:
    """A latent-space array tagged with the noise timestep it lives at."""

    data: np.ndarray
    timestep: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"latent data must be 3-D (C, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("latent contains non-finite entries")
        if self.timestep < 0:
            raise ValueError("timestep must be nonnegative")
        object.__setattr__(self, "data", _read_only(data))

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix acting on latent (x, y) coordinates, row-major [[a,b,tx],[c,d,ty]]."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError("affine matrix must be 2x3")
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise ValueError("affine transform is singular")
        object.__setattr__(self, "matrix", _read_only(m))

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @staticmethod
    def zoom(factor: float, center: tuple[float, float] = (0.0, 0.0)) -> "AffineTransform":
        cx, cy = center
        return AffineTransform(
            np.array(
                [
                    [factor, 0.0, cx - factor * cx],
                    [0.0, factor, cy - factor * cy],
                ]
            )
        )

    @staticmethod
    def translation(dx: float, dy: float) -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, AffineTransform.identity().matrix))

    def as_homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])


def make_schedule(num_steps: int, profile: str = "vp-cosine") -> NoiseSchedule:
    """Build a variance-preserving noise schedule with num_steps discrete steps.

    Profiles:
      vp-cosine  alpha_t = cos(theta_max * t/n), the default curve
      vp-linear  alpha_t falls linearly from 1 to the floor value
    Both satisfy alpha_t^2 + sigma_t^2 = 1 exactly.
    """
    if num_steps <= 0:
        raise ValueError(f"num_steps must be positive, got {num_steps}")
    if profile not in SCHEDULE_PROFILES:
        raise ValueError(f"unknown schedule profile {profile!r}; known: {SCHEDULE_PROFILES}")

    t = np.arange(num_steps + 1, dtype=np.float64) / num_steps
    if profile == "vp-cosine":
        theta_max = math.pi / 2 - math.asin(_ALPHA_FLOOR)
        alphas = np.cos(theta_max * t)
    else:
        alphas = 1.0 - (1.0 - _ALPHA_FLOOR) * t
    alphas[0] = 1.0
    sigmas = np.sqrt(np.clip(1.0 - alphas**2, 0.0, None))
    sigmas[0] = 0.0

    # beta_t^2 = sigma_t^2 - (alpha_t/alpha_{t-1})^2 sigma_{t-1}^2 makes the
    # stepwise recursion compose to the closed form; equals 1 - (a_t/a_{t-1})^2
    # under variance preservation.
    ratios = alphas[1:] / alphas[:-1]
    betas = np.zeros(num_steps + 1)
    betas[1:] = np.sqrt(np.clip(sigmas[1:] ** 2 - ratios**2 * sigmas[:-1] ** 2, 0.0, None))

    sched = NoiseSchedule(
        num_steps=num_steps,
        alphas=_read_only(alphas),
        sigmas=_read_only(sigmas),
        betas=_read_only(betas),
        profile=profile,
    )
    sched.validate()
    return sched


def forward_diffuse(z0: Latent, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> Latent:
    """Jump a clean latent to timestep t: alpha_t * z0 + sigma_t * eps."""
    if z0.timestep != 0:
        raise ValueError(f"forward_diffuse expects a clean latent, got timestep {z0.timestep}")
    if not 0 <= t <= schedule.num_steps:
        raise ValueError(f"timestep {t} outside schedule [0, {schedule.num_steps}]")
    eps = np.asarray(eps)
    if eps.shape != z0.data.shape:
        raise ValueError(f"noise shape {eps.shape} does not match latent {z0.data.shape}")
    data = schedule.alphas[t] * z0.data + schedule.sigmas[t] * eps
    return Latent(data=data, timestep=t)


def forward_diffuse_step(z_prev: Latent, eps_t: np.ndarray, schedule: NoiseSchedule) -> Latent:
    """Advance one timestep of the stepwise noising recursion."""
    t = z_prev.timestep + 1
    if z_prev.timestep >= schedule.num_steps:
        raise ValueError("latent is already at the final timestep")
    eps_t = np.asarray(eps_t)
    if eps_t.shape != z_prev.data.shape:
        raise ValueError(f"noise shape {eps_t.shape} does not match latent {z_prev.data.shape}")
    data = schedule.step_alpha(t) * z_prev.data + schedule.betas[t] * eps_t
    return Latent(data=data, timestep=t)


def lerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Linear interpolation (1-u)*a + u*b."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return (1.0 - u) * a + u * b


def slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation of a and b treated as flattened vectors.

    Falls back to lerp when the vectors are nearly (anti)parallel. Operates on
    the raw arrays: no renormalization is applied.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("slerp requires nonzero inputs")
    dot = float(np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0))
    if abs(dot) > SLERP_DOT_THRESHOLD:
        return lerp(a, b, u)
    theta = math.acos(dot)
    s = math.sin(theta)
    wa = math.sin((1.0 - u) * theta) / s
    wb = math.sin(u * theta) / s
    return wa * a + wb * b


def ddim_timesteps(t_from: int, t_to: int, substeps: int) -> list[int]:
    """Evenly spaced integer timesteps from t_from down to t_to, inclusive."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = np.round(np.linspace(t_from, t_to, substeps + 1)).astype(int)
    out = [int(grid[0])]
    for v in grid[1:]:
        if int(v) != out[-1]:
            out.append(int(v))
    return out


def ddim_denoise(
    z: Latent,
    t_from: int,
    t_to: int,
    cond: "ConditioningBundle",
    backend: "Backend",
    schedule: NoiseSchedule,
    substeps: int = 25,
) -> Latent:
    """Deterministic (eta = 0) DDIM trajectory from t_from down to t_to.

    The trajectory visits ``substeps`` evenly spaced intermediate timesteps,
    querying the backend's noise prediction at each one.
    """
    if not 0 <= t_to <= t_from <= schedule.num_steps:
        raise ValueError(f"invalid timestep ordering: {t_from} -> {t_to}")
    if z.timestep != t_from:
        raise ValueError(f"latent is at timestep {z.timestep}, expected {t_from}")
    if t_to == t_from:
        return z

    data = z.data
    steps = ddim_timesteps(t_from, t_to, substeps)
    for t_cur, t_next in zip(steps[:-1], steps[1:]):
        eps_hat = backend.predict_noise(Latent(data, timestep=t_cur), t_cur, cond)
        a_cur = schedule.alphas[t_cur]
        s_cur = schedule.sigmas[t_cur]
        x0_hat = (data - s_cur * eps_hat) / a_cur
        data = schedule.alphas[t_next] * x0_hat + schedule.sigmas[t_next] * eps_hat
    return Latent(data=data, timestep=t_to)


def affine_power(xf: AffineTransform, exponent: float) -> AffineTransform:
    """Fractional power of an affine transform via the matrix log/exp.

    Zooms interpolate geometrically in scale and translations linearly.
    """
    if xf.is_identity():
        return AffineTransform.identity()
    log_m = logm(xf.as_homogeneous())
    if np.max(np.abs(np.imag(log_m))) > 1e-9:
        raise ValueError("transform has no real fractional power")
    powered = expm(exponent * np.real(log_m))
    return AffineTransform(np.real(powered[:2, :]))


def warp_latent(z: Latent, xf: AffineTransform) -> Latent:
    """Resample latent channels under xf with bilinear interpolation.

    Out-of-frame regions are reflect-padded. The identity transform is a
    bit-exact passthrough.
    """
    if xf.is_identity():
        return z
    # ndimage maps output -> input coordinates, so feed it the inverse. The
    # transform acts on (x, y) while arrays index (row=y, col=x).
    hom = xf.as_homogeneous()
    inv = np.linalg.inv(hom)
    a = inv[:2, :2]
    t = inv[:2, 2]
    mat_rc = np.array([[a[1, 1], a[1, 0]], [a[0, 1], a[0, 0]]])
    off_rc = np.array([t[1], t[0]])
    out = np.empty_like(z.data)
    for c in range(z.data.shape[0]):
        out[c] = ndimage.affine_transform(
            z.data[c], mat_rc, offset=off_rc, order=1, mode="reflect"
        )
    return Latent(data=out, timestep=z.timestep)
