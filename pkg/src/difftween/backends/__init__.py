"""Backend registry: select a model stack by name in config or CLI flags."""

from __future__ import annotations

from ..diffusion import NoiseSchedule
from .base import Backend, BackendCaps, BackendUnavailableError, ConditioningBundle
from .toy import ToyBackend

BACKEND_NAMES = ("toy", "toy-gaussian", "sd")


def get_backend(name: str, schedule: NoiseSchedule, image_size: tuple[int, int] = (32, 32)) -> Backend:
    if name == "toy":
        return ToyBackend(schedule, image_size=image_size, tau=0.0)
    if name == "toy-gaussian":
        return ToyBackend(schedule, image_size=image_size, tau=1.0)
    if name == "sd":
        from .sd import StableDiffusionBackend

        return StableDiffusionBackend(image_size=image_size)
    raise ValueError(f"unknown backend {name!r}; known: {BACKEND_NAMES}")


__all__ = [
    "Backend",
    "BackendCaps",
    "BackendUnavailableError",
    "ConditioningBundle",
    "ToyBackend",
    "get_backend",
    "BACKEND_NAMES",
]
