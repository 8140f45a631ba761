"""Analytic toy backend for deterministic, CPU-only testing.

The codec is the identity (image channels transposed into latent layout), the
text encoder hashes tokens, and the denoiser assumes a Gaussian prior centered
at the conditioning embedding reshaped to latent shape:

    eps_hat(z_t, t, c) = sigma_t * (z_t - alpha_t * m(c)) / (alpha_t^2 tau^2 + sigma_t^2)

With tau = 0 the prior is degenerate at m(c) and this reduces to
(z_t - alpha_t m) / sigma_t, which makes DDIM reconstruct m exactly in one
jump. Every operation is a pure function, so closed-loop tests are bit-stable.
"""

from __future__ import annotations

import hashlib
from typing import Optional

import numpy as np

from ..diffusion import Latent, NoiseSchedule
from ..pose import PoseSkeleton, detect_rendered_skeleton
from .base import Backend, BackendCaps

COLOR_ANCHORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
}
NEUTRAL_ANCHOR = (1.0, 1.0, 1.0)


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(seed)).standard_normal(dim)


class ToyBackend(Backend):
    """Identity-codec backend with an analytic conditioned denoiser."""

    def __init__(
        self,
        schedule: NoiseSchedule,
        image_size: tuple[int, int] = (32, 32),
        tau: float = 0.0,
        supports_pose: bool = True,
        prompt_atlas: Optional[dict[str, np.ndarray]] = None,
        embed_scale: float = 0.5,
        pose_strength: float = 0.25,
    ):
        h, w = image_size
        self.schedule = schedule
        self.tau = float(tau)
        self.pose_strength = pose_strength
        self.embed_scale = embed_scale
        # Atlas entries pin specific prompts to specific images, letting tests
        # construct scenarios where denoising lands on a known picture.
        self.prompt_atlas = dict(prompt_atlas or {})
        self._caps = BackendCaps(
            latent_shape=(3, h, w),
            embedding_shape=(3 * h * w,),
            image_size=(h, w),
            supports_pose=supports_pose,
            supports_grad_wrt_embedding=True,
        )

    @property
    def caps(self) -> BackendCaps:
        return self._caps

    def encode_image(self, image: np.ndarray) -> Latent:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (*self._caps.image_size, 3):
            raise ValueError(
                f"image shape {image.shape} != expected {(*self._caps.image_size, 3)}"
            )
        return Latent(data=np.transpose(image, (2, 0, 1)), timestep=0)

    def decode_latent(self, z: Latent) -> np.ndarray:
        if z.timestep != 0:
            raise ValueError(f"decode requires a clean latent, got timestep {z.timestep}")
        return np.transpose(z.data, (1, 2, 0))

    def _prior_mean(self, embedding: np.ndarray, pose_image: Optional[np.ndarray]) -> np.ndarray:
        m = np.asarray(embedding, dtype=np.float64).reshape(self._caps.latent_shape)
        if pose_image is not None:
            m = m + self.pose_strength * np.transpose(pose_image, (2, 0, 1))
        return m

    def _gain(self, t: int) -> float:
        a = float(self.schedule.alphas[t])
        s = float(self.schedule.sigmas[t])
        return s / (a * a * self.tau * self.tau + s * s)

    def predict_eps(
        self,
        data: np.ndarray,
        t: int,
        embedding: np.ndarray,
        pose_image: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        m = self._prior_mean(embedding, pose_image)
        a = float(self.schedule.alphas[t])
        return self._gain(t) * (data - a * m)

    def eps_grad_vjp(
        self, data: np.ndarray, t: int, embedding: np.ndarray, vec: np.ndarray
    ) -> np.ndarray:
        a = float(self.schedule.alphas[t])
        return -a * self._gain(t) * np.asarray(vec, dtype=np.float64).ravel()

    def encode_text(self, prompt: str) -> np.ndarray:
        dim = self._caps.embedding_shape[0]
        if prompt in self.prompt_atlas:
            return self.encode_image(self.prompt_atlas[prompt]).data.ravel()
        tokens = prompt.lower().split()
        if not tokens:
            return np.zeros(dim)
        acc = np.zeros(dim)
        for i, tok in enumerate(tokens):
            acc += _token_vector(f"{i}:{tok}", dim)  # position-keyed: order matters
        return self.embed_scale * acc / len(tokens)

    def clip_similarity(self, image: np.ndarray, prompt: str) -> float:
        mean_color = np.asarray(image, dtype=np.float64).reshape(-1, 3).mean(axis=0)
        anchors = [COLOR_ANCHORS[w] for w in prompt.lower().split() if w in COLOR_ANCHORS]
        anchor = np.mean(anchors, axis=0) if anchors else np.array(NEUTRAL_ANCHOR)
        na = np.linalg.norm(mean_color)
        nb = np.linalg.norm(anchor)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(mean_color, anchor) / (na * nb))

    def extract_pose(self, image: np.ndarray) -> Optional[PoseSkeleton]:
        return detect_rendered_skeleton(np.asarray(image, dtype=np.float64))
