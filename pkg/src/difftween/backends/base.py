"""Backend contract: the pretrained models the pipeline consumes.

A backend bundles a latent codec, a conditioned noise predictor, a text
encoder, an image-text scorer, and a pose extractor behind one interface.
Implementations must be referentially transparent: identical inputs yield
identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from ..diffusion import Latent

if TYPE_CHECKING:
    from ..pose import PoseSkeleton


class BackendUnavailableError(RuntimeError):
    """The adapter's underlying model cannot be loaded or reached."""


@dataclass(frozen=True)
class BackendCaps:
    """Shapes and capabilities a backend declares and must honor."""

    latent_shape: tuple[int, int, int]
    embedding_shape: tuple[int, ...]
    image_size: tuple[int, int]  # (height, width)
    supports_pose: bool = False
    supports_grad_wrt_embedding: bool = False

    def __post_init__(self):
        if any(d <= 0 for d in self.latent_shape) or any(d <= 0 for d in self.embedding_shape):
            raise ValueError("backend shapes must be positive")


@dataclass(frozen=True)
class ConditioningBundle:
    """Positive/negative text embeddings plus optional pose conditioning."""

    positive_embedding: np.ndarray
    negative_embedding: np.ndarray
    pose_image: Optional[np.ndarray] = None
    guidance_scale: float = 7.5

    def __post_init__(self):
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be nonnegative")

    def validate_for(self, caps: BackendCaps) -> None:
        for name, emb in (
            ("positive", self.positive_embedding),
            ("negative", self.negative_embedding),
        ):
            if tuple(np.shape(emb)) != caps.embedding_shape:
                raise ValueError(
                    f"{name} embedding shape {np.shape(emb)} != declared {caps.embedding_shape}"
                )
        if self.pose_image is not None:
            if self.pose_image.shape[:2] != caps.image_size:
                raise ValueError(
                    f"pose image resolution {self.pose_image.shape[:2]} "
                    f"!= declared {caps.image_size}"
                )


class Backend:
    """Abstract backend. Subclasses implement the single-conditioning primitives."""

    @property
    def caps(self) -> BackendCaps:
        raise NotImplementedError

    # -- codec ---------------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> Latent:
        """Map an RGB image (H, W, 3) in [0, 1] to a clean latent."""
        raise NotImplementedError

    def decode_latent(self, z: Latent) -> np.ndarray:
        """Map a clean latent back to an RGB image."""
        raise NotImplementedError

    # -- denoiser ------------------------------------------------------------

    def predict_eps(
        self,
        data: np.ndarray,
        t: int,
        embedding: np.ndarray,
        pose_image: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Noise prediction under a single text embedding (no guidance)."""
        raise NotImplementedError

    def predict_noise(self, z: Latent, t: int, cond: ConditioningBundle) -> np.ndarray:
        """Classifier-free-guided prediction eps_neg + g * (eps_pos - eps_neg)."""
        if z.timestep != t:
            raise ValueError(f"latent timestep {z.timestep} != requested {t}")
        if t < 1:
            raise ValueError("noise prediction requires t >= 1")
        cond.validate_for(self.caps)
        if cond.pose_image is not None and not self.caps.supports_pose:
            raise ValueError("pose conditioning provided to a backend without pose support")
        pose = cond.pose_image if self.caps.supports_pose else None
        eps_neg = self.predict_eps(z.data, t, cond.negative_embedding, pose)
        g = cond.guidance_scale
        if g == 0.0:
            return eps_neg
        eps_pos = self.predict_eps(z.data, t, cond.positive_embedding, pose)
        return eps_neg + g * (eps_pos - eps_neg)

    def eps_grad_vjp(
        self, data: np.ndarray, t: int, embedding: np.ndarray, vec: np.ndarray
    ) -> np.ndarray:
        """Vector-Jacobian product J^T vec of predict_eps w.r.t. the embedding.

        Only available when caps.supports_grad_wrt_embedding.
        """
        raise NotImplementedError(f"{type(self).__name__} is not differentiable")

    # -- auxiliary models ----------------------------------------------------

    def encode_text(self, prompt: str) -> np.ndarray:
        """Deterministic text embedding; empty prompt maps to the null embedding."""
        raise NotImplementedError

    def clip_similarity(self, image: np.ndarray, prompt: str) -> float:
        """Cosine-style image-text score in [-1, 1]."""
        raise NotImplementedError

    def extract_pose(self, image: np.ndarray) -> Optional["PoseSkeleton"]:
        """Detected skeleton, or None when nothing clears the confidence floor."""
        raise NotImplementedError
