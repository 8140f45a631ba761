"""Stable Diffusion v2.1 adapter with pose-conditioned ControlNet.

Requires the ``real`` extra (torch, diffusers, transformers) and local model
weights; the weights directory is taken from the DIFFTWEEN_WEIGHTS environment
variable. This adapter is excluded from the deterministic test suite; use
``scripts`` smoke runs to exercise it on real hardware.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from ..diffusion import Latent
from ..pose import JOINT_NAMES, Keypoint, PoseSkeleton
from .base import Backend, BackendCaps, BackendUnavailableError

WEIGHTS_ENV = "DIFFTWEEN_WEIGHTS"

SD_MODEL = "stabilityai/stable-diffusion-2-1"
CONTROLNET_MODEL = "thibaud/controlnet-sd21-openpose-diffusers"
CLIP_MODEL = "openai/clip-vit-large-patch14"


class StableDiffusionBackend(Backend):
    """Latent codec + text-conditioned U-Net from Stable Diffusion 2.1.

    All model calls run under torch.no_grad with fixed weights, so outputs are
    deterministic for identical inputs on a given device.
    """

    def __init__(self, image_size: tuple[int, int] = (512, 512), device: str = "cpu"):
        try:
            import torch
            from diffusers import AutoencoderKL, ControlNetModel, UNet2DConditionModel
            from transformers import CLIPModel, CLIPProcessor, CLIPTextModel, CLIPTokenizer
        except ImportError as exc:
            raise BackendUnavailableError(
                "StableDiffusionBackend needs the [real] extra (torch, diffusers, transformers)"
            ) from exc

        root = os.environ.get(WEIGHTS_ENV)
        if root is None:
            raise BackendUnavailableError(
                f"set {WEIGHTS_ENV} to the directory holding the pretrained weights"
            )
        self._torch = torch
        self.device = device
        h, w = image_size
        if h % 8 or w % 8:
            raise ValueError("image size must be divisible by the VAE downsampling factor")

        def local(name):
            return os.path.join(root, name.replace("/", "--"))

        try:
            self.vae = AutoencoderKL.from_pretrained(local(SD_MODEL), subfolder="vae").to(device)
            self.unet = UNet2DConditionModel.from_pretrained(
                local(SD_MODEL), subfolder="unet"
            ).to(device)
            self.tokenizer = CLIPTokenizer.from_pretrained(local(SD_MODEL), subfolder="tokenizer")
            self.text_encoder = CLIPTextModel.from_pretrained(
                local(SD_MODEL), subfolder="text_encoder"
            ).to(device)
            self.controlnet = None
            if os.path.isdir(local(CONTROLNET_MODEL)):
                self.controlnet = ControlNetModel.from_pretrained(local(CONTROLNET_MODEL)).to(
                    device
                )
            self.clip = CLIPModel.from_pretrained(local(CLIP_MODEL)).to(device)
            self.clip_processor = CLIPProcessor.from_pretrained(local(CLIP_MODEL))
        except (OSError, ValueError) as exc:
            raise BackendUnavailableError(f"failed to load weights under {root}: {exc}") from exc

        for module in (self.vae, self.unet, self.text_encoder, self.clip):
            module.eval().requires_grad_(False)

        max_len = self.tokenizer.model_max_length
        embed_dim = self.text_encoder.config.hidden_size
        self._caps = BackendCaps(
            latent_shape=(4, h // 8, w // 8),
            embedding_shape=(max_len, embed_dim),
            image_size=(h, w),
            supports_pose=self.controlnet is not None,
            supports_grad_wrt_embedding=True,
        )
        # The U-Net was trained on a fixed 1000-step schedule; schedule indices
        # from the caller are mapped onto it proportionally in predict_eps.
        self.train_steps = 1000

    @property
    def caps(self) -> BackendCaps:
        return self._caps

    def _to_tensor(self, array: np.ndarray):
        return self._torch.from_numpy(np.ascontiguousarray(array)).float().to(self.device)

    def encode_image(self, image: np.ndarray) -> Latent:
        if image.shape[:2] != self._caps.image_size:
            raise ValueError(f"image resolution {image.shape[:2]} != {self._caps.image_size}")
        with self._torch.no_grad():
            pixels = self._to_tensor(np.transpose(image, (2, 0, 1))[None] * 2.0 - 1.0)
            posterior = self.vae.encode(pixels).latent_dist
            z = posterior.mean * self.vae.config.scaling_factor
        return Latent(data=z[0].cpu().numpy().astype(np.float32), timestep=0)

    def decode_latent(self, z: Latent) -> np.ndarray:
        if z.timestep != 0:
            raise ValueError("decode requires a clean latent")
        with self._torch.no_grad():
            latents = self._to_tensor(z.data)[None] / self.vae.config.scaling_factor
            image = self.vae.decode(latents).sample[0]
        image = ((image.cpu().numpy() + 1.0) / 2.0).clip(0.0, 1.0)
        return np.transpose(image, (1, 2, 0))

    def predict_eps(
        self,
        data: np.ndarray,
        t: int,
        embedding: np.ndarray,
        pose_image: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            sample = self._to_tensor(data)[None]
            emb = self._to_tensor(embedding)[None]
            t_model = torch.tensor([t], device=self.device)
            down, mid = None, None
            if pose_image is not None and self.controlnet is not None:
                control = self._to_tensor(np.transpose(pose_image, (2, 0, 1)))[None]
                down, mid = self.controlnet(
                    sample, t_model, encoder_hidden_states=emb, controlnet_cond=control,
                    return_dict=False,
                )
            out = self.unet(
                sample, t_model, encoder_hidden_states=emb,
                down_block_additional_residuals=down, mid_block_additional_residual=mid,
            ).sample
        return out[0].cpu().numpy()

    def encode_text(self, prompt: str) -> np.ndarray:
        torch = self._torch
        tokens = self.tokenizer(
            prompt, padding="max_length", max_length=self.tokenizer.model_max_length,
            truncation=True, return_tensors="pt",
        ).input_ids.to(self.device)
        with torch.no_grad():
            emb = self.text_encoder(tokens).last_hidden_state[0]
        return emb.cpu().numpy()

    def eps_grad_vjp(
        self, data: np.ndarray, t: int, embedding: np.ndarray, vec: np.ndarray
    ) -> np.ndarray:
        torch = self._torch
        emb = self._to_tensor(embedding)[None].requires_grad_(True)
        sample = self._to_tensor(data)[None]
        t_model = torch.tensor([t], device=self.device)
        out = self.unet(sample, t_model, encoder_hidden_states=emb).sample
        out.backward(self._to_tensor(vec)[None])
        return emb.grad[0].cpu().numpy()

    def clip_similarity(self, image: np.ndarray, prompt: str) -> float:
        torch = self._torch
        inputs = self.clip_processor(
            text=[prompt], images=[(image * 255).astype(np.uint8)],
            return_tensors="pt", padding=True,
        ).to(self.device)
        with torch.no_grad():
            img_emb = self.clip.get_image_features(pixel_values=inputs["pixel_values"])
            txt_emb = self.clip.get_text_features(
                input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"]
            )
        img_emb = img_emb / img_emb.norm(dim=-1, keepdim=True)
        txt_emb = txt_emb / txt_emb.norm(dim=-1, keepdim=True)
        return float((img_emb * txt_emb).sum())

    def extract_pose(self, image: np.ndarray) -> Optional[PoseSkeleton]:
        try:
            from controlnet_aux import OpenposeDetector
        except ImportError as exc:
            raise BackendUnavailableError("pose extraction needs controlnet_aux") from exc
        root = os.environ.get(WEIGHTS_ENV)
        detector = OpenposeDetector.from_pretrained(os.path.join(root, "lllyasviel--Annotators"))
        result = detector((image * 255).astype(np.uint8), output_type="np", include_body=True)
        poses = getattr(result, "poses", None)
        if not poses:
            return None
        body = poses[0].body.keypoints  # first detected subject only
        h, w = image.shape[:2]
        kps = {}
        for idx, kp in enumerate(body):
            if kp is None or idx >= len(JOINT_NAMES):
                continue
            kps[JOINT_NAMES[idx]] = Keypoint(
                name=JOINT_NAMES[idx],
                x=float(np.clip(kp.x, 0.0, 1.0)),
                y=float(np.clip(kp.y, 0.0, 1.0)),
                confidence=float(np.clip(getattr(kp, "score", 1.0) or 1.0, 0.0, 1.0)),
            )
        return PoseSkeleton(keypoints=kps, source="detected") if kps else None
