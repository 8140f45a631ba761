"""Subject poses: extraction, interpolation, rendering, and the stylized-image
fallback that routes low-confidence inputs through photo-style translation.

Skeletons use the 18-joint body model. Positions are normalized to the unit
square; rendering maps them onto the conditioning raster.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np
from PIL import Image, ImageDraw

from .diffusion import Latent, NoiseSchedule, ddim_denoise, forward_diffuse, lerp

if TYPE_CHECKING:
    from .backends.base import Backend

JOINT_NAMES = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
)

# Canonical limb graph over the 18-joint model (17 edges).
LIMBS = (
    ("neck", "right_shoulder"),
    ("neck", "left_shoulder"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
    ("neck", "right_hip"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
    ("neck", "left_hip"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_ankle"),
    ("nose", "neck"),
    ("nose", "right_eye"),
    ("right_eye", "right_ear"),
    ("nose", "left_eye"),
    ("left_eye", "left_ear"),
)

# One saturated color per joint; joint markers are drawn in these exact colors
# so a rendered skeleton is machine-readable.
JOINT_COLORS = {
    name: colorsys.hsv_to_rgb(i / len(JOINT_NAMES), 1.0, 1.0)
    for i, name in enumerate(JOINT_NAMES)
}

MARKER_HALF = 2  # joint markers are (2*MARKER_HALF+1)^2 squares
DEFAULT_CONF_FLOOR = 0.4
FALLBACK_STRENGTH = 0.5
FALLBACK_PROMPT = "a photograph of a person"


@dataclass(frozen=True)
class Keypoint:
    name: str
    x: float
    y: float
    confidence: float = 1.0

    def __post_init__(self):
        if self.name not in JOINT_NAMES:
            raise ValueError(f"unknown joint {self.name!r}")
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"keypoint {self.name} outside the unit square")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class PoseSkeleton:
    """At most one keypoint per joint; source records how the pose was obtained."""

    keypoints: dict[str, Keypoint] = field(default_factory=dict)
    source: str = "detected"  # detected | fallback_translated | user_override

    def __post_init__(self):
        if self.source not in ("detected", "fallback_translated", "user_override"):
            raise ValueError(f"unknown skeleton source {self.source!r}")
        for name, kp in self.keypoints.items():
            if name != kp.name:
                raise ValueError(f"keypoint keyed {name!r} but named {kp.name!r}")

    @property
    def joints(self) -> set:
        return set(self.keypoints)

    def mean_confidence(self) -> float:
        if not self.keypoints:
            return 0.0
        return float(np.mean([kp.confidence for kp in self.keypoints.values()]))


def skeleton_to_json(s: PoseSkeleton) -> dict:
    return {
        "source": s.source,
        "keypoints": {
            name: {"x": kp.x, "y": kp.y, "confidence": kp.confidence}
            for name, kp in sorted(s.keypoints.items())
        },
    }


def skeleton_from_json(obj: dict) -> PoseSkeleton:
    kps = {
        name: Keypoint(name=name, x=v["x"], y=v["y"], confidence=v.get("confidence", 1.0))
        for name, v in obj.get("keypoints", {}).items()
    }
    return PoseSkeleton(keypoints=kps, source=obj.get("source", "detected"))


def shared_keypoints(a: PoseSkeleton, b: PoseSkeleton, conf_floor: float) -> set:
    """Joints present in both skeletons with confidence >= conf_floor in both."""
    return {
        name
        for name in a.joints & b.joints
        if a.keypoints[name].confidence >= conf_floor
        and b.keypoints[name].confidence >= conf_floor
    }


def interpolate_pose(
    a: PoseSkeleton, b: PoseSkeleton, u: float, conf_floor: float = DEFAULT_CONF_FLOOR
) -> Optional[PoseSkeleton]:
    """Linearly interpolate shared keypoints; None when the shared set is empty."""
    shared = shared_keypoints(a, b, conf_floor)
    if not shared:
        return None
    kps = {}
    for name in shared:
        ka, kb = a.keypoints[name], b.keypoints[name]
        pos = lerp(np.array([ka.x, ka.y]), np.array([kb.x, kb.y]), u)
        kps[name] = Keypoint(
            name=name,
            x=float(pos[0]),
            y=float(pos[1]),
            confidence=min(ka.confidence, kb.confidence),
        )
    return PoseSkeleton(keypoints=kps, source=a.source)


def render_pose(s: PoseSkeleton, resolution: tuple[int, int]) -> np.ndarray:
    """Rasterize the limb graph onto a black canvas.

    Returns an (H, W, 3) float image in [0, 1]. Limbs are drawn dimmed, then
    joint markers on top in their canonical colors. Joints missing from the
    skeleton are simply not drawn.
    """
    if not s.keypoints:
        raise ValueError("cannot render an empty skeleton")
    h, w = resolution
    canvas = Image.new("RGB", (w, h), (0, 0, 0))
    draw = ImageDraw.Draw(canvas)

    def to_px(kp: Keypoint) -> tuple[int, int]:
        return round(kp.x * (w - 1)), round(kp.y * (h - 1))

    for ja, jb in LIMBS:
        if ja in s.keypoints and jb in s.keypoints:
            ca, cb = JOINT_COLORS[ja], JOINT_COLORS[jb]
            color = tuple(int(round(0.6 * 255 * (x + y) / 2)) for x, y in zip(ca, cb))
            draw.line([to_px(s.keypoints[ja]), to_px(s.keypoints[jb])], fill=color, width=1)

    for name, kp in s.keypoints.items():
        px, py = to_px(kp)
        color = tuple(int(round(255 * c)) for c in JOINT_COLORS[name])
        draw.rectangle(
            [px - MARKER_HALF, py - MARKER_HALF, px + MARKER_HALF, py + MARKER_HALF],
            fill=color,
        )

    return np.asarray(canvas, dtype=np.float64) / 255.0


def detect_rendered_skeleton(
    image: np.ndarray, color_tol: float = 0.12, min_pixels: int = 4
) -> Optional[PoseSkeleton]:
    """Recover a skeleton from marker colors; the inverse of render_pose.

    Detects each joint as the centroid of pixels matching its canonical color
    within an L-infinity tolerance. Dim or recolored markers are not matched,
    which is what makes stylized inputs fail detection.
    """
    h, w = image.shape[:2]
    full_block = (2 * MARKER_HALF + 1) ** 2
    kps = {}
    for name in JOINT_NAMES:
        color = np.array(JOINT_COLORS[name])
        mask = np.max(np.abs(image - color), axis=-1) < color_tol
        count = int(mask.sum())
        if count < min_pixels:
            continue
        ys, xs = np.nonzero(mask)
        kps[name] = Keypoint(
            name=name,
            x=float(np.clip(xs.mean() / (w - 1), 0.0, 1.0)),
            y=float(np.clip(ys.mean() / (h - 1), 0.0, 1.0)),
            confidence=min(1.0, count / full_block),
        )
    if not kps:
        return None
    return PoseSkeleton(keypoints=kps, source="detected")


def image_to_image(
    image: np.ndarray,
    backend: "Backend",
    schedule: NoiseSchedule,
    strength: float,
    prompt: str,
    seed: int = 0,
    substeps: int = 25,
    guidance_scale: float = 7.5,
) -> np.ndarray:
    """Translate an image by noising to strength * num_steps and denoising under prompt."""
    from .backends.base import ConditioningBundle
    from .tree import keyed_noise

    z0 = backend.encode_image(image)
    t = max(1, round(strength * schedule.num_steps))
    eps = keyed_noise(z0.data.shape, seed, 0x1A9E, t)
    z_t = forward_diffuse(z0, t, eps, schedule)
    cond = ConditioningBundle(
        positive_embedding=backend.encode_text(prompt),
        negative_embedding=backend.encode_text(""),
        guidance_scale=guidance_scale,
    )
    z_clean = ddim_denoise(z_t, t, 0, cond, backend, schedule, substeps=substeps)
    return backend.decode_latent(z_clean)


def extract_pose_with_fallback(
    image: np.ndarray,
    backend: "Backend",
    schedule: NoiseSchedule,
    conf_floor: float = DEFAULT_CONF_FLOOR,
    strength: float = FALLBACK_STRENGTH,
    prompt: str = FALLBACK_PROMPT,
    seed: int = 0,
    guidance_scale: float = 7.5,
) -> Optional[PoseSkeleton]:
    """Extract a pose, retrying on a photo-style translation when confidence is low.

    Returns the direct detection when its mean confidence clears the floor;
    otherwise translates the image toward a photographic style and re-runs
    extraction, tagging the result fallback_translated. None when both fail.
    """
    direct = backend.extract_pose(image)
    if direct is not None and direct.mean_confidence() >= conf_floor:
        return direct
    translated = image_to_image(
        image, backend, schedule, strength, prompt, seed=seed, guidance_scale=guidance_scale
    )
    retried = backend.extract_pose(translated)
    if retried is not None and retried.mean_confidence() >= conf_floor:
        return replace(retried, source="fallback_translated")
    return None
