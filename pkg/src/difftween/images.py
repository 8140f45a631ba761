"""PNG I/O for float RGB arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    return (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def load_image(path: str | Path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Read an RGB image as (H, W, 3) floats; optionally resize to (height, width)."""
    img = Image.open(path).convert("RGB")
    if size is not None:
        h, w = size
        img = img.resize((w, h), Image.BILINEAR)
    return from_uint8(np.asarray(img))


def encode_png(image: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a PNG, leaving the file untouched when the bytes are unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_png(image)
    if path.exists() and path.read_bytes() == payload:
        return
    path.write_bytes(payload)
