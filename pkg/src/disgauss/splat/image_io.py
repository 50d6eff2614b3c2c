"""PNG and raw float image I/O."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray):
    """img (H,W,3) float in [0,1] -> 8-bit RGB PNG."""
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_png(path_or_bytes) -> np.ndarray:
    """PNG -> (H,W,3) float32 in [0,1]."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        im = Image.open(io.BytesIO(path_or_bytes))
    else:
        im = Image.open(path_or_bytes)
    return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_raw(path, img: np.ndarray):
    np.save(path, np.asarray(img, dtype=np.float32))


def load_raw(path) -> np.ndarray:
    return np.load(path)
