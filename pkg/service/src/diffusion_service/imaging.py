"""Base64 PNG codecs for the wire format (uint8 images, uint16 depth)."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def decode_b64_png(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload, validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        if im.mode == "I;16":
            return np.asarray(im, dtype=np.uint16)
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_b64_png(img: np.ndarray) -> str:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
