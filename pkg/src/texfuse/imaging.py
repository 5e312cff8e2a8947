"""Image conversion and serialization helpers.

Internally every color image is a float array in [0, 1] with shape (H, W, 3)
and every mask/grayscale image is a 2-D array. These helpers convert between
that representation, 8-bit PNG files, base64 wire payloads, and a raw float32
dump used for debugging intermediate buffers.
"""

from __future__ import annotations

import base64
import io
import struct

import numpy as np
from PIL import Image

FLOAT_DUMP_MAGIC = b"TFB1"


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 with round-half-even."""
    arr = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png(path, img: np.ndarray) -> None:
    """Write a float RGB image, a float grayscale image, or a uint8 array."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    """Load a PNG as float in [0, 1]; RGB images return (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def png_bytes(img: np.ndarray, *, bit16: bool = False) -> bytes:
    """Encode an image to PNG bytes.

    With ``bit16`` the input must be a 2-D uint16 array (used for depth maps,
    near = high convention decided by the caller).
    """
    buf = io.BytesIO()
    if bit16:
        arr = np.asarray(img, dtype=np.uint16)
        Image.fromarray(arr).save(buf, format="PNG")
    else:
        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            arr = to_uint8(arr)
        mode = "L" if arr.ndim == 2 else "RGB"
        Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def png_from_bytes(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a uint8 array (uint16 for 16-bit grayscale)."""
    with Image.open(io.BytesIO(data)) as im:
        if im.mode == "I;16":
            return np.asarray(im, dtype=np.uint16)
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def b64_png(img: np.ndarray, *, bit16: bool = False) -> str:
    return base64.b64encode(png_bytes(img, bit16=bit16)).decode("ascii")


def from_b64_png(payload: str) -> np.ndarray:
    return png_from_bytes(base64.b64decode(payload))


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize to (width, height) with bilinear sampling at pixel centers."""
    w, h = size
    sh, sw = img.shape[:2]
    if (sw, sh) == (w, h):
        return img
    xs = (np.arange(w) + 0.5) * sw / w - 0.5
    ys = (np.arange(h) + 0.5) * sh / h - 0.5
    x0 = np.clip(np.floor(xs), 0, sw - 1).astype(np.int64)
    x1 = np.clip(x0 + 1, 0, sw - 1)
    y0 = np.clip(np.floor(ys), 0, sh - 1).astype(np.int64)
    y1 = np.clip(y0 + 1, 0, sh - 1)
    ax = (xs - x0).clip(0.0, 1.0)
    ay = (ys - y0).clip(0.0, 1.0)
    top = img[y0][:, x0] * (1 - ax)[None, :, None] + img[y0][:, x1] * ax[None, :, None] \
        if img.ndim == 3 else img[y0][:, x0] * (1 - ax) + img[y0][:, x1] * ax
    bot = img[y1][:, x0] * (1 - ax)[None, :, None] + img[y1][:, x1] * ax[None, :, None] \
        if img.ndim == 3 else img[y1][:, x0] * (1 - ax) + img[y1][:, x1] * ax
    wy = ay[:, None, None] if img.ndim == 3 else ay[:, None]
    return top * (1 - wy) + bot * wy


def dump_float_buffer(path, buf: np.ndarray) -> None:
    """Raw float dump: magic, width, height, channels, little-endian f32 rows."""
    arr = np.asarray(buf, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(FLOAT_DUMP_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(arr.astype("<f4").tobytes(order="C"))


def load_float_buffer(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLOAT_DUMP_MAGIC:
            raise ValueError(f"not a float buffer dump: bad magic {magic!r}")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(), dtype="<f4")
    arr = data.reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr
