"""Image file I/O for the CLI: 8-bit RGB PNG, 8/16-bit grayscale PNG for
depth and masks, and PGM as a dependency-light depth fallback."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .numeric import ConfigError, as_chw


class ImageIOError(ValueError):
    """Raised when an image file cannot be loaded in the requested kind."""


def load_image(path: str | Path, kind: str = "rgb8") -> np.ndarray:
    """Load an image as a float tensor in [0, 1].

    kind: rgb8 -> (3, H, W) scaled by 1/255; depth8 -> (1, H, W) by 1/255;
    depth16 -> (1, H, W) by 1/65535. PGM files are accepted for the depth
    kinds.
    """
    path = Path(path)
    if not path.exists():
        raise ImageIOError(f"{path}: no such file")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot parse image ({exc})") from exc

    if kind == "rgb8":
        if img.mode not in ("RGB", "RGBA", "L", "P"):
            raise ImageIOError(f"{path}: mode {img.mode} not supported for rgb8")
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    if kind == "depth8":
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return arr[None]
    if kind == "depth16":
        if img.mode not in ("I", "I;16", "I;16B", "L"):
            raise ImageIOError(f"{path}: mode {img.mode} is not 16-bit grayscale")
        arr = np.asarray(img, dtype=np.float64)
        scale = 255.0 if img.mode == "L" else 65535.0
        return (arr / scale)[None]
    raise ConfigError(f"unknown image kind {kind!r}")


def save_image(path: str | Path, tensor: np.ndarray, bit16: bool = False) -> None:
    """Save a [0, 1] tensor as PNG: 3 channels -> RGB, 1 channel -> grayscale."""
    t = as_chw(np.clip(tensor, 0.0, 1.0), "image tensor")
    path = Path(path)
    if t.shape[0] == 3:
        arr = np.round(t * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(path)
    elif t.shape[0] == 1:
        if bit16:
            arr = np.round(t[0] * 65535.0).astype(np.uint16)
            Image.fromarray(arr).save(path)
        else:
            arr = np.round(t[0] * 255.0).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(path)
    else:
        raise ConfigError(f"cannot save tensor with {t.shape[0]} channels")


def save_preview(path: str | Path, tensor: np.ndarray) -> None:
    """Min-max normalize to 8 bits and save (for inspecting signed maps)."""
    t = as_chw(tensor, "preview tensor")
    lo, hi = float(t.min()), float(t.max())
    span = hi - lo if hi > lo else 1.0
    save_image(path, (t - lo) / span)
