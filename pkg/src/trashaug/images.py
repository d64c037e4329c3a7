"""Image loading, normalization and the flip/rotate transforms.

All images in this package are float32 numpy arrays of shape (H, W, 3)
with values in [0, 1].
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError


class ImageShapeError(ValueError):
    pass


def validate_image(arr: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) / [0, 1] contract and return the array."""
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageShapeError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ImageShapeError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageShapeError(
            f"image values outside [0, 1]: min={arr.min():.4g} max={arr.max():.4g}"
        )
    return arr


def load_image(path, target_size=None) -> np.ndarray:
    """Decode an image file to a float32 (H, W, 3) array in [0, 1].

    Raises UnidentifiedImageError (from Pillow) for undecodable files.
    """
    with Image.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if target_size is not None:
        arr = resize(arr, target_size)
    return arr


def save_image(arr: np.ndarray, path) -> None:
    """Write a [0, 1] image as PNG (lossless)."""
    validate_image(arr)
    quantized = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def resize(arr: np.ndarray, target_size) -> np.ndarray:
    """Bilinear resize of a float image to (H, W)."""
    h, w = target_size
    if arr.shape[0] == h and arr.shape[1] == w:
        return arr
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)
    out = torch.nn.functional.interpolate(
        t, size=(h, w), mode="bilinear", align_corners=False
    )
    out = out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()
    return np.ascontiguousarray(out)


def hflip(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[:, ::-1, :])


def vflip(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[::-1, :, :])


def rot90(arr: np.ndarray) -> np.ndarray:
    """Rotate by 90 degrees counter-clockwise; requires a square image."""
    if arr.shape[0] != arr.shape[1]:
        raise ImageShapeError(
            f"90-degree rotation requires a square image, got {arr.shape[:2]}"
        )
    return np.ascontiguousarray(np.rot90(arr, k=1, axes=(0, 1)))


DecodableError = UnidentifiedImageError
