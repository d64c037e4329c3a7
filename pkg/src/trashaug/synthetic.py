"""Synthetic toy corpora: colored blobs on a water-like background.

Used by the demos and the desk-scale verification runs, where a real
underwater corpus is unavailable. Each class is a set of blob color modes;
the background class has no blob at all.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import images

WATER_COLOR = (0.05, 0.15, 0.35)


def blob_image(
    size: int,
    blob_color,
    rng: np.random.Generator,
    *,
    water_color=WATER_COLOR,
    noise=0.02,
) -> np.ndarray:
    """One water-colored image with an elliptical blob of the given color.

    blob_color=None draws plain water. The blob is jittered in position,
    radius and hue so the corpus has within-mode variety, and kept off-center
    so flips and rotations produce distinct pixels.
    """
    img = np.empty((size, size, 3), dtype=np.float32)
    img[:] = water_color
    if blob_color is not None:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
        cx = size * (0.38 + 0.14 * rng.random())
        cy = size * (0.52 + 0.14 * rng.random())
        rx = size * (0.16 + 0.08 * rng.random())
        ry = size * (0.12 + 0.08 * rng.random())
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        color = np.clip(
            np.asarray(blob_color, dtype=np.float32)
            + rng.uniform(-0.05, 0.05, size=3).astype(np.float32),
            0.0,
            1.0,
        )
        img[mask] = color
    img += rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


# class -> list of blob-color modes (None = plain water background)
DEFAULT_CLASSES = {
    "bag": [(0.85, 0.10, 0.10), (0.55, 0.05, 0.85)],
    "fish": [(0.10, 0.80, 0.15)],
    "background": [None],
}


def write_corpus(
    root,
    classes: dict | None = None,
    *,
    n_per_class: int = 200,
    size: int = 32,
    seed: int = 0,
    modes_per_class: dict | None = None,
) -> dict[str, Path]:
    """Write a toy corpus to disk, one directory per class; returns the dirs.

    modes_per_class restricts which mode indices are drawn for a class
    (e.g. {"bag": [0]} withholds the second bag color mode).
    """
    classes = classes or DEFAULT_CLASSES
    root = Path(root)
    out = {}
    for ci, (name, modes) in enumerate(sorted(classes.items())):
        rng = np.random.default_rng(seed * 1000 + ci)
        allowed = (modes_per_class or {}).get(name)
        usable = [modes[i] for i in allowed] if allowed is not None else list(modes)
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            color = usable[i % len(usable)]
            img = blob_image(size, color, rng)
            images.save_image(img, class_dir / f"{name}_{i:04d}.png")
        out[name] = class_dir
    return out
