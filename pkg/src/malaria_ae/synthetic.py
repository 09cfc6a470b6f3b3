"""Seeded synthetic cell-like images for tests and demos.

"Normal" images are one broad Gaussian blob filling most of a dark frame,
like a single cell in a crop; an "anomalous" image is a normal image plus a
small, bright, sharp dot inside the blob, loosely mimicking a stained
parasite.
"""
import os

import numpy as np
from PIL import Image

from .rng import SplitMix64


def _blob(size, cx, cy, sigma, amp):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma))


def normal_images(n: int, seed: int, size: int = 32) -> np.ndarray:
    """``[n,1,size,size]`` float32 blob images in [0,1]."""
    rng = SplitMix64(seed)
    out = np.empty((n, 1, size, size), np.float32)
    for i in range(n):
        c = size / 2
        cx = rng.uniform(c - size / 8, c + size / 8)
        cy = rng.uniform(c - size / 8, c + size / 8)
        sigma = rng.uniform(size / 4, size / 3)
        amp = rng.uniform(0.4, 0.6)
        out[i, 0] = _blob(size, cx, cy, sigma, amp)
    return out


def add_dots(images: np.ndarray, seed: int, radius: float = 1.0, amp: float = 1.0) -> np.ndarray:
    """Copy of ``images`` with one bright dot near each image's intensity peak."""
    rng = SplitMix64(seed)
    out = images.copy()
    size = images.shape[-1]
    for i in range(len(out)):
        py, px = np.unravel_index(np.argmax(out[i, 0]), out[i, 0].shape)
        cx = px + rng.uniform(-3, 3)
        cy = py + rng.uniform(-3, 3)
        out[i, 0] = np.maximum(out[i, 0], _blob(size, cx, cy, radius, amp))
    return out


def anomalous_images(n: int, seed: int, size: int = 32) -> np.ndarray:
    """Blob images drawn like :func:`normal_images` (own stream) with dots added."""
    return add_dots(normal_images(n, seed, size), seed + 1)


def write_dataset(root, normals: np.ndarray, anomalies: np.ndarray, upscale: int = 1) -> None:
    """Write images as RGB PNGs in the ``Uninfected``/``Parasitized`` directory layout.

    ``upscale`` > 1 enlarges each image by pixel repetition so the resize
    step of preprocessing is exercised.
    """
    for sub, imgs in (("Uninfected", normals), ("Parasitized", anomalies)):
        d = os.path.join(root, sub)
        os.makedirs(d, exist_ok=True)
        for i, img in enumerate(imgs):
            px = np.floor(img[0] * 255 + 0.5).astype(np.uint8)
            if upscale > 1:
                px = np.kron(px, np.ones((upscale, upscale), np.uint8))
            Image.fromarray(np.stack([px] * 3, axis=-1), "RGB").save(os.path.join(d, f"img_{i:05d}.png"))
