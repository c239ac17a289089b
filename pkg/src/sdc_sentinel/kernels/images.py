"""8-bit grayscale PGM (P5) I/O and a seeded synthetic test-image generator."""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import numpy as np

# Disjoint parameter ranges per profile. Texture frequencies (cycles/pixel) use
# interleaved bands so both profiles cover the same part of the spectrum.
SYNTHETIC_RANGES = {
    "train": {
        "texture_freq": ((0.03, 0.05), (0.07, 0.09), (0.11, 0.13)),
        "gradient_angle": (0.0, math.pi),
    },
    "validation": {
        "texture_freq": ((0.05, 0.07), (0.09, 0.11), (0.13, 0.15)),
        "gradient_angle": (math.pi, 2 * math.pi),
    },
}


def _tokens(data: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64)


def write_pgm(path, image) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
    os.replace(tmp, path)


def synthetic_image(rng: np.random.Generator, size: int = 512, profile: str = "train") -> np.ndarray:
    """Gradient background, sinusoidal texture patches, flat shapes and sensor noise."""
    ranges = SYNTHETIC_RANGES[profile]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    angle = rng.uniform(*ranges["gradient_angle"])
    img = 128.0 + 60.0 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))

    for _ in range(int(rng.integers(4, 9))):
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.05, 0.25, 2)
        level = rng.uniform(20, 235)
        if rng.random() < 0.5:
            mask = (np.abs(xx - cx) < rx) & (np.abs(yy - cy) < ry)
        else:
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
        img = np.where(mask, 0.3 * img + 0.7 * level, img)

    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0, 1, 2)
        radius = rng.uniform(0.1, 0.3)
        bands = ranges["texture_freq"]
        freq = rng.uniform(*bands[int(rng.integers(len(bands)))]) * size
        theta = rng.uniform(0, math.pi)
        amp = rng.uniform(10, 35)
        wave = amp * np.sin(2 * math.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        weight = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2)))
        img = img + weight * wave

    img = img + rng.normal(0.0, rng.uniform(2.0, 4.0), size=img.shape)
    return np.clip(np.rint(img), 0, 255)


def load_images(paths=None, count: int = 1, rng=None, size: int = 512, profile: str = "train",
                allow_synthetic: bool = True) -> list:
    paths = list(paths or [])
    if paths:
        missing = [p for p in paths if not Path(p).exists()]
        if missing and not allow_synthetic:
            raise FileNotFoundError(f"image file(s) not found: {missing}")
        present = [read_pgm(p) for p in paths if Path(p).exists()]
        if present:
            return present
    if not allow_synthetic:
        raise FileNotFoundError("no image files given and synthetic fallback disabled")
    rng = rng if rng is not None else np.random.default_rng(0)
    return [synthetic_image(rng, size, profile) for _ in range(count)]
