"""Sobel edge magnitude over 16-pixel row tiles.

A task reads a 3 x (TILE+2) pixel strip (borders replicated) and writes TILE
magnitudes ``|Gx| + |Gy|`` clamped to [0, 255]. The feature vector is the tile
output itself.
"""

from __future__ import annotations

import numpy as np

from ..metrics import psnr
from ..tasks import TaskKind, Workload, never_reliable, register
from .images import load_images

TILE = 16
STRIP_W = TILE + 2
INPUT_LEN = 3 * STRIP_W + 3  # strip, image index, row, tile index
# per pixel: Gx 7 (2 doublings, 4 adds, 1 sub), Gy 7, two abs + add 3, clamp 1
PIXEL_COST = 18
TASK_COST = TILE * PIXEL_COST
DIM_NAMES = tuple(f"g{i}" for i in range(TILE))


def sobel_task(strip) -> np.ndarray:
    strip = np.asarray(strip, dtype=np.float64)
    if strip.ndim != 2 or strip.shape[0] != 3 or strip.shape[1] < 3:
        raise ValueError("strip must be 3 x W with W >= 3")
    return _sobel(strip[None])[0]


def _sobel(strips: np.ndarray) -> np.ndarray:
    p = strips
    gx = (p[:, 0, 2:] + 2 * p[:, 1, 2:] + p[:, 2, 2:]) - (p[:, 0, :-2] + 2 * p[:, 1, :-2] + p[:, 2, :-2])
    gy = (p[:, 2, :-2] + 2 * p[:, 2, 1:-1] + p[:, 2, 2:]) - (p[:, 0, :-2] + 2 * p[:, 0, 1:-1] + p[:, 0, 2:])
    return np.clip(np.abs(gx) + np.abs(gy), 0.0, 255.0)


def _run_batch(inputs: np.ndarray) -> np.ndarray:
    strips = np.asarray(inputs, dtype=np.float64)[:, :3 * STRIP_W].reshape(-1, 3, STRIP_W)
    return _sobel(strips).astype(np.float32)


def _features(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    return np.asarray(outputs, dtype=np.float32).copy()


def _cost(inputs: np.ndarray) -> np.ndarray:
    return np.full(inputs.shape[0], float(TASK_COST))


def tasks_for_images(images) -> np.ndarray:
    rows = []
    for k, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        if w % TILE:
            raise ValueError(f"image width must be a multiple of {TILE}")
        padded = np.pad(img, 1, mode="edge")
        tiles = w // TILE
        # windows[r, t] = padded[r:r+3, t*TILE : t*TILE+STRIP_W]
        win = np.lib.stride_tricks.sliding_window_view(padded, (3, STRIP_W))
        win = win[:, ::TILE][:h, :tiles]
        part = np.empty((h * tiles, INPUT_LEN))
        part[:, :3 * STRIP_W] = win.reshape(h * tiles, -1)
        rr, tt = np.divmod(np.arange(h * tiles), tiles)
        part[:, -3] = k
        part[:, -2] = rr
        part[:, -1] = tt
        rows.append(part)
    return np.concatenate(rows)


def assemble(workload: Workload, outputs) -> list:
    images = workload.context["images"]
    x = workload.inputs
    out = np.asarray(outputs, dtype=np.float64)
    planes = []
    for k, img in enumerate(images):
        sel = x[:, -3] == k
        h, w = np.shape(img)
        plane = np.zeros((h, w))
        rows = x[sel, -2].astype(np.intp)
        cols = (x[sel, -1].astype(np.intp) * TILE)[:, None] + np.arange(TILE)[None, :]
        plane[rows[:, None], cols] = out[sel]
        planes.append(plane)
    return planes


def edge_image(img) -> np.ndarray:
    """Reference full-image Sobel output (replicated borders)."""
    w = Workload("sobel", tasks_for_images([img]), {"images": [img]})
    return assemble(w, _run_batch(w.inputs).astype(np.float64))[0]


def _store(plane: np.ndarray) -> np.ndarray:
    # output pixels are saturated to the 8-bit range on store
    return np.clip(np.nan_to_num(plane, nan=0.0, posinf=255.0, neginf=0.0), 0.0, 255.0)


def _quality(workload: Workload, outputs, reliable) -> float:
    a = np.concatenate([_store(p).ravel() for p in assemble(workload, outputs)])
    b = np.concatenate([_store(p).ravel() for p in assemble(workload, reliable)])
    return psnr(a, b, 255.0)


def make_workload(images) -> Workload:
    images = [np.asarray(img, dtype=np.float64) for img in images]
    return Workload("sobel", tasks_for_images(images), {"images": images})


def generate(range_profile: str, count: int, rng, image_paths=None, allow_synthetic=True,
             image_size: int = 512) -> Workload:
    images = load_images(image_paths, count, rng, image_size, range_profile, allow_synthetic)
    return make_workload(images)


KIND = register(TaskKind(
    name="sobel",
    input_len=INPUT_LEN,
    output_len=TILE,
    dim_names=DIM_NAMES,
    run_batch=_run_batch,
    features_batch=_features,
    cost_batch=_cost,
    reliable_batch=never_reliable,
    perturbable_indices=tuple(range(TILE)),
    quality_kind="psnr_db",
    quality=_quality,
    description=f"Sobel magnitudes of one {TILE}-pixel row tile",
))
