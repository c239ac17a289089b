"""8x8 orthonormal DCT-II split into 2x4 coefficient tasks, plus the JPEG-style quality pipeline.

A task covers coefficient rows ``row_offset..row_offset+1`` and columns
``col_offset..col_offset+3``; eight tasks cover one block. Sub-block 0
(the low-frequency corner) always runs reliably.

The task is modelled as direct summation: coefficient ``(u, v)`` accumulates
``(C[u, x] * p[x, y]) * C[v, y]`` over the 64 pixels in row-major order.
Each of those 3 operations per term is an instrumented fault site, so a
fault may land in a partial product or running sum rather than the final
coefficient.
"""

from __future__ import annotations

import math

import numpy as np

from ..metrics import psnr
from ..tasks import TaskKind, Workload, register
from .images import load_images

N = 8
SUB_ROWS, SUB_COLS = 2, 4
SUB_BLOCKS = (N // SUB_ROWS) * (N // SUB_COLS)

# JPEG Annex K luminance quantization table
JPEG_LUMA_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _basis() -> np.ndarray:
    c = np.empty((N, N))
    for u in range(N):
        alpha = math.sqrt(1.0 / N) if u == 0 else math.sqrt(2.0 / N)
        for x in range(N):
            c[u, x] = alpha * math.cos((2 * x + 1) * u * math.pi / (2 * N))
    return c


BASIS = _basis()

# direct summation over 64 pixels per coefficient: 2 multiplies + 1 add per term
OPS_PER_TERM = 3
TASK_COST = SUB_ROWS * SUB_COLS * N * N * OPS_PER_TERM
FAULT_SITES = TASK_COST  # one site per operation result

INPUT_LEN = N * N + 4  # pixels, image index, block row, block col, sub-block
DIM_NAMES = tuple(f"c{i}" for i in range(SUB_ROWS * SUB_COLS)) + ("row_offset", "col_offset")


def sub_block_offsets(index: int) -> tuple:
    if not 0 <= index < SUB_BLOCKS:
        raise ValueError(f"sub-block index must be in 0..{SUB_BLOCKS - 1}")
    return SUB_ROWS * (index // 2), SUB_COLS * (index % 2)


def dct_task(block, sub_block_index: int) -> np.ndarray:
    """The 8 coefficients of one 2x4 region of the block's DCT, row-major."""
    block = np.asarray(block, dtype=np.float64).reshape(N, N)
    r, c = sub_block_offsets(int(sub_block_index))
    coef = BASIS[r:r + SUB_ROWS] @ block @ BASIS[c:c + SUB_COLS].T
    return coef.ravel()


def dct2(block) -> np.ndarray:
    return BASIS @ np.asarray(block, dtype=np.float64) @ BASIS.T


def idct2(coef) -> np.ndarray:
    return BASIS.T @ np.asarray(coef, dtype=np.float64) @ BASIS


def _run_batch(inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    blocks = inputs[:, :N * N].reshape(-1, N, N)
    sub = inputs[:, N * N + 3].astype(np.intp)
    out = np.empty((inputs.shape[0], SUB_ROWS * SUB_COLS), dtype=np.float32)
    for s in range(SUB_BLOCKS):
        sel = np.flatnonzero(sub == s)
        if sel.size == 0:
            continue
        r, c = sub_block_offsets(s)
        coef = np.einsum("ux,nxy,vy->nuv", BASIS[r:r + SUB_ROWS], blocks[sel], BASIS[c:c + SUB_COLS])
        out[sel] = coef.reshape(sel.size, -1)
    return out


def _features(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    sub = inputs[:, N * N + 3].astype(np.intp)
    feats = np.empty((inputs.shape[0], len(DIM_NAMES)), dtype=np.float32)
    feats[:, :8] = outputs
    feats[:, 8] = (SUB_ROWS * (sub // 2)) / 6.0
    feats[:, 9] = (SUB_COLS * (sub % 2)) / 4.0
    return feats


def _flip32(values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    v32 = values.astype(np.float32)
    flipped = (v32.view(np.uint32) ^ masks.astype(np.uint32)).view(np.float32)
    with np.errstate(invalid="ignore", over="ignore"):
        return flipped.astype(np.float64) - v32.astype(np.float64)


def _apply_site_faults(inputs, outputs, rows, sites, masks) -> None:
    """Flip bits of intermediate operation results and propagate them to the outputs.

    Summation is linear, so a corrupted product or partial sum shifts the final
    coefficient by its own deviation (a corrupted first factor is scaled by the
    second). Deviations of several faults in one task add up.
    """
    x = np.asarray(inputs, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.intp)
    sites = np.asarray(sites, dtype=np.intp)
    coef, rem = np.divmod(sites, N * N * OPS_PER_TERM)
    term, op = np.divmod(rem, OPS_PER_TERM)
    r0, c0 = SUB_ROWS * (x[rows, N * N + 3].astype(np.intp) // 2), \
        SUB_COLS * (x[rows, N * N + 3].astype(np.intp) % 2)
    u = r0 + coef // SUB_COLS
    v = c0 + coef % SUB_COLS
    px, py = np.divmod(term, N)
    pixels = x[rows, :N * N]
    first = BASIS[u, px] * pixels[np.arange(rows.size), term]
    prod = first * BASIS[v, py]
    # running sums need every term of the affected coefficient
    all_terms = (BASIS[u][:, :, None] * pixels.reshape(-1, N, N) * BASIS[v][:, None, :]).reshape(-1, N * N)
    partial = np.cumsum(all_terms, axis=1)[np.arange(rows.size), term]
    delta = np.where(op == 0, _flip32(first, masks) * BASIS[v, py],
                     np.where(op == 1, _flip32(prod, masks), _flip32(partial, masks)))
    acc = np.zeros(outputs.shape, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        np.add.at(acc, (rows, coef), delta)
        hit = np.zeros(outputs.shape, dtype=bool)
        hit[rows, coef] = True
        outputs[hit] = (outputs[hit].astype(np.float64) + acc[hit]).astype(np.float32)


def _cost(inputs: np.ndarray) -> np.ndarray:
    return np.full(inputs.shape[0], float(TASK_COST))


def _reliable(indices, inputs: np.ndarray) -> np.ndarray:
    return inputs[:, N * N + 3] == 0


def tasks_for_images(images) -> np.ndarray:
    rows = []
    for k, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        if h % N or w % N:
            raise ValueError(f"image dimensions must be multiples of {N}, got {img.shape}")
        blocks = img.reshape(h // N, N, w // N, N).transpose(0, 2, 1, 3).reshape(-1, N * N)
        br, bc = np.divmod(np.arange(blocks.shape[0]), w // N)
        for s in range(SUB_BLOCKS):
            part = np.empty((blocks.shape[0], INPUT_LEN))
            part[:, :N * N] = blocks
            part[:, N * N] = k
            part[:, N * N + 1] = br
            part[:, N * N + 2] = bc
            part[:, N * N + 3] = s
            rows.append(part)
    out = np.concatenate(rows)
    # block-major order: all sub-blocks of a block are adjacent
    order = np.lexsort((out[:, N * N + 3], out[:, N * N + 2], out[:, N * N + 1], out[:, N * N]))
    return out[order]


def assemble_coefficients(workload: Workload, outputs) -> list:
    """Scatter task outputs back into per-image coefficient planes."""
    images = workload.context["images"]
    planes = [np.zeros_like(np.asarray(img, dtype=np.float64)) for img in images]
    x = workload.inputs
    with np.errstate(invalid="ignore"):
        out = np.asarray(outputs, dtype=np.float64).reshape(-1, SUB_ROWS, SUB_COLS)
    k, br, bc, s = (x[:, N * N + i].astype(np.intp) for i in range(4))
    rows = (br * N + SUB_ROWS * (s // 2))[:, None, None] + np.arange(SUB_ROWS)[None, :, None]
    cols = (bc * N + SUB_COLS * (s % 2))[:, None, None] + np.arange(SUB_COLS)[None, None, :]
    for img in range(len(planes)):
        sel = k == img
        planes[img][rows[sel].repeat(SUB_COLS, 2), cols[sel].repeat(SUB_ROWS, 1)] = out[sel]
    return planes


def compress_plane(coef_plane) -> np.ndarray:
    """Quantize, dequantize and inverse-transform a plane of 8x8 coefficient blocks."""
    coef = np.asarray(coef_plane, dtype=np.float64)
    h, w = coef.shape
    blocks = coef.reshape(h // N, N, w // N, N).transpose(0, 2, 1, 3)
    with np.errstate(invalid="ignore", over="ignore"):
        q = np.nan_to_num(blocks / JPEG_LUMA_Q, nan=0.0, posinf=32767.0, neginf=-32768.0)
    # coefficients are stored as 16-bit integers
    q = np.clip(np.rint(q), -32768, 32767)
    recon = np.einsum("ux,abuv,vy->abxy", BASIS, q * JPEG_LUMA_Q, BASIS)
    recon = recon.transpose(0, 2, 1, 3).reshape(h, w)
    return np.clip(np.rint(recon), 0, 255)


def dct_quality_pipeline(image, coef_plane) -> float:
    image = np.asarray(image, dtype=np.float64)
    if image.shape[0] % N or image.shape[1] % N:
        raise ValueError(f"image dimensions must be multiples of {N}")
    if np.shape(coef_plane) != image.shape:
        raise ValueError("coefficient plane must match the image shape")
    return psnr(compress_plane(coef_plane), image, 255.0)


def _quality(workload: Workload, outputs, reliable) -> float:
    images = workload.context["images"]
    planes = assemble_coefficients(workload, outputs)
    recon = np.concatenate([compress_plane(p).ravel() for p in planes])
    ref = np.concatenate([np.asarray(img, dtype=np.float64).ravel() for img in images])
    return psnr(recon, ref, 255.0)


def make_workload(images) -> Workload:
    images = [np.asarray(img, dtype=np.float64) for img in images]
    return Workload("dct", tasks_for_images(images), {"images": images})


def generate(range_profile: str, count: int, rng, image_paths=None, allow_synthetic=True,
             image_size: int = 512) -> Workload:
    images = load_images(image_paths, count, rng, image_size, range_profile, allow_synthetic)
    return make_workload(images)


KIND = register(TaskKind(
    name="dct",
    input_len=INPUT_LEN,
    output_len=SUB_ROWS * SUB_COLS,
    dim_names=DIM_NAMES,
    run_batch=_run_batch,
    features_batch=_features,
    cost_batch=_cost,
    reliable_batch=_reliable,
    perturbable_indices=tuple(range(SUB_ROWS * SUB_COLS)),
    quality_kind="psnr_db",
    quality=_quality,
    description="2x4 coefficient sub-block of an 8x8 DCT",
    fault_sites=FAULT_SITES,
    apply_site_faults=_apply_site_faults,
))
