"""Synthetic dual-degradation data: bit-depth quantisation, a block-DCT codec
stand-in, procedural HDR clips and LQ-SDR / HQ-SDR / HQ-HDR triplets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .color import (
    M_709_TO_2020,
    ColorSpace,
    Frame,
    pq_oetf,
    reference_tonemap,
)
from .tensor import ContractError, ShapeError

CLIP_LEN = 7
MID = CLIP_LEN // 2
QP_LABELS = (27, 32, 37, 42)
QP_STEPS = {27: 4 / 255, 32: 8 / 255, 37: 16 / 255, 42: 32 / 255}
BLOCK = 8


@dataclass
class ClipPair:
    lq_sdr: list[Frame]
    hq_sdr_mid: Frame
    hq_hdr_mid: Frame
    qp_label: int
    seed: int
    hq_sdr: list[Frame] | None = None
    hq_hdr: list[Frame] | None = None

    def __post_init__(self):
        if len(self.lq_sdr) != CLIP_LEN:
            raise ContractError(f"a clip pair holds exactly {CLIP_LEN} LQ frames, got {len(self.lq_sdr)}")
        shapes = {f.pixels.shape for f in self.lq_sdr} | {self.hq_sdr_mid.pixels.shape, self.hq_hdr_mid.pixels.shape}
        if len(shapes) != 1:
            raise ShapeError(f"frames in a clip pair differ in shape: {sorted(shapes)}")

    def lq_array(self) -> np.ndarray:
        """LQ frames stacked as ``[7, 3, H, W]``."""
        return np.stack([f.pixels for f in self.lq_sdr])


def quantize(x: Frame, bits: int) -> Frame:
    if bits not in (8, 10):
        raise ContractError(f"bits must be 8 or 10, got {bits}")
    levels = (1 << bits) - 1
    return x.with_pixels(np.round(np.clip(x.pixels, 0.0, 1.0) * levels) / levels, bit_depth=bits)


def codec_artifact_sim(x: Frame, qp_label: int | None = None, step: float | None = None) -> Frame:
    """Quantise each 8x8 block's orthonormal DCT-II coefficients with a flat step.

    ``step`` overrides the table value selected by ``qp_label``.
    """
    if x.space is not ColorSpace.SDR_BT709:
        raise ContractError("codec_artifact_sim expects an SDR frame")
    if step is None:
        if qp_label not in QP_STEPS:
            raise ContractError(f"qp_label must be one of {QP_LABELS}, got {qp_label}")
        step = QP_STEPS[qp_label]
    C, H, W = x.pixels.shape
    if H % BLOCK or W % BLOCK:
        raise ShapeError(f"frame size {H}x{W} is not a multiple of {BLOCK}")
    blocks = x.pixels.reshape(C, H // BLOCK, BLOCK, W // BLOCK, BLOCK)
    coef = dctn(blocks, type=2, axes=(2, 4), norm="ortho")
    coef = np.round(coef / step) * step
    rec = idctn(coef, type=2, axes=(2, 4), norm="ortho").reshape(C, H, W)
    return x.with_pixels(np.clip(rec, 0.0, 1.0), bit_depth=None)


def degrade_sdr(hq: Frame, qp_label: int) -> Frame:
    """8-bit source -> block-DCT codec -> 8-bit decoded output."""
    return quantize(codec_artifact_sim(quantize(hq, 8), qp_label), 8)


def synth_clip_pair(hdr_frames: list[Frame], qp_label: int, seed: int = 0) -> ClipPair:
    if len(hdr_frames) != CLIP_LEN:
        raise ContractError(f"synth_clip_pair needs {CLIP_LEN} HDR frames, got {len(hdr_frames)}")
    if qp_label not in QP_STEPS:
        raise ContractError(f"qp_label must be one of {QP_LABELS}, got {qp_label}")
    hq_sdr = [reference_tonemap(f) for f in hdr_frames]
    lq = [degrade_sdr(f, qp_label) for f in hq_sdr]
    return ClipPair(lq, hq_sdr[MID], hdr_frames[MID], qp_label, int(seed), hq_sdr, list(hdr_frames))


# -- procedural HDR content ----------------------------------------------------------


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled lattice noise in [-1, 1]."""
    grid = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    t = np.linspace(0.0, cells, size, endpoint=False)
    i = t.astype(int)
    f = t - i
    g0 = grid[i][:, i] * (1 - f)[None, :] + grid[i][:, i + 1] * f[None, :]
    g1 = grid[i + 1][:, i] * (1 - f)[None, :] + grid[i + 1][:, i + 1] * f[None, :]
    return g0 * (1 - f)[:, None] + g1 * f[:, None]


def _random_color(rng: np.random.Generator, saturation: float) -> np.ndarray:
    """Unit-luminance BT.2020 linear colour; saturation > 1 leaves the 709 gamut."""
    c709 = rng.uniform(0.05, 1.0, size=3)
    c = M_709_TO_2020 @ c709
    grey = c.mean()
    c = grey + saturation * (c - grey)
    c = np.clip(c, 0.002, None)
    return c / (0.2627 * c[0] + 0.6780 * c[1] + 0.0593 * c[2])


def procedural_hdr_scene(seed: int, size: int) -> np.ndarray:
    """Linear BT.2020 scene in cd/m^2, ``[3, size, size]``."""
    rng = np.random.default_rng(seed)
    peak = rng.uniform(400.0, 4000.0)
    base = rng.uniform(2.0, 60.0)
    sat = rng.uniform(0.8, 1.4)
    yy, xx = np.mgrid[0:size, 0:size] / size

    angle = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * np.cos(angle) * (xx - 0.5) * 2 + 0.5 * np.sin(angle) * (yy - 0.5) * 2
    lum = base * (0.25 + 1.5 * np.clip(ramp, 0, 1))
    texture = 1.0 + 0.35 * _smooth_noise(rng, size, max(2, size // 8)) + 0.15 * _smooth_noise(rng, size, max(2, size // 3))
    bg_color = _random_color(rng, sat)
    scene = bg_color[:, None, None] * (lum * texture)[None]

    for _ in range(rng.integers(4, 9)):
        color = _random_color(rng, sat)
        level = np.exp(rng.uniform(np.log(base * 0.5), np.log(peak)))
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.04, 0.18)
        if rng.random() < 0.5:
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.4, 1.6))
        stripes = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(2, 10) * (xx * np.cos(angle) + yy * np.sin(angle)))
        scene = np.where(mask[None], color[:, None, None] * (level * stripes)[None], scene)

    # a few small specular highlights near the clip peak
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.015, 0.05)
        glow = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        scene = scene + peak * glow[None] * rng.uniform(0.7, 1.0)
    return np.clip(scene, 0.0, 10000.0)


def procedural_hdr_clip(
    seed: int,
    size: int = 64,
    frames: int = CLIP_LEN,
    static: bool = False,
    grain: float = 0.0,
) -> list[Frame]:
    """Moving-camera crops of a procedural scene, 10-bit PQ encoded.

    ``grain`` adds per-frame Gaussian noise (in PQ code units) before
    quantisation, so static clips still vary frame to frame.
    """
    rng = np.random.default_rng([seed, 1])
    speed = 0 if static else 2
    vy, vx = (0, 0) if static else rng.integers(-speed, speed + 1, size=2)
    margin = speed * (frames // 2) + 1
    canvas = procedural_hdr_scene(seed, size + 2 * margin)
    code = pq_oetf(canvas)
    out = []
    for t in range(frames):
        dt = t - frames // 2
        oy, ox = margin + dt * vy, margin + dt * vx
        px = code[:, oy : oy + size, ox : ox + size]
        if grain > 0:
            px = px + rng.normal(0.0, grain, size=px.shape)
        px = np.round(np.clip(px, 0.0, 1.0) * 1023) / 1023
        out.append(Frame(px, ColorSpace.HDR_BT2020_PQ, 10, {"frame": t}))
    return out


def synthetic_corpus(n_clips: int, qp_label: int, seed: int = 0, size: int = 64) -> list[ClipPair]:
    return [
        synth_clip_pair(procedural_hdr_clip(seed * 100003 + i, size), qp_label, seed * 100003 + i)
        for i in range(n_clips)
    ]
