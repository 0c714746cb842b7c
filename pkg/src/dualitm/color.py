"""SDR/HDR signal model: transfer functions, gamut conversion, ICtCp/ITP and
the reference HDR-to-SDR tone map used to synthesise training pairs.

Pixel arrays are channel-first ``[3, H, W]`` numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, ShapeError

# SMPTE ST 2084
PQ_M1 = 1305 / 8192
PQ_M2 = 2523 / 32
PQ_C1 = 107 / 128
PQ_C2 = 2413 / 128
PQ_C3 = 2392 / 128
PQ_PEAK = 10000.0

# ITU-R BT.709
BT709_A = 1.099
BT709_B = 0.018

SDR_WHITE_NITS = 100.0
TONEMAP_LW = 100.0


class ColorSpace(str, enum.Enum):
    SDR_BT709 = "SDR_BT709"
    HDR_BT2020_PQ = "HDR_BT2020_PQ"


@dataclass
class Frame:
    pixels: np.ndarray  # [3, H, W] in [0, 1]
    space: ColorSpace
    bit_depth: int | None = None  # 8, 10 or None for float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.space = ColorSpace(self.space)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"frame pixels must be [3,H,W], got {self.pixels.shape}")
        if self.bit_depth not in (None, 8, 10):
            raise ContractError(f"bit_depth must be 8, 10 or None, got {self.bit_depth}")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def with_pixels(self, pixels, bit_depth=None) -> "Frame":
        return Frame(pixels, self.space, bit_depth, dict(self.meta))


# -- transfer functions ----------------------------------------------------------


def pq_oetf(nits, peak: float = PQ_PEAK) -> np.ndarray:
    """Absolute luminance (cd/m^2) to PQ code value in [0, 1]."""
    L = np.asarray(nits, dtype=np.float64)
    if np.any(L < 0):
        raise ValueError("PQ encoding needs non-negative luminance")
    y = np.minimum(L / peak, 1.0) ** PQ_M1
    return ((PQ_C1 + PQ_C2 * y) / (1.0 + PQ_C3 * y)) ** PQ_M2


def pq_eotf(code, peak: float = PQ_PEAK) -> np.ndarray:
    """PQ code value to absolute luminance in cd/m^2."""
    v = np.clip(np.asarray(code, dtype=np.float64), 0.0, 1.0) ** (1.0 / PQ_M2)
    num = np.maximum(v - PQ_C1, 0.0)
    return peak * (num / (PQ_C2 - PQ_C3 * v)) ** (1.0 / PQ_M1)


def bt709_oetf(linear) -> np.ndarray:
    """Relative scene light in [0, 1] to BT.709 signal."""
    L = np.clip(np.asarray(linear, dtype=np.float64), 0.0, None)
    return np.where(L < BT709_B, 4.5 * L, BT709_A * np.power(L, 0.45) - (BT709_A - 1.0))


def bt709_eotf(signal) -> np.ndarray:
    """Exact inverse of :func:`bt709_oetf` (not the BT.1886 display curve)."""
    V = np.clip(np.asarray(signal, dtype=np.float64), 0.0, None)
    return np.where(
        V < 4.5 * BT709_B, V / 4.5, np.power((V + (BT709_A - 1.0)) / BT709_A, 1.0 / 0.45)
    )


# -- gamut -------------------------------------------------------------------------

_D65 = (0.3127, 0.3290)
_PRIMARIES = {
    "709": ((0.640, 0.330), (0.300, 0.600), (0.150, 0.060)),
    "2020": ((0.708, 0.292), (0.170, 0.797), (0.131, 0.046)),
}


def _rgb_to_xyz(primaries, white=_D65) -> np.ndarray:
    def xyz(c):
        x, y = c
        return np.array([x / y, 1.0, (1 - x - y) / y])

    P = np.stack([xyz(c) for c in primaries], axis=1)
    S = np.linalg.solve(P, xyz(white))
    return P * S


RGB709_TO_XYZ = _rgb_to_xyz(_PRIMARIES["709"])
RGB2020_TO_XYZ = _rgb_to_xyz(_PRIMARIES["2020"])
M_709_TO_2020 = np.linalg.solve(RGB2020_TO_XYZ, RGB709_TO_XYZ)
M_2020_TO_709 = np.linalg.inv(M_709_TO_2020)
LUMA_709 = RGB709_TO_XYZ[1]
LUMA_2020 = RGB2020_TO_XYZ[1]


def _apply3(M: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[0] != 3:
        raise ShapeError(f"expected 3 leading channels, got {rgb.shape}")
    return np.tensordot(M, rgb, axes=(1, 0))


def gamut_convert(rgb_linear, direction: str) -> np.ndarray:
    """Linear-light primaries conversion, ``'709->2020'`` or ``'2020->709'``."""
    if direction == "709->2020":
        return _apply3(M_709_TO_2020, rgb_linear)
    if direction == "2020->709":
        return _apply3(M_2020_TO_709, rgb_linear)
    raise ValueError(f"unknown gamut direction {direction!r}")


# -- ICtCp / ITP -----------------------------------------------------------------

RGB2020_TO_LMS = np.array([[1688, 2146, 262], [683, 2951, 462], [99, 309, 3688]], dtype=np.float64) / 4096
LMS_TO_ICTCP = np.array([[2048, 2048, 0], [6610, -13613, 7003], [17933, -17390, -543]], dtype=np.float64) / 4096


def linear2020_to_itp(nits2020: np.ndarray) -> np.ndarray:
    """Absolute linear BT.2020 RGB (cd/m^2) to ITP = (I, Ct/2, Cp)."""
    lms = _apply3(RGB2020_TO_LMS, np.clip(nits2020, 0.0, PQ_PEAK))
    ictcp = _apply3(LMS_TO_ICTCP, pq_oetf(lms))
    ictcp[1] *= 0.5
    return ictcp


def frame_to_linear2020(frame: Frame) -> np.ndarray:
    if frame.space is ColorSpace.HDR_BT2020_PQ:
        return pq_eotf(frame.pixels)
    if frame.space is ColorSpace.SDR_BT709:
        return gamut_convert(bt709_eotf(frame.pixels) * SDR_WHITE_NITS, "709->2020")
    raise ContractError(f"unsupported color space {frame.space}")


def rgb_to_itp(frame: Frame) -> np.ndarray:
    if not isinstance(frame, Frame):
        raise ContractError("rgb_to_itp needs a tagged Frame")
    return linear2020_to_itp(frame_to_linear2020(frame))


# -- reference tone map ------------------------------------------------------------


def reference_tonemap(hdr: Frame, white_nits: float = TONEMAP_LW) -> Frame:
    """HDR PQ/BT.2020 frame to a float BT.709 SDR frame.

    PQ decode, hard-clipped gamut conversion, Reinhard compression of
    luminance ``L / (1 + L / Lw)`` with colour ratios preserved, then the
    BT.709 OETF on light relative to 100 cd/m^2.
    """
    if hdr.space is not ColorSpace.HDR_BT2020_PQ:
        raise ContractError(f"reference_tonemap needs an HDR_BT2020_PQ frame, got {hdr.space}")
    rgb = np.clip(gamut_convert(pq_eotf(hdr.pixels), "2020->709"), 0.0, None)
    Y = np.tensordot(LUMA_709, rgb, axes=(0, 0))
    Yc = Y / (1.0 + Y / white_nits)
    scale = np.divide(Yc, Y, out=np.ones_like(Y), where=Y > 0)
    rel = np.clip(rgb * scale / SDR_WHITE_NITS, 0.0, 1.0)
    return Frame(bt709_oetf(rel), ColorSpace.SDR_BT709, None)


def inverse_tonemap(sdr: Frame, white_nits: float = TONEMAP_LW) -> Frame:
    """Analytic inverse of :func:`reference_tonemap` on its range.

    Gamut clipping is not undone; luminance is capped at the PQ peak.
    """
    if sdr.space is not ColorSpace.SDR_BT709:
        raise ContractError(f"inverse_tonemap needs an SDR_BT709 frame, got {sdr.space}")
    rgb = bt709_eotf(np.clip(sdr.pixels, 0.0, 1.0)) * SDR_WHITE_NITS
    Yc = np.tensordot(LUMA_709, rgb, axes=(0, 0))
    denom = np.maximum(1.0 - Yc / white_nits, 1e-9)
    Y = np.minimum(Yc / denom, PQ_PEAK)
    scale = np.divide(Y, Yc, out=np.ones_like(Yc), where=Yc > 0)
    nits2020 = np.clip(gamut_convert(rgb * scale, "709->2020"), 0.0, PQ_PEAK)
    return Frame(pq_oetf(nits2020), ColorSpace.HDR_BT2020_PQ, None)
