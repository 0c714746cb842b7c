"""Full-reference quality metrics and report writers."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .color import Frame, rgb_to_itp
from .tensor import ContractError, ShapeError
from .wavelet import PSNR_CAP

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN = SSIM_WIN * 2 ** (len(MS_SSIM_WEIGHTS) - 1)  # 176
ITP_SCALE = 720.0


def _px(x) -> np.ndarray:
    return np.asarray(x.pixels if isinstance(x, Frame) else x, dtype=np.float64)


def _pair(a, b):
    a, b = _px(a), _px(b)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window() -> np.ndarray:
    r = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-(r**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


_WIN = _gaussian_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    y = correlate1d(img, _WIN, axis=-2, mode="constant")
    y = correlate1d(y, _WIN, axis=-1, mode="constant")
    h = SSIM_WIN // 2
    return y[..., h:-h, h:-h]


def _ssim_terms(a: np.ndarray, b: np.ndarray, peak: float):
    """Per-channel mean SSIM and mean contrast-structure term."""
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a), _filter_valid(b)
    saa = _filter_valid(a * a) - mu_a**2
    sbb = _filter_valid(b * b) - mu_b**2
    sab = _filter_valid(a * b) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return (lum * cs).mean(axis=(-2, -1)), cs.mean(axis=(-2, -1))


def ssim(a, b, peak: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ContractError(f"SSIM needs spatial dims >= {SSIM_WIN}")
    if np.array_equal(a, b):
        return 1.0
    s, _ = _ssim_terms(a, b, peak)
    return float(s.mean())


def _down2(x: np.ndarray) -> np.ndarray:
    H, W = x.shape[-2:]
    x = x[..., : H - H % 2, : W - W % 2]
    return x.reshape(*x.shape[:-2], H // 2, 2, W // 2, 2).mean(axis=(-3, -1))


def ms_ssim(a, b, peak: float = 1.0) -> float:
    """Five-scale MS-SSIM; negative per-scale terms are clamped to zero."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < MS_SSIM_MIN:
        raise ContractError(f"MS-SSIM needs spatial dims >= {MS_SSIM_MIN}")
    if np.array_equal(a, b):
        return 1.0
    n = len(MS_SSIM_WEIGHTS)
    result = np.ones(a.shape[0])
    for i, wgt in enumerate(MS_SSIM_WEIGHTS):
        s, cs = _ssim_terms(a, b, peak)
        term = s if i == n - 1 else cs
        result *= np.maximum(term, 0.0) ** wgt
        if i < n - 1:
            a, b = _down2(a), _down2(b)
    return float(result.mean())


def delta_e_itp_map(a: Frame, b: Frame) -> np.ndarray:
    if not (isinstance(a, Frame) and isinstance(b, Frame)):
        raise ContractError("delta_e_itp needs tagged Frames")
    if a.space is not b.space:
        raise ContractError(f"color spaces differ: {a.space.value} vs {b.space.value}")
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    d = rgb_to_itp(a) - rgb_to_itp(b)
    return ITP_SCALE * np.sqrt((d * d).sum(axis=0))


def delta_e_itp(a: Frame, b: Frame) -> float:
    """Mean per-pixel ``720 * ||ITP(a) - ITP(b)||``."""
    return float(delta_e_itp_map(a, b).mean())


def temporal_std_delta_e(pred_clip, ref_clip) -> float:
    """Population standard deviation of per-frame mean delta-E ITP."""
    if len(pred_clip) != len(ref_clip):
        raise ContractError(f"clip lengths differ: {len(pred_clip)} vs {len(ref_clip)}")
    vals = [delta_e_itp(p, r) for p, r in zip(pred_clip, ref_clip)]
    return float(np.std(vals))


# -- reports -------------------------------------------------------------------------


@dataclass
class MetricReport:
    clip_id: str
    qp_label: int | None = None
    values: dict[str, list[float]] = field(default_factory=dict)

    def add(self, metric: str, value: float):
        self.values.setdefault(metric, []).append(float(value))

    def mean(self, metric: str) -> float:
        v = self.values[metric]
        return float(sum(v) / len(v))

    def means(self) -> dict[str, float]:
        return {k: self.mean(k) for k in self.values}


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def reports_to_csv(reports: list[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip", "frame", "metric", "value"])
    for rep in reports:
        for metric, vals in rep.values.items():
            for i, v in enumerate(vals):
                w.writerow([rep.clip_id, i, metric, _fmt(v)])
    return buf.getvalue()


def reports_to_markdown(reports: list[MetricReport], metrics: list[str] | None = None) -> str:
    """Table with one row per metric and one column per QP label, plus the mean over all clips."""
    metrics = metrics or sorted({m for r in reports for m in r.values})
    qps = sorted({r.qp_label for r in reports if r.qp_label is not None})
    cols = [f"QP={q}" for q in qps] + ["Mean"]
    lines = ["| Metric | " + " | ".join(cols) + " |", "|---|" + "---|" * len(cols)]
    for m in metrics:
        cells = []
        for q in qps:
            vals = [v for r in reports if r.qp_label == q for v in r.values.get(m, [])]
            cells.append(f"{np.mean(vals):.4f}" if vals else "-")
        all_vals = [v for r in reports for v in r.values.get(m, [])]
        cells.append(f"{np.mean(all_vals):.4f}" if all_vals else "-")
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
