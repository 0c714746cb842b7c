"""Global feature modulation and its folding into convolution kernels.

Scaling and shifting the output of a 1x1 convolution per channel,
``alpha * (W x + b) + beta``, is the same affine map as a convolution with
kernel ``diag(alpha) W`` and bias ``alpha * b + beta``.  A pre-convolution
channel scale ``gamma`` folds in the same way, as ``diag(alpha) W diag(gamma)``.
Folding touches ``n*m + 2n`` numbers instead of ``2*h*w*n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvKernel, conv1x1, conv2d
from .tensor import ShapeError, Tensor, as_tensor


@dataclass
class ModulationVectors:
    alpha: Tensor  # [n], post-conv scale
    beta: Tensor  # [n], post-conv shift
    gamma: Tensor | None = None  # [m], pre-conv scale

    @classmethod
    def neutral(cls, n: int, m: int, dtype=np.float64):
        return cls(Tensor(np.ones(n, dtype=dtype)), Tensor(np.zeros(n, dtype=dtype)), Tensor(np.ones(m, dtype=dtype)))


@dataclass
class FoldedKernel:
    weight: Tensor  # [n, m] (or [n, m, kh, kw] for the per-tap extension)
    bias: Tensor  # [n]


def _kernel_parts(k):
    """Return (weight, bias) with weight [n, m, kh, kw]."""
    if isinstance(k, ConvKernel):
        w, b = k.weight, k.bias
    else:
        w, b = k
        w = as_tensor(w)
        if w.ndim == 2:
            w = w.reshape(*w.shape, 1, 1)
    n = w.shape[0]
    if b is None:
        b = Tensor(np.zeros(n, dtype=w.dtype))
    return w, as_tensor(b)


def _check(w: Tensor, mv: ModulationVectors, need_gamma: bool):
    n, m = w.shape[:2]
    if mv.alpha.shape != (n,) or mv.beta.shape != (n,):
        raise ShapeError(f"alpha/beta must have length {n}, got {mv.alpha.shape} / {mv.beta.shape}")
    if need_gamma and mv.gamma is not None and mv.gamma.shape != (m,):
        raise ShapeError(f"gamma must have length {m}, got {mv.gamma.shape}")


def gfm(x: Tensor, k, mv: ModulationVectors) -> Tensor:
    """Feature-side modulation: ``alpha * conv(x) + beta``; gamma is ignored."""
    w, b = _kernel_parts(k)
    _check(w, mv, need_gamma=False)
    if w.shape[2:] == (1, 1):
        y = conv1x1(x, w.reshape(w.shape[0], w.shape[1]), b)
    else:
        y = conv2d(x, ConvKernel(w, b))
    return y * mv.alpha.reshape(-1, 1, 1) + mv.beta.reshape(-1, 1, 1)


def fold_modulation(k, mv: ModulationVectors) -> FoldedKernel:
    """Fold ``(alpha, beta, gamma)`` into the kernel and bias.

    With 1x1 kernels the folded weight is returned as ``[n, m]``; larger
    kernels scale every tap identically.
    """
    w, b = _kernel_parts(k)
    _check(w, mv, need_gamma=True)
    scaled = w * mv.alpha.reshape(-1, 1, 1, 1)
    if mv.gamma is not None:
        scaled = scaled * mv.gamma.reshape(1, -1, 1, 1)
    bias = b * mv.alpha + mv.beta
    if w.shape[2:] == (1, 1):
        scaled = scaled.reshape(w.shape[0], w.shape[1])
    return FoldedKernel(scaled, bias)


def dmc(x: Tensor, k, mv: ModulationVectors) -> Tensor:
    """Dual-modulated convolution evaluated through the folded kernel."""
    fk = fold_modulation(k, mv)
    if fk.weight.ndim == 2:
        return conv1x1(x, fk.weight, fk.bias)
    return conv2d(x, ConvKernel(fk.weight, fk.bias))


def dmc_unfolded(x: Tensor, k, mv: ModulationVectors) -> Tensor:
    """Reference path: scale input channels, convolve, then scale and shift outputs."""
    w, b = _kernel_parts(k)
    _check(w, mv, need_gamma=True)
    x = as_tensor(x)
    if mv.gamma is not None:
        x = x * mv.gamma.reshape(-1, 1, 1)
    return gfm(x, (w, b), mv)


def modulation_cost(h: int, w: int, m: int, n: int) -> tuple[int, int]:
    """Multiply/add counts of feature-side vs kernel-side modulation."""
    for v in (h, w, m, n):
        if int(v) != v or v < 1:
            raise ValueError("modulation_cost arguments must be positive integers")
    return 2 * h * w * n, n * m + 2 * n


COST_TABLE_ROWS = ((720, 480, 64, 64), (1080, 1920, 64, 64), (2160, 3840, 64, 64))


def _mega(v: int) -> str:
    return f"{v / 1e6:.2f}M"


def cost_table() -> list[dict]:
    rows = []
    for h, w, m, n in COST_TABLE_ROWS:
        g, c = modulation_cost(h, w, m, n)
        rows.append(
            {
                "shape": f"{h}x{w}x{n}",
                "gfm_ops": g,
                "ckm_ops": c,
                "gfm": _mega(g),
                "ckm": f"{c / 1e3:.2f}K",
                "ratio_pct": 100.0 * c / g,
                "speedup": g / c,
            }
        )
    return rows


def format_cost_table() -> str:
    lines = [f"{'feature shape':<16}{'GFM ops':>16}{'CKM ops':>10}{'GFM':>11}{'CKM':>8}{'ratio':>11}"]
    for r in cost_table():
        lines.append(
            f"{r['shape']:<16}{r['gfm_ops']:>16,}{r['ckm_ops']:>10,}{r['gfm']:>11}{r['ckm']:>8}{r['ratio_pct']:>10.4f}%"
        )
    return "\n".join(lines)
