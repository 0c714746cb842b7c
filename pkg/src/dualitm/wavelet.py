"""Single-level orthonormal 2-D Haar transform and wavelet channel attention."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn import conv1x1
from .tensor import ShapeError, Tensor, as_tensor, stack

PSNR_CAP = 99.0


class WaveletCoeffs(NamedTuple):
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor


def _analysis(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return np.stack(
        [(a + b + c + d) * 0.5, (a + b - c - d) * 0.5, (a - b + c - d) * 0.5, (a - b - c + d) * 0.5]
    )


def _synthesis(s: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = s
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]), dtype=ll.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def haar_stack(x: Tensor) -> Tensor:
    """Analysis step returning subbands stacked on a new leading axis (ll, lh, hl, hh)."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"Haar transform needs even spatial dims, got {H}x{W}")
    # the transform is orthonormal, so its adjoint is the inverse
    return Tensor._make(_analysis(x.data), (x,), lambda g: (_synthesis(g),))


def haar_unstack(s: Tensor) -> Tensor:
    s = as_tensor(s)
    if s.shape[0] != 4:
        raise ShapeError(f"expected 4 stacked subbands, got leading dim {s.shape[0]}")
    return Tensor._make(_synthesis(s.data), (s,), lambda g: (_analysis(g),))


def dwt2_haar(x: Tensor) -> WaveletCoeffs:
    s = haar_stack(x)
    return WaveletCoeffs(s[0], s[1], s[2], s[3])


def idwt2_haar(c: WaveletCoeffs) -> Tensor:
    shapes = {tuple(t.shape) for t in c}
    if len(shapes) != 1:
        raise ShapeError(f"subband shapes differ: {sorted(shapes)}")
    return haar_unstack(stack(list(c), axis=0))


@dataclass
class WAParams:
    """Weights of the three 1x1 convolutions inside wavelet attention.

    ``reduce`` maps the 4C concatenated subbands to ``z``; ``gate`` maps the
    pooled ``z`` to attention logits; ``expand`` maps the gated ``z`` back to
    4C subband channels.
    """

    reduce_w: Tensor
    reduce_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    expand_w: Tensor
    expand_b: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.reduce_w, self.reduce_b, self.gate_w, self.gate_b, self.expand_w, self.expand_b]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, hidden: int | None = None, dtype=np.float64, expand_scale=0.1):
        hidden = hidden or channels
        c4 = 4 * channels

        def u(n, m, s=1.0):
            bound = s * math.sqrt(3.0 / m)
            return Tensor(rng.uniform(-bound, bound, size=(n, m)).astype(dtype), requires_grad=True)

        def z(n):
            return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

        return cls(u(hidden, c4), z(hidden), u(hidden, hidden), z(hidden), u(c4, hidden, expand_scale), z(c4))

    @classmethod
    def zeros(cls, channels: int, hidden: int | None = None, dtype=np.float64):
        hidden = hidden or channels
        c4 = 4 * channels
        t = lambda *s: Tensor(np.zeros(s, dtype=dtype), requires_grad=True)  # noqa: E731
        return cls(t(hidden, c4), t(hidden), t(hidden, hidden), t(hidden), t(c4, hidden), t(c4))


def wavelet_attention(x: Tensor, p: WAParams) -> Tensor:
    """Channel attention over the Haar subbands of ``x``, added back residually.

    Subbands are concatenated in (ll, lh, hl, hh) order along channels.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"wavelet_attention expects [C,H,W], got {x.shape}")
    C, H, W = x.shape
    coeffs = haar_stack(x)  # [4, C, H/2, W/2]
    cat = coeffs.reshape(4 * C, H // 2, W // 2)
    z = conv1x1(cat, p.reduce_w, p.reduce_b)
    pooled = z.mean(axis=(1, 2), keepdims=True)
    s = conv1x1(pooled, p.gate_w, p.gate_b).sigmoid()
    z_o = conv1x1(z * s, p.expand_w, p.expand_b)
    return haar_unstack(z_o.reshape(4, C, H // 2, W // 2) + coeffs)


def _detail_bands(img: np.ndarray) -> np.ndarray:
    return _analysis(np.asarray(img, dtype=np.float64))[1:]


def hf_psnr(pred, ref, peak: float = 1.0) -> float:
    """PSNR restricted to the lh, hl and hh Haar subbands."""
    a = pred.pixels if hasattr(pred, "pixels") else pred
    b = ref.pixels if hasattr(ref, "pixels") else ref
    a = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hf_psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((_detail_bands(a) - _detail_bands(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))
