"""Convolutional primitives on :class:`~dualitm.tensor.Tensor`.

Layouts are channel-first: single images are ``[C, H, W]``, batches are
``[N, C, H, W]``.  Kernels are ``[out, in, kh, kw]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .tensor import ContractError, ShapeError, Tensor, as_tensor

LEAKY_SLOPE = 0.1


@dataclass
class ConvKernel:
    weight: Tensor  # [n, m, kh, kw]
    bias: Tensor | None = None  # [n]

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"kernel weight must be 4-D, got {self.weight.shape}")
        kh, kw = self.weight.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("kernel height and width must be odd")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def taps(self) -> int:
        return self.weight.shape[2] * self.weight.shape[3]

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    @classmethod
    def init(cls, rng: np.random.Generator, n: int, m: int, k: int = 3, dtype=np.float64, scale: float = 1.0, bias=True):
        """He-style uniform init scaled by ``scale``."""
        fan_in = m * k * k
        bound = scale * math.sqrt(6.0 / fan_in) / math.sqrt(1 + LEAKY_SLOPE**2)
        w = rng.uniform(-bound, bound, size=(n, m, k, k)).astype(dtype)
        b = Tensor(np.zeros(n, dtype=dtype), requires_grad=True) if bias else None
        return cls(Tensor(w, requires_grad=True), b)


def _batched_outer(g: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``sum_n g[n] @ cols[n].T`` through BLAS."""
    out = g[0] @ cols[0].T
    for n in range(1, g.shape[0]):
        out += g[n] @ cols[n].T
    return out


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got {x.shape}")


def conv2d(x: Tensor, k: ConvKernel, stride: int = 1, padding: str = "same") -> Tensor:
    """Zero-padded 2-D cross-correlation."""
    x4, squeeze = _batched(as_tensor(x))
    w, b = k.weight, k.bias
    N, C, H, W = x4.shape
    O, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"kernel expects {Ci} input channels, got {C}")
    if padding not in ("same", "valid"):
        raise ContractError(f"padding must be 'same' or 'valid', got {padding!r}")

    if kh == 1 and kw == 1 and stride == 1:
        y = _conv1x1_batched(x4, w.reshape(O, C), b)
        return y.reshape(O, H, W) if squeeze else y

    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    xp = np.pad(x4.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x4.data
    Hp, Wp = xp.shape[2:]
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"input {H}x{W} too small for kernel {kh}x{kw}")
    # columns laid out (n, c, di, dj, i, j): the spatial axis stays innermost
    cols = np.empty((N, C, kh, kw, Ho, Wo), dtype=xp.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di, dj] = xp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride]
    cols = cols.reshape(N, C * kh * kw, Ho * Wo)
    w2 = w.data.reshape(O, -1)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data[:, None]
    y = out.reshape(N, O, Ho, Wo)

    def bw(g):
        gf = g.reshape(N, O, Ho * Wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = _batched_outer(gf, cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gf.sum(axis=(0, 2))
        if x4.requires_grad:
            gcols = np.matmul(w2.T, gf).reshape(N, C, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride] += gcols[:, :, di, dj]
            gx = gxp[:, :, ph : ph + H, pw : pw + W]
        return gx, gw, gb

    parents = (x4, w) + ((b,) if b is not None else ())
    res = Tensor._make(y, parents, bw)
    return res.reshape(O, Ho, Wo) if squeeze else res


def _conv1x1_batched(x4: Tensor, w2: Tensor, b: Tensor | None) -> Tensor:
    N, C, H, W = x4.shape
    O = w2.shape[0]
    xf = x4.data.reshape(N, C, H * W)
    out = np.matmul(w2.data, xf)
    if b is not None:
        out += b.data[:, None]
    y = out.reshape(N, O, H, W)

    def bw(g):
        gf = g.reshape(N, O, H * W)
        gx = (np.matmul(w2.data.T, gf)).reshape(x4.shape) if x4.requires_grad else None
        gw = _batched_outer(gf, xf) if w2.requires_grad else None
        gb = gf.sum(axis=(0, 2)) if (b is not None and b.requires_grad) else None
        return gx, gw, gb

    parents = (x4, w2) + ((b,) if b is not None else ())
    return Tensor._make(y, parents, bw)


def conv1x1(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-pixel affine map ``y[:, u, v] = W @ x[:, u, v] + b``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2:
        raise ShapeError(f"W must be [n, m], got {W.shape}")
    x4, squeeze = _batched(x)
    if W.shape[1] != x4.shape[1]:
        raise ShapeError(f"W expects {W.shape[1]} channels, got {x4.shape[1]}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {W.shape[0]} outputs")
    y = _conv1x1_batched(x4, W, b)
    return y.reshape(W.shape[0], *x4.shape[2:]) if squeeze else y


def bilinear_sample(x, py: float, px: float) -> np.ndarray:
    """Bilinearly interpolate ``x[C,H,W]`` at a fractional position.

    Neighbours outside the image contribute zero.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    C, H, W = arr.shape
    y0, x0 = math.floor(py), math.floor(px)
    fy, fx = py - y0, px - x0
    out = np.zeros(C, dtype=arr.dtype)
    for yy, xx, wgt in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x0 + 1, (1 - fy) * fx),
        (y0 + 1, x0, fy * (1 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        if 0 <= yy < H and 0 <= xx < W and wgt != 0.0:
            out += wgt * arr[:, yy, xx]
    return out


@functools.lru_cache(maxsize=16)
def _sampling_grid(N: int, H: int, W: int, kh: int, kw: int, dtype: str):
    K = kh * kw
    itype = np.int32 if 4 * N * K * H * W < 2**31 else np.int64
    ti, tj = np.meshgrid(np.arange(kh) - kh // 2, np.arange(kw) - kw // 2, indexing="ij")
    gy, gx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    base_y = (gy[None] + ti.reshape(K, 1, 1)).astype(dtype)
    base_x = (gx[None] + tj.reshape(K, 1, 1)).astype(dtype)
    frame = np.repeat(np.arange(N, dtype=itype) * (H * W), K * H * W)
    indptr = np.arange(0, 4 * N * K * H * W + 1, 4, dtype=itype)
    return base_y, base_x, frame, indptr


def _sampling_matrices(offsets: np.ndarray, H: int, W: int, kh: int, kw: int):
    """Sparse bilinear sampling operator and its positional derivatives.

    Row ``(n, k, p)`` samples frame ``n`` at ``p + tap_k + offset``.  Returns
    ``(S, Sy, Sx)``: ``S @ X`` gives sampled values, ``Sy @ X`` / ``Sx @ X``
    their derivatives with respect to the vertical / horizontal offset.
    """
    N = offsets.shape[0]
    K = kh * kw
    base_y, base_x, frame, indptr = _sampling_grid(N, H, W, kh, kw, offsets.dtype.str)
    off = offsets.reshape(N, K, 2, H, W)
    py = (base_y + off[:, :, 0]).reshape(-1)
    px = (base_x + off[:, :, 1]).reshape(-1)
    y0f = np.floor(py)
    x0f = np.floor(px)
    fy = py - y0f
    fx = px - x0f
    y0 = y0f.astype(indptr.dtype)
    x0 = x0f.astype(indptr.dtype)
    dt = offsets.dtype
    # per-axis validity folded into the 1-D interpolation weights
    vy0 = ((y0 >= 0) & (y0 < H)).astype(dt)
    vy1 = ((y0 >= -1) & (y0 < H - 1)).astype(dt)
    vx0 = ((x0 >= 0) & (x0 < W)).astype(dt)
    vx1 = ((x0 >= -1) & (x0 < W - 1)).astype(dt)
    wy = ((1 - fy) * vy0, fy * vy1)
    wx = ((1 - fx) * vx0, fx * vx1)
    dy = (-vy0, vy1)
    dx = (-vx0, vx1)
    ry = (np.clip(y0, 0, H - 1) * W, np.clip(y0 + 1, 0, H - 1) * W)
    rx = (np.clip(x0, 0, W - 1), np.clip(x0 + 1, 0, W - 1))
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    idx = np.stack([frame + ry[a] + rx[c] for a, c in corners], axis=1).reshape(-1)
    val = np.stack([wy[a] * wx[c] for a, c in corners], axis=1).reshape(-1)
    vy = np.stack([dy[a] * wx[c] for a, c in corners], axis=1).reshape(-1)
    vx = np.stack([wy[a] * dx[c] for a, c in corners], axis=1).reshape(-1)
    shape = (N * K * H * W, N * H * W)
    S = _csr(val, idx, indptr, shape)
    Sy = _csr(vy, idx, indptr, shape)
    Sx = _csr(vx, idx, indptr, shape)
    return S, Sy, Sx


def _csr(data, indices, indptr, shape):
    m = sparse.csr_matrix(shape, dtype=data.dtype)
    m.data, m.indices, m.indptr = data, indices, indptr
    return m


def deform_conv2d(x: Tensor, k: ConvKernel, offsets: Tensor) -> Tensor:
    """Deformable convolution with one offset field shared by all input channels.

    ``offsets`` is ``[2*kh*kw, H, W]`` (or batched ``[N, 2*kh*kw, H, W]``)
    holding ``(dy, dx)`` per kernel tap in pixels.  Stride 1, output has the
    input's spatial size.
    """
    x4, squeeze = _batched(as_tensor(x))
    off = as_tensor(offsets)
    if off.ndim == 3:
        off = off.reshape(1, *off.shape)
    w, b = k.weight, k.bias
    N, C, H, W = x4.shape
    O, Ci, kh, kw = w.shape
    K = kh * kw
    if Ci != C:
        raise ShapeError(f"kernel expects {Ci} input channels, got {C}")
    if off.shape != (N, 2 * K, H, W):
        raise ShapeError(f"offsets must be {(N, 2 * K, H, W)}, got {off.shape}")
    HW = H * W

    S, Sy, Sx = _sampling_matrices(off.data, H, W, kh, kw)
    X = np.ascontiguousarray(x4.data.transpose(0, 2, 3, 1)).reshape(N * HW, C)
    samp = (S @ X).reshape(N, K, HW, C)
    # per-tap weights [K, O, C]; samples stay channel-last, BLAS takes the transposes
    wk = np.ascontiguousarray(w.data.reshape(O, C, K).transpose(2, 0, 1))
    out = np.empty((N, O, HW), dtype=X.dtype)
    for n in range(N):
        acc = wk[0] @ samp[n, 0].T
        for t in range(1, K):
            acc += wk[t] @ samp[n, t].T
        out[n] = acc
    if b is not None:
        out += b.data[:, None]
    y = out.reshape(N, O, H, W)

    def bw(g):
        gf = g.reshape(N, O, HW)
        gx = gw = gb = goff = None
        need_samp = x4.requires_grad or off.requires_grad
        gwk = np.zeros((K, O, C), dtype=gf.dtype) if w.requires_grad else None
        gsamp = np.empty((N, K, HW, C), dtype=gf.dtype) if need_samp else None
        for n in range(N):
            for t in range(K):
                if gwk is not None:
                    gwk[t] += gf[n] @ samp[n, t]
                if need_samp:
                    np.matmul(gf[n].T, wk[t], out=gsamp[n, t])
        if gwk is not None:
            gw = gwk.transpose(1, 2, 0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gf.sum(axis=(0, 2))
        if need_samp:
            gsamp = gsamp.reshape(N * K * HW, C)
            if x4.requires_grad:
                gX = S.T @ gsamp
                gx = gX.reshape(N, H, W, C).transpose(0, 3, 1, 2)
            if off.requires_grad:
                gdy = np.einsum("ij,ij->i", gsamp, Sy @ X).reshape(N, K, 1, H, W)
                gdx = np.einsum("ij,ij->i", gsamp, Sx @ X).reshape(N, K, 1, H, W)
                goff = np.concatenate([gdy, gdx], axis=2).reshape(N, 2 * K, H, W)
        if b is None:
            return gx, gw, goff
        return gx, gw, gb, goff

    parents = (x4, w, b, off) if b is not None else (x4, w, off)
    res = Tensor._make(y, parents, bw)
    return res.reshape(O, H, W) if squeeze else res


# -- simple layers -------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return as_tensor(x).leaky_relu(slope)


def instance_norm(x: Tensor, eps: float = 1e-5, weight: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Standardise each channel over its spatial extent, then apply the affine."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"instance_norm expects [C,H,W] or [N,C,H,W], got {x.shape}")
    if x.shape[-1] * x.shape[-2] < 2:
        raise ContractError("instance_norm needs at least two spatial elements per channel")
    mu = x.mean(axis=(-2, -1), keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=(-2, -1), keepdims=True)
    y = d / (var + eps).sqrt()
    if weight is not None:
        y = y * weight.reshape(-1, 1, 1)
    if bias is not None:
        y = y + bias.reshape(-1, 1, 1)
    return y


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2 (trailing odd row/column dropped)."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    if H < 2 or W < 2:
        raise ShapeError(f"avg_pool2 needs spatial dims >= 2, got {H}x{W}")
    H2, W2 = H // 2, W // 2
    lead = x.shape[:-2]
    xd = x.data[..., : 2 * H2, : 2 * W2]
    y = xd.reshape(*lead, H2, 2, W2, 2).mean(axis=(-3, -1))

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., : 2 * H2, : 2 * W2] = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        return (gx,)

    return Tensor._make(y, (x,), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def bw(g):
        lead = g.shape[:-2]
        H, W = g.shape[-2:]
        return (g.reshape(*lead, H // 2, 2, W // 2, 2).sum(axis=(-3, -1)),)

    return Tensor._make(y, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    return as_tensor(x).mean(axis=(-2, -1), keepdims=True)


@dataclass
class ResBlockParams:
    conv1: ConvKernel
    conv2: ConvKernel

    def parameters(self) -> list[Tensor]:
        return self.conv1.parameters() + self.conv2.parameters()

    @classmethod
    def init(cls, rng, channels: int, dtype=np.float64):
        return cls(
            ConvKernel.init(rng, channels, channels, 3, dtype),
            ConvKernel.init(rng, channels, channels, 3, dtype, scale=0.1),
        )


def residual_block(x: Tensor, p: ResBlockParams) -> Tensor:
    return x + conv2d(leaky_relu(conv2d(x, p.conv1)), p.conv2)
