"""The dual inverse degradation network.

Dataflow for a 7-frame LQ SDR clip::

    fused  = tsaf(clip)                 # aligned multi-frame features
    sdr    = lq_mid + aux_head(fused)   # restored middle SDR frame
    feat   = ffe(fused)                 # wavelet attention
    prior  = condition_3dcn(clip)       # (alpha, beta, gamma) per DMC layer
    hdr    = itm(lq_mid) + hdr_head(dmitm(feat, prior))

With ``global_skip`` off the two heads predict the frames directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .color import ColorSpace, Frame, inverse_tonemap
from .degradation import CLIP_LEN, MID
from .modulation import ModulationVectors, dmc, gfm
from .nn import (
    ConvKernel,
    ResBlockParams,
    avg_pool2,
    conv1x1,
    conv2d,
    deform_conv2d,
    instance_norm,
    leaky_relu,
    residual_block,
    upsample_nearest2,
)
from .tensor import ContractError, ShapeError, Tensor, as_tensor, concat, l1_loss
from .wavelet import WAParams, wavelet_attention

MODULATION_MODES = ("dmc", "gfm", "none")
NORM_MIN_SIZE = 4  # color blocks skip instance norm below 4x4 outputs


@dataclass
class ModelConfig:
    channels: int = 16
    res_blocks: int = 2
    dmc_layers: int = 3
    color_blocks: int = 6
    cond_channels: int = 16
    use_wa: bool = True
    use_3dcn: bool = True
    use_align: bool = True
    global_skip: bool = True
    modulation: str = "dmc"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.modulation not in MODULATION_MODES:
            raise ContractError(f"modulation must be one of {MODULATION_MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ContractError("dtype must be float32 or float64")

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        return cls(**kw)


@dataclass
class PriorVec:
    layers: list[ModulationVectors]

    def __len__(self):
        return len(self.layers)


class DIDNet:
    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg = cfg or ModelConfig()
        self.dtype = np.dtype(cfg.dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(cfg.seed)
        C, dt = cfg.channels, self.dtype

        def kernel(name, n, m, k=3, scale=1.0, zero=False):
            ck = ConvKernel.init(rng, n, m, k, dt, scale)
            if zero:
                ck.weight.data[...] = 0.0
            self._register(f"{name}.weight", ck.weight)
            self._register(f"{name}.bias", ck.bias)
            return ck

        # temporal-spatial alignment fusion
        self.feat = kernel("tsaf.feat", C, 3)
        self.off_enc1 = kernel("tsaf.offset.enc1", C, 3 * CLIP_LEN)
        self.off_enc2 = kernel("tsaf.offset.enc2", C, C)
        self.off_enc3 = kernel("tsaf.offset.enc3", C, C)
        self.off_dec2 = kernel("tsaf.offset.dec2", C, C)
        self.off_dec1 = kernel("tsaf.offset.dec1", C, C)
        # zero init: offsets start at zero, so alignment starts as plain conv
        self.off_out = kernel("tsaf.offset.out", 2 * 9 * (CLIP_LEN - 1), C, zero=True)
        self.align = kernel("tsaf.align", C, C)
        self.fuse = kernel("tsaf.fuse", C, C * CLIP_LEN, k=1)
        self.res = []
        for i in range(cfg.res_blocks):
            rb = ResBlockParams.init(rng, C, dt)
            for j, ck in enumerate((rb.conv1, rb.conv2)):
                self._register(f"tsaf.res{i}.conv{j + 1}.weight", ck.weight)
                self._register(f"tsaf.res{i}.conv{j + 1}.bias", ck.bias)
            self.res.append(rb)

        # zero heads: with the global skip, training starts from the analytic estimates
        self.aux = kernel("head.sdr", 3, C, zero=cfg.global_skip)

        self.wa = WAParams.init(rng, C, dtype=dt)
        for name, t in zip(("reduce_w", "reduce_b", "gate_w", "gate_b", "expand_w", "expand_b"), self.wa.parameters()):
            self._register(f"ffe.{name}", t)

        # 3D condition network
        Cc = cfg.cond_channels
        self.color = []
        cin = 3 * CLIP_LEN
        for i in range(cfg.color_blocks):
            w = kernel(f"cond.block{i}.conv", Cc, cin, k=1)
            g = Tensor(np.ones(Cc, dtype=dt), requires_grad=True)
            b = Tensor(np.zeros(Cc, dtype=dt), requires_grad=True)
            self._register(f"cond.block{i}.norm_w", g)
            self._register(f"cond.block{i}.norm_b", b)
            self.color.append((w, g, b))
            cin = Cc
        per_layer = 3 * C
        self.prior_w = Tensor(np.zeros((cfg.dmc_layers * per_layer, Cc), dtype=dt), requires_grad=True)
        neutral = np.concatenate([np.ones(C), np.zeros(C), np.ones(C)])
        self.prior_b = Tensor(np.tile(neutral, cfg.dmc_layers).astype(dt), requires_grad=True)
        self._register("cond.head.weight", self.prior_w)
        self._register("cond.head.bias", self.prior_b)

        self.dmc = [kernel(f"dmitm.layer{i}", C, C, k=1) for i in range(cfg.dmc_layers)]
        self.hdr = kernel("head.hdr", 3, C, zero=cfg.global_skip)

    # -- bookkeeping -----------------------------------------------------------------

    def _register(self, name: str, t: Tensor):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t.name = name
        self.params[name] = t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ContractError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: checkpoint shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    # -- sub-networks -----------------------------------------------------------------

    def _clip_tensor(self, clip) -> Tensor:
        if isinstance(clip, Tensor):
            arr = clip
        elif isinstance(clip, (list, tuple)):
            arr = Tensor(np.stack([getattr(f, "pixels", f) for f in clip]).astype(self.dtype))
        else:
            arr = Tensor(np.asarray(clip, dtype=self.dtype))
        if arr.ndim != 4 or arr.shape[0] != CLIP_LEN or arr.shape[1] != 3:
            raise ContractError(f"a clip is {CLIP_LEN} RGB frames, got shape {arr.shape}")
        if not self.cfg.use_align:
            # per-frame variant: every input slot sees the middle frame
            arr = Tensor(np.repeat(arr.data[MID : MID + 1], CLIP_LEN, axis=0))
        return arr

    def offsets(self, clip: Tensor) -> Tensor:
        """Offset fields ``[6, 18, H, W]`` for the non-middle frames."""
        T, _, H, W = clip.shape
        if H % 4 or W % 4:
            raise ShapeError(f"frame size {H}x{W} must be a multiple of 4")
        x = clip.reshape(1, 3 * T, H, W)
        e1 = leaky_relu(conv2d(x, self.off_enc1))
        e2 = leaky_relu(conv2d(e1, self.off_enc2, stride=2))
        e3 = leaky_relu(conv2d(e2, self.off_enc3, stride=2))
        d2 = leaky_relu(conv2d(upsample_nearest2(e3) + e2, self.off_dec2))
        d1 = leaky_relu(conv2d(upsample_nearest2(d2) + e1, self.off_dec1))
        return conv2d(d1, self.off_out).reshape(T - 1, 18, H, W)

    def tsaf(self, clip) -> Tensor:
        clip = self._clip_tensor(clip)
        T, _, H, W = clip.shape
        feats = leaky_relu(conv2d(clip, self.feat))  # [7, C, H, W]
        centre = conv2d(feats[MID : MID + 1], self.align)
        if self.cfg.use_align:
            others = concat([feats[:MID], feats[MID + 1 :]], axis=0)
            warped = deform_conv2d(others, self.align, self.offsets(clip))
            aligned = concat([warped[:MID], centre, warped[MID:]], axis=0)
        else:
            aligned = concat([centre] * T, axis=0)
        x = leaky_relu(conv2d(aligned.reshape(1, T * self.cfg.channels, H, W), self.fuse))
        x = x.reshape(self.cfg.channels, H, W)
        for rb in self.res:
            x = residual_block(x, rb)
        return x

    def aux_head(self, fused: Tensor) -> Tensor:
        return conv2d(fused, self.aux)

    def ffe(self, fused: Tensor) -> Tensor:
        return wavelet_attention(fused, self.wa) if self.cfg.use_wa else fused

    def color_block(self, x: Tensor, i: int) -> Tensor:
        w, g, b = self.color[i]
        y = leaky_relu(avg_pool2(conv2d(x, w)))
        # A normalised map has spatial mean equal to its shift, so normalising
        # the last tiny maps would make the pooled prior input-independent.
        if min(y.shape[-2:]) >= NORM_MIN_SIZE:
            y = instance_norm(y, weight=g, bias=b)
        return y

    def neutral_prior(self) -> PriorVec:
        C = self.cfg.channels
        return PriorVec([ModulationVectors.neutral(C, C, self.dtype) for _ in range(self.cfg.dmc_layers)])

    def condition_3dcn(self, clip) -> PriorVec:
        clip = self._clip_tensor(clip)
        if not self.cfg.use_3dcn:
            return self.neutral_prior()
        T, _, H, W = clip.shape
        unit = 2 ** self.cfg.color_blocks
        Hc, Wc = H - H % unit, W - W % unit
        if Hc < unit or Wc < unit:
            raise ShapeError(f"condition network needs frames of at least {unit}x{unit}")
        oy, ox = (H - Hc) // 2, (W - Wc) // 2
        x = clip.reshape(3 * T, H, W)[:, oy : oy + Hc, ox : ox + Wc]
        for i in range(self.cfg.color_blocks):
            x = self.color_block(x, i)
        v = x.mean(axis=(1, 2))  # [Cc]
        raw = self.prior_w @ v + self.prior_b
        C = self.cfg.channels
        layers = []
        for i in range(self.cfg.dmc_layers):
            o = 3 * C * i
            layers.append(ModulationVectors(raw[o : o + C], raw[o + C : o + 2 * C], raw[o + 2 * C : o + 3 * C]))
        return PriorVec(layers)

    def dmitm(self, x: Tensor, prior: PriorVec, activations: bool = True) -> Tensor:
        if len(prior) != self.cfg.dmc_layers:
            raise ContractError(f"prior has {len(prior)} layers, network has {self.cfg.dmc_layers}")
        mode = self.cfg.modulation
        for i, (k, mv) in enumerate(zip(self.dmc, prior.layers)):
            if mode == "dmc":
                x = dmc(x, k, mv)
            elif mode == "gfm":
                x = gfm(x, k, mv)
            else:
                x = conv1x1(x, k.weight.reshape(k.out_channels, k.in_channels), k.bias)
            if activations and i < len(self.dmc) - 1:
                x = leaky_relu(x)
        return x

    def forward(self, clip, prior: PriorVec | None = None) -> tuple[Tensor, Tensor]:
        """Return ``(hdr, sdr)`` predictions for the middle frame, each ``[3, H, W]``."""
        clip = self._clip_tensor(clip)
        fused = self.tsaf(clip)
        sdr = self.aux_head(fused)
        feat = self.ffe(fused)
        prior = prior if prior is not None else self.condition_3dcn(clip)
        hdr = conv2d(self.dmitm(feat, prior), self.hdr)
        if self.cfg.global_skip:
            sdr_base, hdr_base = self.skip_bases(clip)
            sdr, hdr = sdr + sdr_base, hdr + hdr_base
        return hdr, sdr

    def skip_bases(self, clip: Tensor) -> tuple[Tensor, Tensor]:
        """Constant residual bases: the LQ middle frame and its analytic inverse tone map."""
        mid = np.clip(clip.data[MID], 0.0, 1.0)
        hdr = inverse_tonemap(Frame(mid, ColorSpace.SDR_BT709)).pixels
        return Tensor(mid.astype(self.dtype)), Tensor(hdr.astype(self.dtype))

    __call__ = forward

    def describe(self) -> str:
        return f"DIDNet({', '.join(f'{k}={v}' for k, v in asdict(self.cfg).items())}; params={self.num_parameters()})"


def loss_dual(hdr_pred: Tensor, hdr_ref, sdr_pred: Tensor, sdr_ref, main_weight: float = 0.8, aux_weight: float = 0.2) -> Tensor:
    """Weighted sum of the main (HDR) and auxiliary (SDR) L1 losses."""
    hdr_ref = as_tensor(getattr(hdr_ref, "pixels", hdr_ref), hdr_pred.dtype)
    sdr_ref = as_tensor(getattr(sdr_ref, "pixels", sdr_ref), sdr_pred.dtype)
    loss = l1_loss(hdr_pred, hdr_ref) * main_weight
    if aux_weight:
        loss = loss + l1_loss(sdr_pred, sdr_ref) * aux_weight
    return loss


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
