"""Randomised property suites run by ``dualitm prove`` and the acceptance tests.

Every check returns a :class:`Proof` holding the measured quantity, the bound
it is held to and the wall-clock time, so callers decide how to report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .color import (
    ColorSpace,
    Frame,
    bt709_eotf,
    bt709_oetf,
    gamut_convert,
    linear2020_to_itp,
    pq_eotf,
    pq_oetf,
)
from .degradation import QP_LABELS, degrade_sdr, procedural_hdr_clip, reference_tonemap
from .metrics import delta_e_itp, ms_ssim, psnr, ssim
from .model import DIDNet, ModelConfig, loss_dual
from .modulation import (
    COST_TABLE_ROWS,
    ModulationVectors,
    dmc,
    dmc_unfolded,
    fold_modulation,
    gfm,
    modulation_cost,
)
from .nn import ConvKernel, avg_pool2, conv1x1, conv2d, deform_conv2d, instance_norm, upsample_nearest2
from .tensor import Tensor, grad_check, l1_loss, no_grad
from .wavelet import PSNR_CAP, WAParams, dwt2_haar, idwt2_haar, wavelet_attention


@dataclass
class Proof:
    name: str
    value: float
    bound: float
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{mark}] {self.name}: {self.value:.3e} vs bound {self.bound:.1e} in {self.seconds:.2f}s{extra}"


def _timed(name: str, bound: float, fn: Callable[[], tuple[float, str]], le: bool = True) -> Proof:
    t0 = time.perf_counter()
    value, detail = fn()
    dt = time.perf_counter() - t0
    ok = value <= bound if le else value > bound
    return Proof(name, float(value), bound, bool(ok), dt, detail)


def _vec(rng, n, allow_zero=False):
    v = rng.normal(0.0, 1.5, size=n)
    if allow_zero:
        v[rng.random(n) < 0.2] = 0.0
    return Tensor(v)


# -- modulation ------------------------------------------------------------------


def modulation_equivalence(trials: int = 1000, seed: int = 0) -> Proof:
    """Feature-side ``alpha*(Wx+b)+beta`` against the folded 1x1 convolution."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                n, m, h, w = rng.integers(1, 9, size=4)
                W = Tensor(rng.normal(size=(n, m)))
                b = Tensor(rng.normal(size=n))
                x = Tensor(rng.normal(size=(m, h, w)))
                mv = ModulationVectors(_vec(rng, n), _vec(rng, n))
                ref = gfm(x, (W, b), mv).data
                fk = fold_modulation((W, b), mv)
                got = conv1x1(x, fk.weight, fk.bias).data
                worst = max(worst, float(np.abs(ref - got).max()))
        return worst, f"{trials} trials"

    return _timed("modulation equivalence", 1e-10, run)


def dmc_fold(trials: int = 1000, seed: int = 1) -> Proof:
    """Folded dual modulation against scale-conv-scale-shift, zeros and negatives included."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                n, m, h, w = rng.integers(1, 9, size=4)
                k = rng.choice([1, 3])
                kern = ConvKernel(Tensor(rng.normal(size=(n, m, k, k))), Tensor(rng.normal(size=n)))
                x = Tensor(rng.normal(size=(m, h, w)))
                mv = ModulationVectors(_vec(rng, n, True), _vec(rng, n, True), _vec(rng, m, True))
                worst = max(worst, float(np.abs(dmc(x, kern, mv).data - dmc_unfolded(x, kern, mv).data).max()))
        return worst, f"{trials} trials"

    return _timed("dual modulation fold", 1e-10, run)


EXPECTED_COSTS = ((44_236_800, 4_224), (265_420_800, 4_224), (1_061_683_200, 4_224))


def cost_table_exact() -> Proof:
    def run():
        got = tuple(modulation_cost(*row) for row in COST_TABLE_ROWS)
        mismatches = sum(g != e for g, e in zip(got, EXPECTED_COSTS))
        ratio = got[1][0] / got[1][1]
        bad = mismatches + (0 if ratio > 6e4 else 1)
        return float(bad), f"1080p ratio {ratio:,.0f}"

    return _timed("modulation cost table", 0.0, run)


# -- wavelet ---------------------------------------------------------------------


def wavelet_reconstruction(trials: int = 100, seed: int = 2) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                c = int(rng.integers(1, 5))
                h, w = 2 * rng.integers(1, 17, size=2)
                x = Tensor(rng.normal(size=(c, h, w)))
                co = dwt2_haar(x)
                rec = idwt2_haar(co).data
                energy = sum(float((b.data**2).sum()) for b in co)
                e0 = float((x.data**2).sum())
                worst = max(worst, float(np.abs(rec - x.data).max()), abs(energy - e0) / max(e0, 1.0))
        return worst, "reconstruction and Parseval"

    return _timed("Haar perfect reconstruction", 1e-12, run)


def wavelet_attention_identity(trials: int = 20, seed: int = 3) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                c = int(rng.integers(1, 9))
                h, w = 2 * rng.integers(1, 9, size=2)
                x = Tensor(rng.normal(size=(c, h, w)))
                p = WAParams.init(rng, c, dtype=np.float64)
                p.expand_w.data[...] = 0.0
                p.expand_b.data[...] = 0.0
                worst = max(worst, float(np.abs(wavelet_attention(x, p).data - x.data).max()))
        return worst, "zeroed branch"

    return _timed("wavelet attention identity", 1e-12, run)


# -- deformable convolution --------------------------------------------------------


def deform_zero_offsets(trials: int = 100, seed: int = 4) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                n, c, o = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
                h, w = rng.integers(3, 12, size=2)
                x = Tensor(rng.normal(size=(n, c, h, w)))
                k = ConvKernel.init(rng, int(o), int(c), 3, np.float64, bias=True)
                k.bias.data[...] = rng.normal(size=o)
                off = Tensor(np.zeros((n, 18, h, w)))
                worst = max(worst, float(np.abs(deform_conv2d(x, k, off).data - conv2d(x, k).data).max()))
        return worst, f"{trials} trials"

    return _timed("deformable conv with zero offsets", 1e-12, run)


def deform_shift_compensation(trials: int = 50, seed: int = 5) -> Proof:
    """Sampling a translated input at offsets equal to the translation undoes it."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for _ in range(trials):
                c, o = rng.integers(1, 5, size=2)
                h, w = rng.integers(10, 20, size=2)
                dy, dx = rng.integers(-3, 4, size=2)
                x = rng.normal(size=(c, h, w))
                shifted = np.roll(x, (dy, dx), axis=(1, 2))  # shifted[p] = x[p - d]
                k = ConvKernel.init(rng, int(o), int(c), 3, np.float64)
                off = np.zeros((18, h, w))
                off[0::2] = dy
                off[1::2] = dx
                got = deform_conv2d(Tensor(shifted), k, Tensor(off)).data
                ref = conv2d(Tensor(x), k).data
                m = 1 + max(abs(int(dy)), abs(int(dx)))
                worst = max(worst, float(np.abs(got - ref)[:, m:-m, m:-m].max()))
        return worst, "interior pixels"

    return _timed("deformable conv shift compensation", 1e-12, run)


# -- gradients -------------------------------------------------------------------


def _op_cases(rng) -> dict[str, tuple[Callable, list[Tensor]]]:
    def t(*shape, lo=None):
        a = rng.normal(size=shape)
        if lo is not None:
            a = np.abs(a) + lo
        return Tensor(a)

    k3 = ConvKernel(t(3, 2, 3, 3), t(3))
    w1 = t(3, 2)
    off = Tensor(rng.integers(-2, 3, size=(18, 6, 6)) + rng.uniform(0.1, 0.9, size=(18, 6, 6)))
    wa = WAParams.init(rng, 2, dtype=np.float64, expand_scale=1.0)
    mv = ModulationVectors(t(3), t(3), t(2))
    proj = t(2, 4, 4)
    return {
        "add/mul/sub/div": (lambda a, b: ((a + b) * (a - b) / (b * b + 1.0)).sum(), [t(3, 4), t(3, 4)]),
        "broadcast": (lambda a, b: (a * b).sum(), [t(3, 4), t(4)]),
        "exp/log/sqrt": (lambda a: (a.exp() + a.log() + a.sqrt()).sum(), [t(5, lo=0.5)]),
        "pow": (lambda a: (a**3).sum(), [t(6)]),
        "sigmoid": (lambda a: a.sigmoid().sum(), [t(6)]),
        "leaky_relu": (lambda a: (a.leaky_relu() ** 2).sum(), [Tensor(np.array([-1.3, -0.2, 0.4, 2.0]))]),
        "matmul": (lambda a, b: (a @ b).sum(), [t(3, 4), t(4, 2)]),
        "mean/reshape/transpose": (lambda a: (a.reshape(4, 3).transpose(1, 0) ** 2).mean(), [t(2, 6)]),
        "l1": (lambda a: l1_loss(a, np.zeros((2, 3))), [Tensor(np.array([[1.0, -2.0, 0.5], [-0.3, 0.7, 2.0]]))]),
        "conv2d": (lambda x, w: (conv2d(x, ConvKernel(w, k3.bias)) ** 2).sum(), [t(2, 6, 6), k3.weight]),
        "conv2d stride 2": (lambda x: (conv2d(x, k3, stride=2) ** 2).sum(), [t(2, 6, 6)]),
        "conv1x1": (lambda x, w: (conv1x1(x, w) ** 2).sum(), [t(2, 4, 4), w1]),
        "deform_conv2d": (lambda x, o: (deform_conv2d(x, k3, o) ** 2).sum(), [t(2, 6, 6), off]),
        "instance_norm": (lambda x: (instance_norm(x) * proj).sum(), [t(2, 4, 4)]),
        "avg_pool/upsample": (lambda x: (upsample_nearest2(avg_pool2(x)) ** 2).sum(), [t(2, 4, 4)]),
        "haar": (lambda x: (idwt2_haar(dwt2_haar(x)) ** 2).sum() + dwt2_haar(x).ll.sum(), [t(2, 4, 4)]),
        "wavelet_attention": (lambda x: (wavelet_attention(x, wa) ** 2).sum(), [t(2, 4, 4)]),
        "dmc": (lambda x: (dmc(x, k3, mv) ** 2).sum(), [t(2, 5, 5)]),
    }


def op_gradients(seed: int = 6) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        cases = _op_cases(rng)
        worst, name = 0.0, ""
        for key, (fn, xs) in cases.items():
            err = grad_check(fn, xs, eps=1e-6)
            if err > worst:
                worst, name = err, key
        return worst, f"{len(cases)} ops, worst {name}"

    return _timed("operator gradient checks", 1e-4, run)


def tiny_network(seed: int = 7) -> tuple[DIDNet, np.ndarray, np.ndarray, np.ndarray]:
    """A 16x16 network with non-integer offsets and a non-neutral prior head."""
    cfg = ModelConfig(channels=4, res_blocks=1, dmc_layers=2, color_blocks=4, cond_channels=4, seed=seed)
    net = DIDNet(cfg)
    rng = np.random.default_rng(seed)
    p = net.params
    p["tsaf.offset.out.weight"].data[...] = rng.normal(0.0, 0.01, size=p["tsaf.offset.out.weight"].shape)
    p["tsaf.offset.out.bias"].data[...] = rng.uniform(0.2, 0.8, size=p["tsaf.offset.out.bias"].shape)
    p["cond.head.weight"].data[...] = rng.normal(0.0, 0.3, size=p["cond.head.weight"].shape)
    p["ffe.expand_w"].data[...] = rng.normal(0.0, 0.3, size=p["ffe.expand_w"].shape)
    # heads start at zero, which would hide every upstream gradient
    for head in ("head.sdr.weight", "head.hdr.weight"):
        p[head].data[...] = rng.normal(0.0, 0.3, size=p[head].shape)
    clip = rng.uniform(0.0, 1.0, size=(7, 3, 16, 16))
    return net, clip, rng.uniform(0, 1, (3, 16, 16)), rng.uniform(0, 1, (3, 16, 16))


def end_to_end_gradient(n_params: int = 20, seed: int = 8) -> Proof:
    """Dual loss of the tiny network against central differences on random weights."""

    def run():
        net, clip, hdr_ref, sdr_ref = tiny_network()
        rng = np.random.default_rng(seed)
        names = sorted(net.params)
        chosen = sorted(rng.choice(len(names), size=n_params, replace=False))
        tensors = [net.params[names[i]] for i in chosen]
        picks = [[int(rng.integers(t.size))] for t in tensors]

        def loss_fn(*_):
            h, s = net(clip)
            return loss_dual(h, hdr_ref, s, sdr_ref)

        return grad_check(loss_fn, tensors, eps=1e-6, indices=picks), f"{n_params} parameters"

    return _timed("end-to-end gradient check", 1e-3, run)


# -- colour ----------------------------------------------------------------------


def color_round_trips(seed: int = 9) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        nits = np.concatenate([np.geomspace(1e-3, 1e4, 500), rng.uniform(0, 1e4, 500)])
        pq = float(np.max(np.abs(pq_eotf(pq_oetf(nits)) - nits) / np.maximum(nits, 1e-3)))
        lin = np.concatenate([np.linspace(0, 1, 501), rng.uniform(0, 1, 500)])
        bt = float(np.max(np.abs(bt709_eotf(bt709_oetf(lin)) - lin) / np.maximum(lin, 1e-6)))
        rgb = rng.uniform(0, 1, size=(3, 32, 32))
        gam = float(np.abs(gamut_convert(gamut_convert(rgb, "709->2020"), "2020->709") - rgb).max())
        grey = np.broadcast_to(np.geomspace(0.01, 5000, 64), (3, 64))
        tp = float(np.abs(linear2020_to_itp(grey)[1:]).max())
        worst = max(pq / 1e-6, bt / 1e-6, gam / 1e-9, tp / 1e-9)
        return worst, f"pq {pq:.1e}, bt709 {bt:.1e}, gamut {gam:.1e}, grey T/P {tp:.1e}"

    return _timed("colour round trips (normalised)", 1.0, run)


# -- degradation -----------------------------------------------------------------


def degradation_monotone(n_clips: int = 6, seed: int = 10, size: int = 64) -> Proof:
    def run():
        hq = [reference_tonemap(procedural_hdr_clip(seed + i, size, frames=1)[0]) for i in range(n_clips)]
        mses, psnrs = [], []
        for qp in QP_LABELS:
            lq = [degrade_sdr(f, qp) for f in hq]
            mses.append(float(np.mean([np.mean((a.pixels - b.pixels) ** 2) for a, b in zip(lq, hq)])))
            psnrs.append(float(np.mean([psnr(a, b) for a, b in zip(lq, hq)])))
        ok = all(a < b for a, b in zip(mses, mses[1:])) and all(a > b for a, b in zip(psnrs, psnrs[1:]))
        return (0.0 if ok else 1.0), "PSNR " + " > ".join(f"{p:.2f}" for p in psnrs)

    return _timed("degradation monotone in qp", 0.0, run)


# -- metrics ---------------------------------------------------------------------


def metric_sanity(seed: int = 11) -> Proof:
    def run():
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, size=(3, 192, 192))
        b = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 1)
        fa = Frame(a, ColorSpace.HDR_BT2020_PQ)
        fb = Frame(b, ColorSpace.HDR_BT2020_PQ)
        failures = []
        if psnr(a, a) != PSNR_CAP:
            failures.append("psnr identity")
        c = np.full((3, 16, 16), 0.5)
        if abs(psnr(c, c + 0.1) - 20.0) > 1e-9:
            failures.append("psnr closed form")
        if psnr(a, b) != psnr(b, a):
            failures.append("psnr symmetry")
        if ssim(a, a) != 1.0 or ms_ssim(a, a) != 1.0:
            failures.append("ssim identity")
        if abs(ssim(a, b) - ssim(b, a)) > 1e-12 or abs(ms_ssim(a, b) - ms_ssim(b, a)) > 1e-12:
            failures.append("ssim symmetry")
        if not (0.0 < ssim(a, b) < 1.0 and 0.0 < ms_ssim(a, b) < 1.0):
            failures.append("ssim range")
        if delta_e_itp(fa, fa) != 0.0:
            failures.append("delta-E identity")
        if abs(delta_e_itp(fa, fb) - delta_e_itp(fb, fa)) > 1e-12:
            failures.append("delta-E symmetry")
        return float(len(failures)), ", ".join(failures) or "all cases"

    return _timed("metric sanity", 0.0, run)


SUITES: dict[str, Callable[[], Proof]] = {
    "modulation": modulation_equivalence,
    "dmc": dmc_fold,
    "cost": cost_table_exact,
    "wavelet": wavelet_reconstruction,
    "wa-identity": wavelet_attention_identity,
    "deform-zero": deform_zero_offsets,
    "deform-shift": deform_shift_compensation,
    "grad-ops": op_gradients,
    "grad-e2e": end_to_end_gradient,
    "color": color_round_trips,
    "degradation": degradation_monotone,
    "metrics": metric_sanity,
}


def run_all(names=None) -> list[Proof]:
    return [SUITES[n]() for n in (names or SUITES)]
