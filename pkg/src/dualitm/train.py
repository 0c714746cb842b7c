"""Optimiser, learning-rate schedule, training loop, checkpoints and inference."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .color import ColorSpace, Frame
from .degradation import CLIP_LEN, MID, ClipPair
from .model import DIDNet, ModelConfig, loss_dual
from .tensor import ContractError, NumericError, Tape, Tensor, load_dten, no_grad, save_dten


class TrainingError(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""


# -- optimiser -------------------------------------------------------------------


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr:
                p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def lr_at(step: int, base: float = 5e-4, hold: int = 1000, every: int = 500) -> float:
    """Constant for ``hold`` steps, then halved every ``every`` steps.

    ``step`` counts from 0; steps 0..hold-1 use ``base``.
    """
    halvings = (step - hold) // every + 1 if step >= hold else 0
    return base * 0.5**halvings


# -- data ------------------------------------------------------------------------


@dataclass
class Sample:
    """One training example: LQ clip ``[7,3,H,W]`` and the two middle-frame targets."""

    clip: np.ndarray
    hq_sdr: np.ndarray
    hq_hdr: np.ndarray

    @classmethod
    def from_pair(cls, pair: ClipPair) -> "Sample":
        return cls(pair.lq_array(), pair.hq_sdr_mid.pixels, pair.hq_hdr_mid.pixels)

    def flipped(self, vertical: bool, horizontal: bool) -> "Sample":
        def f(a):
            if vertical:
                a = a[..., ::-1, :]
            if horizontal:
                a = a[..., ::-1]
            return a

        return Sample(f(self.clip), f(self.hq_sdr), f(self.hq_hdr))


# -- training --------------------------------------------------------------------


@dataclass
class TrainSettings:
    steps: int = 3000
    lr: float = 5e-4
    lr_hold: int = 1000
    lr_every: int = 500
    main_weight: float = 0.8
    aux_weight: float = 0.2
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def append(self, step: int, loss: float, lr: float):
        self.steps.append(step)
        self.losses.append(loss)
        self.lrs.append(lr)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "lr"])
            for s, l, r in zip(self.steps, self.losses, self.lrs):
                w.writerow([s, repr(float(l)), repr(float(r))])


def train(
    model: DIDNet,
    samples: Sequence[Sample | ClipPair],
    settings: TrainSettings | None = None,
    checkpoint_dir=None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainLog:
    """Minimise the dual L1 loss with Adam, one clip per step."""
    s = settings or TrainSettings()
    data = [x if isinstance(x, Sample) else Sample.from_pair(x) for x in samples]
    if not data:
        raise ContractError("training needs at least one clip")
    rng = np.random.default_rng(s.seed)
    opt = Adam(model.parameters(), lr=s.lr)
    log = TrainLog()
    dt = model.dtype
    t0 = time.perf_counter()
    for step in range(s.steps):
        sample = data[rng.integers(len(data))]
        if s.augment:
            flip_v, flip_h = rng.random(2) < 0.5
            sample = sample.flipped(flip_v, flip_h)
        lr = lr_at(step, s.lr, s.lr_hold, s.lr_every)
        tape = Tape()
        try:
            with tape.activate():
                hdr, sdr = model(np.ascontiguousarray(sample.clip, dtype=dt))
                loss = loss_dual(hdr, sample.hq_hdr, sdr, sample.hq_sdr, s.main_weight, s.aux_weight)
                tape.backward(loss)
        except NumericError as exc:
            raise TrainingError(f"non-finite value at step {step} (lr={lr:g}): {exc}") from exc
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingError(f"loss became {value} at step {step} (lr={lr:g})")
        opt.step(lr)
        opt.zero_grad()
        log.append(step, value, lr)
        if on_step is not None:
            on_step(step, value)
        if checkpoint_dir is not None and s.checkpoint_every and (step + 1) % s.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_dir, log)
    log.seconds = time.perf_counter() - t0
    if checkpoint_dir is not None:
        save_checkpoint(model, checkpoint_dir, log)
    return log


# -- checkpoints -----------------------------------------------------------------


def _cfg_lines(cfg: ModelConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(cfg).items())


def _parse_cfg(text: str) -> ModelConfig:
    types = {f.name: f.type for f in fields(ModelConfig)}
    kw = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ContractError(f"unknown model config key {key!r}")
        t = str(types[key])
        if "bool" in t:
            kw[key] = val.strip() == "True"
        elif "int" in t:
            kw[key] = int(val)
        else:
            kw[key] = val.strip()
    return ModelConfig(**kw)


def save_checkpoint(model: DIDNet, directory, log: TrainLog | None = None) -> Path:
    """Write one DTEN file per parameter plus ``manifest.txt`` and ``model.cfg``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, p in model.params.items():
        fname = name + ".dten"
        save_dten(d / fname, p.data)
        lines.append(f"{name} {fname}\n")
    (d / "manifest.txt").write_text("".join(lines))
    (d / "model.cfg").write_text(_cfg_lines(model.cfg))
    if log is not None:
        log.to_csv(d / "trainlog.csv")
    return d


def load_checkpoint(directory) -> DIDNet:
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise ContractError(f"{d} has no manifest.txt")
    cfg = _parse_cfg((d / "model.cfg").read_text()) if (d / "model.cfg").exists() else ModelConfig()
    model = DIDNet(cfg)
    state = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, fname = line.split()
        state[name] = load_dten(d / fname)
    model.load_state_dict(state)
    return model


# -- inference -------------------------------------------------------------------


def predict(model: DIDNet, clip, prior=None) -> tuple[Frame, Frame]:
    """Run the network on one 7-frame clip; outputs are clipped to [0, 1]."""
    with no_grad():
        hdr, sdr = model(clip, prior)
    return (
        Frame(np.clip(hdr.data, 0.0, 1.0), ColorSpace.HDR_BT2020_PQ, None),
        Frame(np.clip(sdr.data, 0.0, 1.0), ColorSpace.SDR_BT709, None),
    )


def window_indices(t: int, n_frames: int) -> list[int]:
    """The 7 frame indices centred on ``t`` with edge replication."""
    return [min(max(t + d, 0), n_frames - 1) for d in range(-MID, CLIP_LEN - MID)]


def convert_sequence(model: DIDNet, frames: Sequence[Frame]) -> list[Frame]:
    """SDR sequence of at least 7 frames to one HDR frame per input frame."""
    if len(frames) < CLIP_LEN:
        raise ContractError(f"conversion needs at least {CLIP_LEN} frames, got {len(frames)}")
    stack = np.stack([f.pixels for f in frames]).astype(model.dtype)
    return [predict(model, stack[window_indices(t, len(frames))])[0] for t in range(len(frames))]
