"""Desk-scale experiments on the synthetic corpus: training variants, held-out
evaluation, the inverse-tone-map baseline and the temporal-stability probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .color import inverse_tonemap
from .degradation import MID, ClipPair, procedural_hdr_clip, synth_clip_pair, synthetic_corpus
from .metrics import psnr, temporal_std_delta_e
from .model import DIDNet, ModelConfig
from .train import Sample, TrainLog, TrainSettings, convert_sequence, predict, train
from .wavelet import hf_psnr

DESK_QP = 37
DESK_SIZE = 64
DESK_TRAIN = 32
DESK_TEST = 8
DESK_STEPS = 3000
TEMPORAL_GRAIN = 0.004

VARIANTS = {
    "full": ({}, 0.2),
    "no_aux": ({}, 0.0),
    "neutral_prior": ({"use_3dcn": False}, 0.2),
    "no_wa": ({"use_wa": False}, 0.2),
    "per_frame": ({"use_align": False}, 0.2),
}


@dataclass
class DeskData:
    train: list[ClipPair]
    test: list[ClipPair]
    qp: int


def desk_data(seed: int = 0, n_train: int = DESK_TRAIN, n_test: int = DESK_TEST, qp: int = DESK_QP, size: int = DESK_SIZE) -> DeskData:
    """Disjoint seeded train / test corpora."""
    return DeskData(
        synthetic_corpus(n_train, qp, seed=2 * seed, size=size),
        synthetic_corpus(n_test, qp, seed=2 * seed + 1, size=size),
        qp,
    )


@dataclass
class Evaluation:
    hdr_psnr: float
    hdr_hf_psnr: float
    sdr_psnr: float
    per_clip: list[dict] = field(default_factory=list)


def evaluate(model: DIDNet, pairs: list[ClipPair]) -> Evaluation:
    rows = []
    for i, p in enumerate(pairs):
        hdr, sdr = predict(model, p.lq_array())
        rows.append(
            {
                "clip": i,
                "hdr_psnr": psnr(hdr, p.hq_hdr_mid),
                "hdr_hf_psnr": hf_psnr(hdr, p.hq_hdr_mid),
                "sdr_psnr": psnr(sdr, p.hq_sdr_mid),
            }
        )
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("hdr_psnr", "hdr_hf_psnr", "sdr_psnr")}
    return Evaluation(per_clip=rows, **mean)


def baseline_psnr(pairs: list[ClipPair]) -> float:
    """Mean PSNR of the analytic inverse tone map applied to the LQ middle frame."""
    return float(np.mean([psnr(inverse_tonemap(p.lq_sdr[MID]), p.hq_hdr_mid) for p in pairs]))


def input_sdr_psnr(pairs: list[ClipPair]) -> float:
    return float(np.mean([psnr(p.lq_sdr[MID], p.hq_sdr_mid) for p in pairs]))


@dataclass
class DeskRun:
    name: str
    model: DIDNet
    log: TrainLog
    evaluation: Evaluation


def run_variant(
    name: str,
    data: DeskData,
    steps: int = DESK_STEPS,
    seed: int = 0,
    base: ModelConfig | None = None,
    on_step=None,
) -> DeskRun:
    overrides, aux_weight = VARIANTS[name]
    cfg = replace(base or ModelConfig(dtype="float32", seed=seed), **overrides)
    model = DIDNet(cfg)
    settings = TrainSettings(steps=steps, aux_weight=aux_weight, main_weight=0.8, seed=seed)
    log = train(model, [Sample.from_pair(p) for p in data.train], settings, on_step=on_step)
    return DeskRun(name, model, log, evaluate(model, data.test))


def static_probe_clip(seed: int = 7, qp: int = DESK_QP, size: int = DESK_SIZE, grain: float = TEMPORAL_GRAIN) -> ClipPair:
    """A motionless 7-frame clip whose frames differ only by grain and coding noise."""
    return synth_clip_pair(procedural_hdr_clip(seed, size, static=True, grain=grain), qp, seed)


def temporal_instability(model: DIDNet, pair: ClipPair) -> float:
    """Std over frames of per-frame mean delta-E ITP after sliding-window conversion."""
    preds = convert_sequence(model, pair.lq_sdr)
    return temporal_std_delta_e(preds, pair.hq_hdr)
