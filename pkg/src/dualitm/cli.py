"""Command-line entry point: ``dualitm {synth,train,convert,eval,prove,flops}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or input.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .color import ColorSpace, inverse_tonemap
from .degradation import CLIP_LEN, MID, QP_LABELS, ClipPair, procedural_hdr_clip, synth_clip_pair
from .io import (
    Config,
    ManifestEntry,
    frame_files,
    load_clip_pair,
    read_frame,
    read_manifest,
    read_sequence,
    save_clip_pair,
    write_frame,
    write_manifest,
)
from .metrics import MS_SSIM_MIN, MetricReport, delta_e_itp, ms_ssim, psnr, reports_to_csv, reports_to_markdown, ssim
from .model import DIDNet, ModelConfig
from .modulation import format_cost_table
from .tensor import ContractError, ShapeError
from .train import Sample, TrainingError, TrainSettings, convert_sequence, load_checkpoint, predict, train
from .wavelet import hf_psnr

MIN_TRAIN_CLIPS = 8


class UsageError(Exception):
    """Invalid input detected after argument parsing (exit code 2)."""


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    if args.import_dir:
        entries = _import_clips(Path(args.import_dir), out, args.qp, args.format)
    else:
        for i in range(args.clips):
            seed = args.seed * 100003 + i
            pair = synth_clip_pair(procedural_hdr_clip(seed, args.size), args.qp, seed)
            entries.append(save_clip_pair(out, f"clip{i:04d}", pair, args.format))
    manifest = write_manifest(out / "manifest.txt", entries)
    print(f"wrote {len(entries)} clips to {manifest}")
    return 0


def _import_clips(src: Path, out: Path, qp: int, fmt: str) -> list[ManifestEntry]:
    """Ingest externally degraded clips laid out as ``src/<clip>/{lq/, hq_sdr.*, hq_hdr.*}``."""
    if not src.is_dir():
        raise UsageError(f"--import: {src} is not a directory")
    entries = []
    for i, d in enumerate(sorted(p for p in src.iterdir() if p.is_dir())):
        lq = read_sequence(d / "lq", ColorSpace.SDR_BT709)
        if len(lq) != CLIP_LEN:
            raise UsageError(f"{d}: expected {CLIP_LEN} LQ frames, found {len(lq)}")
        sdr = read_frame(_single(d, "hq_sdr"), ColorSpace.SDR_BT709)
        hdr = read_frame(_single(d, "hq_hdr"), ColorSpace.HDR_BT2020_PQ)
        entries.append(save_clip_pair(out, d.name, ClipPair(lq, sdr, hdr, qp, i), fmt))
    if not entries:
        raise UsageError(f"--import: no clip directories in {src}")
    return entries


def _single(d: Path, stem: str) -> Path:
    found = [p for p in d.iterdir() if p.stem == stem and p.suffix.lower() in (".png", ".dten")]
    if len(found) != 1:
        raise UsageError(f"{d}: expected exactly one {stem}.png or {stem}.dten")
    return found[0]


def cmd_train(args) -> int:
    try:
        cfg = Config.load(args.config)
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    entries = read_manifest(cfg.data)
    if len(entries) < MIN_TRAIN_CLIPS:
        raise UsageError(f"training needs at least {MIN_TRAIN_CLIPS} clips, manifest lists {len(entries)}")
    pairs = [load_clip_pair(e) for e in entries]
    for p in pairs:
        if (p.hq_hdr_mid.height, p.hq_hdr_mid.width) != (cfg.height, cfg.width):
            raise UsageError(f"clip size {p.hq_hdr_mid.height}x{p.hq_hdr_mid.width} != config {cfg.height}x{cfg.width}")
    model = DIDNet(
        ModelConfig(
            channels=cfg.channels,
            use_wa=cfg.use_wa,
            use_3dcn=cfg.use_3dcn,
            use_align=cfg.use_align,
            global_skip=cfg.global_skip,
            dtype=cfg.dtype,
            seed=cfg.seed,
        )
    )
    settings = TrainSettings(
        steps=cfg.steps,
        lr=cfg.lr,
        lr_hold=cfg.lr_hold,
        lr_every=cfg.lr_every,
        main_weight=cfg.main_weight,
        aux_weight=cfg.aux_weight,
        seed=cfg.seed,
        checkpoint_every=cfg.checkpoint_every,
    )
    every = max(1, cfg.steps // 20)

    def report(step, loss):
        if step % every == 0 or step == cfg.steps - 1:
            print(f"step {step:6d}  loss {loss:.6f}", flush=True)

    log = train(model, [Sample.from_pair(p) for p in pairs], settings, checkpoint_dir=cfg.out, on_step=report)
    Path(cfg.out, "run.cfg").write_text(cfg.dumps())
    final = log.losses[-1] if log.losses else float("nan")
    print(f"trained {cfg.steps} steps in {log.seconds:.1f}s, final loss {final:.6f}; checkpoint in {cfg.out}")
    return 0


def cmd_convert(args) -> int:
    files = frame_files(args.input)
    if len(files) < CLIP_LEN:
        raise UsageError(f"convert needs at least {CLIP_LEN} frames, found {len(files)} in {args.input}")
    frames = [read_frame(p, ColorSpace.SDR_BT709) for p in files]
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for src, hdr in zip(files, convert_sequence(model, frames)):
        write_frame(out / f"{src.stem}.{args.format}", hdr)
    print(f"converted {len(files)} frames into {out}")
    return 0


def _clip_report(entry: ManifestEntry, model: DIDNet | None) -> MetricReport:
    pair = load_clip_pair(entry)
    rep = MetricReport(entry.clip_id, entry.qp)
    if model is None:
        hdr, sdr = inverse_tonemap(pair.lq_sdr[MID]), pair.lq_sdr[MID]
    else:
        hdr, sdr = predict(model, pair.lq_array())
    ref = pair.hq_hdr_mid
    rep.add("psnr", psnr(hdr, ref))
    rep.add("ssim", ssim(hdr, ref))
    if min(ref.height, ref.width) >= MS_SSIM_MIN:
        rep.add("ms_ssim", ms_ssim(hdr, ref))
    rep.add("delta_e_itp", delta_e_itp(hdr, ref))
    rep.add("hf_psnr", hf_psnr(hdr, ref))
    rep.add("sdr_psnr", psnr(sdr, pair.hq_sdr_mid))
    return rep


def cmd_eval(args) -> int:
    entries = read_manifest(args.data)
    if not entries:
        raise UsageError(f"{args.data} lists no clips")
    model = None if args.baseline else load_checkpoint(args.checkpoint)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        reports = list(pool.map(lambda e: _clip_report(e, model), entries))
    csv_text = reports_to_csv(reports)
    md_text = reports_to_markdown(reports)
    if args.csv:
        Path(args.csv).write_text(csv_text)
    if args.markdown:
        Path(args.markdown).write_text(md_text)
    if not args.csv and not args.markdown:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(md_text)
    return 0


def cmd_prove(args) -> int:
    from .proofs import SUITES

    names = args.only or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    failed = 0
    for n in names:
        proof = SUITES[n]()
        print(proof.line(), flush=True)
        failed += not proof.passed
    print(f"{len(names) - failed}/{len(names)} suites passed")
    return 1 if failed else 0


def cmd_flops(args) -> int:
    print(format_cost_table())
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualitm", description="Joint SDR restoration and SDR-to-HDR conversion.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate (or import) a degraded clip-pair dataset")
    p.add_argument("--out", required=True, help="output directory; manifest.txt is written inside")
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--qp", type=int, choices=QP_LABELS, default=37)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="square frame size, multiple of 8")
    p.add_argument("--format", choices=("dten", "png"), default="dten")
    p.add_argument("--import", dest="import_dir", help="ingest pre-degraded clips from this directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a network from a key=value config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("convert", help="convert an SDR frame directory to HDR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of at least 7 SDR frames")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("dten", "png"), default="dten")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("eval", help="score a checkpoint (or the inverse tone map) on a manifest")
    p.add_argument("--data", required=True, help="dataset manifest")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", action="store_true", help="score the analytic inverse tone map")
    p.add_argument("--csv")
    p.add_argument("--markdown")
    p.add_argument("--jobs", type=int, default=2)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("prove", help="run the property suites")
    p.add_argument("--only", nargs="*", help="subset of suites")
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("flops", help="print the modulation cost table")
    p.set_defaults(fn=cmd_flops)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dualitm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, ShapeError, TrainingError, OSError, ValueError, ArithmeticError) as exc:
        print(f"dualitm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
