"""Frame files, key=value configs and dataset manifests."""

from __future__ import annotations

from dataclasses import MISSING, dataclass, fields
from pathlib import Path

import cv2
import numpy as np

from .color import ColorSpace, Frame
from .degradation import CLIP_LEN, ClipPair
from .tensor import ContractError, ShapeError, load_dten, save_dten

PNG_MAX = 65535


# -- frames ----------------------------------------------------------------------


def write_frame(path, frame: Frame) -> Path:
    """Write a frame as DTEN (``.dten``, lossless float) or 16-bit PNG (``.png``).

    PNG code values are ``round(v * 65535)``; 8-bit and 10-bit frames are
    therefore stored with their levels spread over the 16-bit range.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".dten":
        save_dten(path, frame.pixels)
    elif suffix == ".png":
        code = np.round(np.clip(frame.pixels, 0.0, 1.0) * PNG_MAX).astype(np.uint16)
        bgr = np.ascontiguousarray(code[::-1].transpose(1, 2, 0))
        if not cv2.imwrite(str(path), bgr):
            raise OSError(f"could not write {path}")
    else:
        raise ContractError(f"unsupported frame file type {suffix!r} (use .dten or .png)")
    return path


def read_frame(path, space: ColorSpace | str, bit_depth: int | None = None) -> Frame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".dten":
        px = load_dten(path)
        if px.ndim != 3 or px.shape[0] != 3:
            raise ShapeError(f"{path}: expected a [3,H,W] tensor, got {px.shape}")
    elif suffix == ".png":
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ContractError(f"{path}: unreadable or corrupt PNG")
        if raw.dtype != np.uint16:
            raise ContractError(f"{path}: unsupported bit depth ({raw.dtype}); frames are 16-bit PNG")
        if raw.ndim != 3 or raw.shape[2] != 3:
            raise ContractError(f"{path}: expected 3 colour channels, got shape {raw.shape}")
        px = raw.transpose(2, 0, 1)[::-1].astype(np.float64) / PNG_MAX
    else:
        raise ContractError(f"unsupported frame file type {suffix!r} (use .dten or .png)")
    return Frame(px, space, bit_depth, {"path": str(path)})


def frame_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ContractError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".dten", ".png"))


def read_sequence(directory, space: ColorSpace | str) -> list[Frame]:
    return [read_frame(p, space) for p in frame_files(directory)]


# -- config ----------------------------------------------------------------------


@dataclass
class Config:
    """Plain-text ``key=value`` run configuration."""

    width: int
    height: int
    qp: int
    seed: int
    steps: int
    data: str
    out: str
    channels: int = 16
    lr: float = 5e-4
    lr_hold: int = 1000
    lr_every: int = 500
    aux_weight: float = 0.2
    main_weight: float = 0.8
    checkpoint_every: int = 500
    use_wa: bool = True
    use_3dcn: bool = True
    use_align: bool = True
    global_skip: bool = True
    dtype: str = "float32"

    @classmethod
    def required_keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.default is MISSING]

    @classmethod
    def parse(cls, text: str, base_dir=None) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        kw: dict[str, object] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"config line {n}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ContractError(f"config line {n}: unknown key {key!r}")
            if key in kw:
                raise ContractError(f"config line {n}: duplicate key {key!r}")
            kw[key] = _convert(key, val, str(types[key]))
        missing = [k for k in cls.required_keys() if k not in kw]
        if missing:
            raise ContractError(f"config is missing required keys: {', '.join(missing)}")
        cfg = cls(**kw)  # type: ignore[arg-type]
        if base_dir is not None:
            cfg.data = str(Path(base_dir, cfg.data))
            cfg.out = str(Path(base_dir, cfg.out))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        return cls.parse(path.read_text(), base_dir=path.parent)

    def validate(self):
        if self.width <= 0 or self.height <= 0 or self.width % 4 or self.height % 4:
            raise ContractError(f"width/height must be positive multiples of 4, got {self.width}x{self.height}")
        if self.steps < 0 or self.lr < 0 or self.channels < 1:
            raise ContractError("steps, lr and channels must be non-negative (channels >= 1)")
        if self.dtype not in ("float32", "float64"):
            raise ContractError(f"dtype must be float32 or float64, got {self.dtype}")

    def dumps(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _convert(key: str, val: str, type_name: str):
    try:
        if "bool" in type_name:
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if "int" in type_name:
            return int(val)
        if "float" in type_name:
            return float(val)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {val!r} as {type_name}") from None
    return val


# -- dataset manifests -----------------------------------------------------------


@dataclass
class ManifestEntry:
    clip_id: str
    qp: int
    seed: int
    lq_dir: str
    hq_sdr: str
    hq_hdr: str

    def line(self) -> str:
        return f"{self.clip_id} {self.qp} {self.seed} {self.lq_dir} {self.hq_sdr} {self.hq_hdr}\n"


def read_manifest(path) -> list[ManifestEntry]:
    """Lines of ``clip_id qp seed lq_dir hq_sdr hq_hdr``; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    root = path.parent
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ContractError(f"{path}:{n}: expected 6 fields, got {len(parts)}")
        cid, qp, seed, lq, sdr, hdr = parts
        out.append(ManifestEntry(cid, int(qp), int(seed), str(root / lq), str(root / sdr), str(root / hdr)))
    return out


def write_manifest(path, entries: list[ManifestEntry]) -> Path:
    path = Path(path)
    path.write_text("".join(e.line() for e in entries))
    return path


def save_clip_pair(root, clip_id: str, pair: ClipPair, fmt: str = "dten") -> ManifestEntry:
    """Store one pair under ``root/clip_id`` and return its manifest entry."""
    root = Path(root)
    d = root / clip_id
    (d / "lq").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(pair.lq_sdr):
        write_frame(d / "lq" / f"{i:02d}.{fmt}", f)
    write_frame(d / f"hq_sdr.{fmt}", pair.hq_sdr_mid)
    write_frame(d / f"hq_hdr.{fmt}", pair.hq_hdr_mid)
    rel = Path(clip_id)
    return ManifestEntry(clip_id, pair.qp_label, pair.seed, str(rel / "lq"), str(rel / f"hq_sdr.{fmt}"), str(rel / f"hq_hdr.{fmt}"))


def load_clip_pair(entry: ManifestEntry) -> ClipPair:
    lq = read_sequence(entry.lq_dir, ColorSpace.SDR_BT709)
    if len(lq) != CLIP_LEN:
        raise ContractError(f"clip {entry.clip_id}: expected {CLIP_LEN} LQ frames, found {len(lq)}")
    return ClipPair(
        lq,
        read_frame(entry.hq_sdr, ColorSpace.SDR_BT709),
        read_frame(entry.hq_hdr, ColorSpace.HDR_BT2020_PQ),
        entry.qp,
        entry.seed,
    )


def load_dataset(manifest_path) -> list[ClipPair]:
    return [load_clip_pair(e) for e in read_manifest(manifest_path)]


__all__ = [
    "Config",
    "ManifestEntry",
    "frame_files",
    "load_clip_pair",
    "load_dataset",
    "read_frame",
    "read_manifest",
    "read_sequence",
    "save_clip_pair",
    "write_frame",
    "write_manifest",
]
