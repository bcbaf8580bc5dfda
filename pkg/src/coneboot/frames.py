"""Loading, resizing, and cataloguing of PNG frame sequences.

On-disk layout::

    <root>/<sequence_id>/frame_000.png ... frame_NNN.png
    <root>/<sequence_id>/truth_mask.png   (optional, 0/255)
    <root>/<sequence_id>/text_mask.png    (optional, 0/255)
    <root>/manifest.json

Frame order is lexicographic filename order; zero-padded numeric names are
the expected layout. Color inputs are reduced to single-channel gray with
ITU-R 601 luma weights.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

SPLITS = ("unsorted", "train_good", "rejected", "representative_test", "bad_mask_test")
MANIFEST_VERSION = 1

_LUMA = np.array([0.299, 0.587, 0.114])


class SequenceError(Exception):
    """Base class for sequence/manifest loading failures."""


class MissingSequenceDir(SequenceError):
    pass


class TooFewFrames(SequenceError):
    pass


class MixedFrameSizes(SequenceError):
    pass


class UndecodableFrame(SequenceError):
    pass


class ManifestError(SequenceError):
    pass


@dataclass
class Frame:
    """Single-channel raster.

    `pixels` is a 2-D array. With normalized=False values live in [0, 255]
    (integers on ingest; fractional values appear after averaging ops);
    with normalized=True values live in [0.0, 1.0].
    """

    pixels: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError(f"Frame pixels must be 2-D, got shape {self.pixels.shape}")
        hi = 1.0 if self.normalized else 255.0
        lo_v = float(self.pixels.min()) if self.pixels.size else 0.0
        hi_v = float(self.pixels.max()) if self.pixels.size else 0.0
        if lo_v < 0.0 or hi_v > hi:
            raise ValueError(f"Frame values [{lo_v}, {hi_v}] outside [0, {hi}]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class FrameSequence:
    id: str
    frames: list[Frame]
    source_size: tuple[int, int]  # (width, height)

    def __post_init__(self) -> None:
        if len(self.frames) < 2:
            raise TooFewFrames(f"sequence {self.id!r} has {len(self.frames)} frames, need >= 2")
        shapes = {f.pixels.shape for f in self.frames}
        if len(shapes) != 1:
            raise MixedFrameSizes(f"sequence {self.id!r} mixes frame shapes {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class ManifestEntry:
    sequence_id: str
    path: str
    frame_count: int
    split: str = "unsorted"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r} for {self.sequence_id!r}")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed_log: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [e.sequence_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate sequence ids: {dupes}")
        self._check_disjoint()

    def _check_disjoint(self) -> None:
        rep = self.ids_in_split("representative_test")
        bad = self.ids_in_split("bad_mask_test")
        good = self.ids_in_split("train_good")
        if set(rep) & set(bad):
            raise ManifestError(f"test sets overlap: {sorted(set(rep) & set(bad))}")
        leak = (set(rep) | set(bad)) & set(good)
        if leak:
            raise ManifestError(f"test sequences assigned to train_good: {sorted(leak)}")

    def ids_in_split(self, split: str) -> list[str]:
        return [e.sequence_id for e in self.entries if e.split == split]

    def entry(self, sequence_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.sequence_id == sequence_id:
                return e
        raise KeyError(sequence_id)


def _to_gray(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr.astype(np.uint8)
    rgb = arr[..., :3].astype(np.float64)
    return np.rint(rgb @ _LUMA).astype(np.uint8)


def load_png_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise UndecodableFrame(f"cannot decode {path}") from exc
    return _to_gray(arr)


def load_sequence(path: str | os.PathLike) -> FrameSequence:
    """Load all frames of one sequence directory, lexicographic order.

    Files named frame_*.png are preferred; if none exist, every *.png that
    is not a mask artifact (truth_mask/text_mask/mask_*) is used.
    """
    d = Path(path)
    if not d.is_dir():
        raise MissingSequenceDir(f"no such sequence directory: {d}")
    files = sorted(d.glob("frame_*.png"))
    if not files:
        files = sorted(
            p for p in d.glob("*.png")
            if p.name not in ("truth_mask.png", "text_mask.png") and not p.name.startswith("mask_")
        )
    if len(files) < 2:
        raise TooFewFrames(f"{d} holds {len(files)} frame PNGs, need >= 2")
    frames = [Frame(load_png_gray(p)) for p in files]
    shapes = {f.pixels.shape for f in frames}
    if len(shapes) != 1:
        raise MixedFrameSizes(f"{d} mixes frame sizes {sorted(shapes)}")
    h, w = frames[0].pixels.shape
    return FrameSequence(id=d.name, frames=frames, source_size=(w, h))


def write_png_gray(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def resize_bilinear(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Bilinear resampling with half-pixel centers and edge clamping.

    Source coordinate for output index i is (i + 0.5) * in/out - 0.5,
    clamped to the valid range; the four neighbours are blended with the
    usual bilinear weights. Output stays within [min, max] of the input.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    src = frame.pixels.astype(np.float64)
    in_h, in_w = src.shape

    def _axis(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        coords = np.clip(coords, 0.0, in_n - 1.0)
        i0 = np.floor(coords).astype(np.int64)
        i0 = np.minimum(i0, in_n - 1)
        i1 = np.minimum(i0 + 1, in_n - 1)
        return i0, i1, coords - i0

    x0, x1, fx = _axis(out_w, in_w)
    y0, y1, fy = _axis(out_h, in_h)
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy)[:, None] + bot * fy[:, None]
    out = np.clip(out, src.min(), src.max())
    if frame.normalized:
        return Frame(out, normalized=True)
    if np.issubdtype(frame.pixels.dtype, np.integer):
        return Frame(np.rint(out).astype(frame.pixels.dtype))
    return Frame(out)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write the manifest atomically (temp file + rename).

    Entry paths are interpreted relative to the manifest's directory and
    must exist at write time.
    """
    path = Path(path)
    root = path.parent
    for e in manifest.entries:
        if not (root / e.path).exists():
            raise ManifestError(f"entry path does not exist: {root / e.path}")
    manifest._check_disjoint()
    doc = {
        "version": MANIFEST_VERSION,
        "entries": [
            {"sequence_id": e.sequence_id, "path": e.path, "frame_count": e.frame_count, "split": e.split}
            for e in manifest.entries
        ],
        "seed_log": manifest.seed_log,
    }
    fd, tmp = tempfile.mkstemp(dir=root, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"no manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version in {path}: {doc.get('version')!r}")
    try:
        entries = [
            ManifestEntry(
                sequence_id=str(e["sequence_id"]),
                path=str(e["path"]),
                frame_count=int(e["frame_count"]),
                split=str(e.get("split", "unsorted")),
            )
            for e in doc["entries"]
        ]
        seed_log = {str(k): int(v) for k, v in doc.get("seed_log", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    return DatasetManifest(entries=entries, seed_log=seed_log)


def manifest_path(root: str | os.PathLike) -> Path:
    return Path(root) / "manifest.json"


def sequence_dir(root: str | os.PathLike, manifest: DatasetManifest, sequence_id: str) -> Path:
    return Path(root) / manifest.entry(sequence_id).path


def with_split(manifest: DatasetManifest, sequence_id: str, split: str) -> DatasetManifest:
    """Copy of the manifest with one entry reassigned."""
    entries = [
        replace(e, split=split) if e.sequence_id == sequence_id else e
        for e in manifest.entries
    ]
    return DatasetManifest(entries=entries, seed_log=dict(manifest.seed_log))
