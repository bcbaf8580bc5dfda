"""Synthetic ultrasound-like sequences with exact ground truth.

Each sequence is a sector-shaped "cone" of echo data over a black
background. Inside the cone, a radial intensity gradient carries
multiplicative speckle that changes every frame; how strongly each cone
region flickers is shaped by a smooth per-sequence gain field, so the
change-detection masks downstream miss coherent chunks rather than random
pixels. The background is static apart from an optional scrolling EKG
trace. Burned-in text is simulated by static dithered blocks whose
rectangles double as the sensitive-region mask for de-identification
checks.

Everything is a pure function of (params, seed).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .frames import (
    DatasetManifest,
    Frame,
    FrameSequence,
    ManifestEntry,
    write_manifest,
    write_png_gray,
)
from .maskgen import BinaryMask

log = logging.getLogger(__name__)

Rect = tuple[int, int, int, int]  # (x, y, w, h)


@dataclass
class SynthParams:
    image_size: tuple[int, int] = (128, 128)  # (w, h)
    cone_apex: tuple[float, float] = (64.0, 10.0)
    cone_half_angle: float = 30.0  # degrees
    cone_radius: float = 108.0
    rotation: float = 0.0  # degrees, 0 = cone opens straight down
    speckle_amplitude: float = 0.4
    motion_amplitude: float = 0.6  # 0 = uniform flicker, 1 = fully localized
    n_frames: int = 12
    text_regions: tuple[Rect, ...] = ((4, 3, 34, 8), (88, 3, 36, 8))
    ekg_enabled: bool = False
    occlusion: Rect | None = None

    def __post_init__(self) -> None:
        if self.n_frames < 2:
            raise ValueError(f"n_frames must be >= 2, got {self.n_frames}")
        if self.cone_radius <= 0 or self.cone_half_angle <= 0:
            raise ValueError("degenerate cone sector (radius and half-angle must be > 0)")
        if not 0.0 <= self.speckle_amplitude <= 1.0:
            raise ValueError("speckle_amplitude must be in [0, 1]")
        if not 0.0 <= self.motion_amplitude <= 1.0:
            raise ValueError("motion_amplitude must be in [0, 1]")


def _rect_mask(shape: tuple[int, int], rect: Rect) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    x, y, w, h = rect
    m[max(y, 0):y + h, max(x, 0):x + w] = True
    return m


def _sector_geometry(params: SynthParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w, h = params.image_size
    ax, ay = params.cone_apex
    gy, gx = np.mgrid[0:h, 0:w]
    dx = gx - ax
    dy = gy - ay
    dist = np.hypot(dx, dy)
    axis_angle = math.radians(90.0 + params.rotation)
    ux, uy = math.cos(axis_angle), math.sin(axis_angle)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_to_axis = np.where(dist > 0, (dx * ux + dy * uy) / np.maximum(dist, 1e-12), 1.0)
    in_sector = (dist <= params.cone_radius) & (cos_to_axis >= math.cos(math.radians(params.cone_half_angle)))
    return in_sector, dist, cos_to_axis


def truth_mask(params: SynthParams) -> BinaryMask:
    """Exact cone mask from geometry alone (never touches the RNG)."""
    in_sector, _, _ = _sector_geometry(params)
    if params.occlusion is not None:
        in_sector = in_sector & ~_rect_mask(in_sector.shape, params.occlusion)
    return BinaryMask(in_sector)


def text_region_mask(params: SynthParams) -> BinaryMask:
    w, h = params.image_size
    m = np.zeros((h, w), dtype=bool)
    for rect in params.text_regions:
        m |= _rect_mask((h, w), rect)
    return BinaryMask(m)


def _gain_field(params: SynthParams, rng: np.random.Generator, dist: np.ndarray) -> np.ndarray:
    # Smooth per-sequence field in [1 - motion, 1]: the places that "move".
    w, h = params.image_size
    ax, ay = params.cone_apex
    gy, gx = np.mgrid[0:h, 0:w]
    bumps = np.zeros((h, w), dtype=np.float64)
    for _ in range(3):
        r = rng.uniform(0.25, 0.85) * params.cone_radius
        theta = math.radians(90.0 + params.rotation + rng.uniform(-0.8, 0.8) * params.cone_half_angle)
        cx = ax + r * math.cos(theta)
        cy = ay + r * math.sin(theta)
        sigma = rng.uniform(0.22, 0.4) * params.cone_radius
        bumps += np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sigma * sigma))
    bumps /= bumps.max()
    return (1.0 - params.motion_amplitude) + params.motion_amplitude * bumps


def _ekg_rows(params: SynthParams, t: int) -> tuple[np.ndarray, np.ndarray]:
    # Scrolling spiky trace along the bottom margin; returns (ys, xs).
    w, h = params.image_size
    base_y = h - 4
    xs = np.arange(1, w - 1)
    period = 24
    phase = (xs + 3 * t) % period
    spike = np.where(phase < 3, 6 - 2 * phase, 0)
    wiggle = np.where((phase >= 8) & (phase < 16), 1, 0)
    ys = base_y - spike - wiggle
    return ys, xs


def generate_sequence(
    params: SynthParams, seed: int
) -> tuple[FrameSequence, BinaryMask, BinaryMask]:
    """Render one sequence; returns (frames, truth mask, text-region mask).

    Deterministic for a fixed (params, seed). Any overlap the clutter
    elements have with the truth cone is reported via the module logger.
    """
    w, h = params.image_size
    rng = np.random.default_rng(seed)
    in_sector, dist, _ = _sector_geometry(params)
    truth = truth_mask(params)
    text_mask = text_region_mask(params)

    # static base: radial gradient inside the cone, black background
    base = np.zeros((h, w), dtype=np.float64)
    radial = 190.0 - 120.0 * np.clip(dist / params.cone_radius, 0.0, 1.0)
    base[in_sector] = radial[in_sector]

    # burned-in text: static dithered bright blocks with dark gaps
    for rect in params.text_regions:
        rm = _rect_mask((h, w), rect)
        glyph = rng.uniform(150.0, 250.0, size=(h, w))
        gaps = rng.random((h, w)) < 0.3
        base[rm] = np.where(gaps[rm], 20.0, glyph[rm])

    if params.occlusion is not None:
        base[_rect_mask((h, w), params.occlusion)] = 0.0

    gain = _gain_field(params, rng, dist)
    ekg_union = np.zeros((h, w), dtype=bool)
    frames: list[Frame] = []
    for t in range(params.n_frames):
        img = base.copy()
        if params.speckle_amplitude > 0.0:
            noise = params.speckle_amplitude * gain * (2.0 * rng.random((h, w)) - 1.0)
            img[in_sector] = base[in_sector] * (1.0 + noise[in_sector])
        if params.occlusion is not None:
            img[_rect_mask((h, w), params.occlusion)] = 0.0
        if params.ekg_enabled:
            ys, xs = _ekg_rows(params, t)
            img[ys, xs] = 230.0
            img[np.minimum(ys + 1, h - 1), xs] = 200.0
            ekg_union[ys, xs] = True
            ekg_union[np.minimum(ys + 1, h - 1), xs] = True
        frames.append(Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8)))

    clutter_overlap = int(((text_mask.bits | ekg_union) & truth.bits).sum())
    if clutter_overlap:
        log.warning("seed %d: clutter overlaps the truth cone on %d pixels", seed, clutter_overlap)

    seq = FrameSequence(id=f"synth_{seed}", frames=frames, source_size=(w, h))
    return seq, truth, text_mask


# --- standard desk-scale corpus --------------------------------------------

_SIZES: tuple[tuple[int, int], ...] = ((96, 80), (104, 88), (88, 80))


def _sample_params(rng: np.random.Generator, size: tuple[int, int]) -> SynthParams:
    w, h = size
    return SynthParams(
        image_size=size,
        cone_apex=(w / 2.0 + rng.uniform(-8.0, 8.0), rng.uniform(4.0, 9.0)),
        cone_half_angle=rng.uniform(26.0, 38.0),
        cone_radius=rng.uniform(0.70, 0.85) * h,
        rotation=rng.uniform(-10.0, 10.0),
        speckle_amplitude=rng.uniform(0.3, 0.5),
        motion_amplitude=rng.uniform(0.55, 0.8),
        n_frames=int(rng.integers(10, 15)),
        text_regions=(
            (3, 2, min(30, w // 3), 7),
            (w - min(32, w // 3) - 3, 2, min(32, w // 3), 7),
        ),
    )


def _degrade_for_bad_set(params: SynthParams, rng: np.random.Generator, mode: str) -> SynthParams:
    w, h = params.image_size
    if mode == "ekg":
        # keep the cone clear of the bottom-margin trace
        return replace(
            params,
            ekg_enabled=True,
            cone_radius=rng.uniform(0.58, 0.66) * h,
            cone_apex=(params.cone_apex[0], rng.uniform(4.0, 6.0)),
        )
    if mode == "occluded":
        cut_w = int(0.3 * w)
        return replace(
            params,
            occlusion=(w - cut_w, int(0.25 * h), cut_w, int(0.6 * h)),
            speckle_amplitude=rng.uniform(0.18, 0.25),
            motion_amplitude=rng.uniform(0.8, 0.9),
        )
    # faint: barely-moving cone, change detection finds only fragments
    return replace(
        params,
        speckle_amplitude=rng.uniform(0.12, 0.17),
        motion_amplitude=rng.uniform(0.85, 0.95),
    )


def write_sequence(
    root: Path, sequence_id: str, seq: FrameSequence, truth: BinaryMask, text_mask: BinaryMask
) -> int:
    d = root / sequence_id
    d.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        write_png_gray(fr.pixels, d / f"frame_{i:03d}.png")
    write_png_gray(truth.bits.astype(np.uint8) * 255, d / "truth_mask.png")
    write_png_gray(text_mask.bits.astype(np.uint8) * 255, d / "text_mask.png")
    return len(seq.frames)


def make_corpus(
    root: str | Path,
    n_train: int = 60,
    n_test: int = 12,
    n_bad: int = 6,
    seed: int = 7,
) -> DatasetManifest:
    """Write the standard desk-scale corpus under `root`.

    Training and representative-test sequences are clean; the bad set mixes
    faint, occluded, and EKG-cluttered sequences so the change-detection
    masks degrade the way triage rejects do. Splits are assigned directly
    in the manifest (the corpus stands in for an already-triaged dataset).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(seed)
    entries: list[ManifestEntry] = []

    def emit(sequence_id: str, params: SynthParams, split: str) -> None:
        gen_seed = int(master.integers(0, 2**31 - 1))
        seq, truth, text = generate_sequence(params, gen_seed)
        count = write_sequence(root, sequence_id, seq, truth, text)
        entries.append(ManifestEntry(sequence_id=sequence_id, path=sequence_id, frame_count=count, split=split))

    for i in range(n_train):
        emit(f"train_{i:03d}", _sample_params(master, _SIZES[i % len(_SIZES)]), "train_good")
    for i in range(n_test):
        emit(f"rep_{i:03d}", _sample_params(master, _SIZES[i % len(_SIZES)]), "representative_test")
    bad_modes = ["faint", "ekg", "occluded"]
    for i in range(n_bad):
        mode = bad_modes[i % len(bad_modes)]
        params = _degrade_for_bad_set(_sample_params(master, _SIZES[i % len(_SIZES)]), master, mode)
        emit(f"bad_{i:03d}_{mode}", params, "bad_mask_test")

    manifest = DatasetManifest(entries=entries, seed_log={"corpus": seed})
    write_manifest(manifest, root / "manifest.json")
    return manifest


def sequence_has_ekg(sequence_id: str) -> bool:
    """Corpus naming convention: EKG-cluttered bad sequences carry an ekg tag."""
    return sequence_id.endswith("_ekg")
