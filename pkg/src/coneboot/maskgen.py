"""Computer-vision mask generation for frame sequences.

One mask per sequence: absolute differences of consecutive frames are
averaged into a single change image, which is adaptively thresholded and
then optionally repaired by hole filling and convex-hull filling. The three
fidelity levels form a monotone chain (threshold <= filled <= hull,
pixelwise).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .frames import Frame, FrameSequence


class MaskKind(Enum):
    THRESHOLD = "threshold"
    FILLED = "filled"
    HULL = "hull"


@dataclass
class MaskAlgorithm:
    kind: MaskKind = MaskKind.HULL
    threshold_block: int = 51
    threshold_offset: float = 4.0
    # hull over the largest 8-connected component instead of all foreground
    hull_on_largest_component: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.kind, str):
            self.kind = MaskKind(self.kind)
        if self.threshold_block < 3 or self.threshold_block % 2 == 0:
            raise ValueError(f"threshold_block must be odd and >= 3, got {self.threshold_block}")


@dataclass
class BinaryMask:
    """Per-pixel foreground flags, true = cone."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.bits.shape}")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def foreground_count(self) -> int:
        return int(self.bits.sum())


def frame_differences(seq: FrameSequence) -> list[Frame]:
    """Absolute per-pixel differences of consecutive frames; N frames -> N-1."""
    if len(seq.frames) < 2:
        raise ValueError(f"sequence {seq.id!r} needs >= 2 frames")
    stack = [f.pixels.astype(np.int64) for f in seq.frames]
    return [Frame(np.abs(stack[i + 1] - stack[i])) for i in range(len(stack) - 1)]


def mean_image(frames: list[Frame]) -> Frame:
    """Per-pixel arithmetic mean of a uniform stack, real-valued."""
    if not frames:
        raise ValueError("mean_image of empty list")
    shapes = {f.pixels.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"mixed frame shapes: {sorted(shapes)}")
    total = np.zeros(frames[0].pixels.shape, dtype=np.float64)
    for f in frames:
        total += f.pixels
    return Frame(total / len(frames))


def _local_mean(img: np.ndarray, block: int) -> np.ndarray:
    # Box mean over block x block windows, borders replicated. Computed with
    # an integral image; on integer-valued input all partial sums are exact.
    r = block // 2
    padded = np.pad(img.astype(np.float64), r, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.float64)
    integral[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = img.shape
    s = (
        integral[block:block + h, block:block + w]
        - integral[:h, block:block + w]
        - integral[block:block + h, :w]
        + integral[:h, :w]
    )
    return s / (block * block)


def adaptive_threshold(img: Frame, block: int, offset: float) -> BinaryMask:
    """Foreground where a pixel exceeds its block-local mean by more than
    `offset`. Borders are edge-replicated."""
    if block < 3 or block % 2 == 0:
        raise ValueError(f"block must be odd and >= 3, got {block}")
    values = img.pixels.astype(np.float64)
    return BinaryMask(values > _local_mean(values, block) + offset)


def _flood_from(seeds: np.ndarray, region: np.ndarray) -> np.ndarray:
    # 4-connected reachability inside `region` starting from `seeds`,
    # computed by frontier propagation until fixpoint.
    reached = seeds & region
    while True:
        grown = reached.copy()
        grown[1:, :] |= reached[:-1, :]
        grown[:-1, :] |= reached[1:, :]
        grown[:, 1:] |= reached[:, :-1]
        grown[:, :-1] |= reached[:, 1:]
        grown &= region
        if (grown == reached).all():
            return reached
        reached = grown


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Convert background regions not 4-connected to the border into
    foreground; original foreground is kept."""
    bg = ~mask.bits
    seeds = np.zeros_like(bg)
    seeds[0, :] = seeds[-1, :] = seeds[:, 0] = seeds[:, -1] = True
    outside = _flood_from(seeds, bg)
    return BinaryMask(mask.bits | (bg & ~outside))


def _monotone_chain(points: np.ndarray) -> np.ndarray:
    # Andrew's monotone chain on integer (x, y) points; returns hull vertices
    # in counter-clockwise order (y-down raster coordinates).
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b) -> int:
        return int((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def _largest_component(bits: np.ndarray) -> np.ndarray:
    # Largest 8-connected foreground component (first found wins ties).
    remaining = bits.copy()
    best = np.zeros_like(bits)
    best_count = 0
    while remaining.any():
        ys, xs = np.nonzero(remaining)
        seed = np.zeros_like(bits)
        seed[ys[0], xs[0]] = True
        # 8-connectivity: grow through the 4-neighbourhood of a dilated set
        comp = seed
        while True:
            grown = comp.copy()
            grown[1:, :] |= comp[:-1, :]
            grown[:-1, :] |= comp[1:, :]
            grown[:, 1:] |= comp[:, :-1]
            grown[:, :-1] |= comp[:, 1:]
            grown[1:, 1:] |= comp[:-1, :-1]
            grown[1:, :-1] |= comp[:-1, 1:]
            grown[:-1, 1:] |= comp[1:, :-1]
            grown[:-1, :-1] |= comp[1:, 1:]
            grown &= remaining
            if (grown == comp).all():
                break
            comp = grown
        count = int(comp.sum())
        if count > best_count:
            best, best_count = comp, count
        remaining &= ~comp
    return best


def convex_hull_fill(mask: BinaryMask, on_largest_component: bool = False) -> BinaryMask:
    """Rasterized filled convex hull of all foreground pixel centers.

    Monotone-chain hull followed by a boundary-inclusive half-plane test of
    every pixel center; integer arithmetic throughout, so the rasterization
    is exact. The empty mask maps to the empty mask.
    """
    bits = mask.bits
    if on_largest_component and bits.any():
        bits = _largest_component(bits)
    ys, xs = np.nonzero(bits)
    if len(xs) == 0:
        return BinaryMask(np.zeros_like(mask.bits))
    hull = _monotone_chain(np.column_stack([xs, ys]))

    x_min, x_max = int(hull[:, 0].min()), int(hull[:, 0].max())
    y_min, y_max = int(hull[:, 1].min()), int(hull[:, 1].max())
    gx, gy = np.meshgrid(
        np.arange(x_min, x_max + 1, dtype=np.int64),
        np.arange(y_min, y_max + 1, dtype=np.int64),
    )
    if len(hull) <= 2:
        # all points collinear: rasterize the segment between the extremes
        a, b = hull[0], hull[-1]
        inside = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0]) == 0
    else:
        inside = np.ones_like(gx, dtype=bool)
        for i in range(len(hull)):
            a = hull[i]
            b = hull[(i + 1) % len(hull)]
            inside &= (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0]) >= 0
    out = np.zeros_like(mask.bits)
    out[y_min:y_max + 1, x_min:x_max + 1] = inside
    return BinaryMask(out)


def generate_mask(seq: FrameSequence, algo: MaskAlgorithm) -> BinaryMask:
    """Run the pipeline at the requested fidelity level. The result is one
    mask valid for the whole sequence."""
    mean = mean_image(frame_differences(seq))
    mask = adaptive_threshold(mean, algo.threshold_block, algo.threshold_offset)
    if algo.kind == MaskKind.THRESHOLD:
        return mask
    mask = fill_holes(mask)
    if algo.kind == MaskKind.FILLED:
        return mask
    return convex_hull_fill(mask, on_largest_component=algo.hull_on_largest_component)
