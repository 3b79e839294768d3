"""Full-image segmentation from overlapping patches.

The image is mirror-padded, cut into fixed-size patches whose centers
(the patch minus ``margin`` on every side) tile the original image, and
only those centers are written back. The border band of each patch
prediction is thrown away because zero padding inside the network makes
it unreliable.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import Network, segment_patch
from .raster import mirror_pad

__all__ = ["Rect", "Tile", "TilePlan", "SegmentationResult", "plan_tiles", "segment_full_image", "render_heatmap", "reflect_pad"]


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass(frozen=True)
class Tile:
    index: int
    src: Rect  # patch rectangle in padded-image coordinates
    dst: Rect  # interior rectangle in original-image coordinates
    crop: Rect  # part of the patch prediction that lands on dst


@dataclass(frozen=True)
class TilePlan:
    image_w: int
    image_h: int
    patch_size: int
    margin_x: int
    margin_y: int
    pad: tuple[int, int, int, int]  # left, right, top, bottom
    tiles: tuple[Tile, ...]

    @property
    def grid(self) -> tuple[Tile, ...]:
        return self.tiles

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, columns) of the tile grid."""
        cols = len({t.dst.x for t in self.tiles})
        rows = len({t.dst.y for t in self.tiles})
        return rows, cols

    def __len__(self) -> int:
        return len(self.tiles)

    def __str__(self) -> str:
        lines = [
            f"TilePlan {self.image_w}x{self.image_h}, patch {self.patch_size}, margin {self.margin_x}/{self.margin_y}, "
            f"pad l/r/t/b {self.pad}, {len(self.tiles)} tiles ({self.shape[0]} rows x {self.shape[1]} cols)",
            f"{'tile':>5}  {'source (x, y, w, h)':<28}{'dest (x, y, w, h)':<28}",
        ]
        for t in self.tiles:
            src = f"({t.src.x}, {t.src.y}, {t.src.w}, {t.src.h})"
            dst = f"({t.dst.x}, {t.dst.y}, {t.dst.w}, {t.dst.h})"
            lines.append(f"{t.index:>5}  {src:<28}{dst:<28}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SegmentationResult:
    prob_map: np.ndarray  # (2, H, W) float32
    class_mask: np.ndarray  # (H, W) bool


def _axis(length: int, patch: int, margin: int) -> tuple[list[tuple[int, int, int]], int]:
    interior = patch - 2 * margin
    n = max(1, math.ceil(length / interior))
    pad_after = max(margin, patch - length - margin)
    padded = length + margin + pad_after
    spans = []
    for i in range(n):
        d0 = i * interior
        d1 = min(d0 + interior, length)
        # the last patch slides inward instead of running off the padded image
        s0 = min(d0, padded - patch)
        spans.append((s0, d0, d1 - d0))
    return spans, pad_after


def plan_tiles(image_w: int, image_h: int, patch_size: int, margin: int) -> TilePlan:
    """Lay out overlapping patches whose interiors partition the image.

    ``ceil(W / (patch - 2 * margin))`` columns by the analogous number of
    rows; the last row and column interiors are clipped to the image and
    their patches shifted inward so they stay inside the padded image.
    """
    if image_w < 1 or image_h < 1:
        raise ValueError("image dimensions must be positive")
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    if patch_size - 2 * margin < 1:
        raise ValueError(f"margin {margin} leaves no interior in a {patch_size} px patch")
    xs, pad_r = _axis(image_w, patch_size, margin)
    ys, pad_b = _axis(image_h, patch_size, margin)
    tiles = []
    for sy, dy, dh in ys:
        for sx, dx, dw in xs:
            crop = Rect(dx + margin - sx, dy + margin - sy, dw, dh)
            tiles.append(Tile(len(tiles), Rect(sx, sy, patch_size, patch_size), Rect(dx, dy, dw, dh), crop))
    return TilePlan(image_w, image_h, patch_size, margin, margin, (margin, pad_r, margin, pad_b), tuple(tiles))


def reflect_pad(img: np.ndarray, left: int, right: int, top: int, bottom: int) -> np.ndarray:
    """Mirror padding that may exceed the image size (reflects repeatedly).

    A one-pixel-wide axis cannot be reflected and is replicated instead.
    """
    out = np.asarray(img)
    todo = [left, right, top, bottom]
    while any(todo):
        h, w = out.shape[:2]
        step = [0, 0, 0, 0]
        for k, dim in ((0, w), (1, w), (2, h), (3, h)):
            if todo[k] and dim == 1:
                pad = [(0, 0)] * out.ndim
                pad[1 if k < 2 else 0] = (todo[k], 0) if k % 2 == 0 else (0, todo[k])
                out = np.pad(out, pad, mode="edge")
                todo[k] = 0
                break
            step[k] = min(todo[k], dim - 1)
        else:
            out = mirror_pad(out, *step)
            todo = [t - s for t, s in zip(todo, step)]
    return out


def segment_full_image(net: Network, img: np.ndarray, plan: TilePlan, jobs: int = 1) -> SegmentationResult:
    """Run ``segment_patch`` per tile and stitch the interiors.

    Tiles are independent; with ``jobs > 1`` they run on a thread pool.
    The result does not depend on ``jobs`` since interiors are disjoint.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (w, h) != (plan.image_w, plan.image_h):
        raise ValueError(f"plan was built for {plan.image_w}x{plan.image_h}, image is {w}x{h}")
    padded = reflect_pad(img, *plan.pad)
    prob = np.empty((2, h, w), dtype=np.float32)

    def run(tile: Tile) -> None:
        ys, xs = tile.src.slices
        out = segment_patch(net, padded[ys, xs])
        cy, cx = tile.crop.slices
        dy, dx = tile.dst.slices
        prob[:, dy, dx] = out[:, cy, cx]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, plan.tiles))
    else:
        for tile in plan.tiles:
            run(tile)
    return SegmentationResult(prob, prob[1] >= prob[0])


def render_heatmap(result: SegmentationResult | np.ndarray) -> np.ndarray:
    """Blue (p=0) to red (p=1) ramp over the inflorescence probability."""
    prob = result.prob_map if isinstance(result, SegmentationResult) else np.asarray(result)
    t = np.clip(prob[1].astype(np.float64), 0.0, 1.0)
    red = np.rint(255.0 * t).astype(np.uint8)
    rgb = np.zeros(t.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = red
    rgb[..., 2] = 255 - red
    return rgb
