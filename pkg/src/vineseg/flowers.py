"""Single-flower extraction inside segmented inflorescence regions.

Pipeline: local contrast normalization -> Canny edges -> drop edges
outside the ROI -> gradient-directed circular Hough voting -> per-radius
vote normalization -> thresholded, score-sorted candidates -> drop
centers outside the ROI -> greedy selection on an occupancy map.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

__all__ = [
    "EdgeMap",
    "HoughAccumulator",
    "Circle",
    "DetectorParams",
    "local_contrast_normalize",
    "canny_edges",
    "mask_edges",
    "arc_offsets",
    "cht_vote",
    "normalize_votes",
    "extract_candidates",
    "restrict_to_roi",
    "select_circles",
    "detect_flowers",
    "write_circles",
    "read_circles",
    "draw_circles",
]


@dataclass(frozen=True)
class EdgeMap:
    edge: np.ndarray  # (H, W) bool
    direction: np.ndarray  # (H, W) float, gradient angle in (-pi, pi]; NaN off-edge

    @property
    def height(self) -> int:
        return self.edge.shape[0]

    @property
    def width(self) -> int:
        return self.edge.shape[1]

    @property
    def count(self) -> int:
        return int(self.edge.sum())

    @classmethod
    def from_points(cls, shape: tuple[int, int], xs, ys, angles) -> "EdgeMap":
        """Build an edge map from explicit edge pixels and gradient angles."""
        edge = np.zeros(shape, dtype=bool)
        direction = np.full(shape, np.nan)
        xs = np.asarray(xs, dtype=np.intp)
        ys = np.asarray(ys, dtype=np.intp)
        edge[ys, xs] = True
        direction[ys, xs] = np.angle(np.exp(1j * np.asarray(angles, dtype=np.float64)))
        return cls(edge, direction)


@dataclass(frozen=True)
class HoughAccumulator:
    radii: tuple[int, ...]
    planes: np.ndarray  # (len(radii), H, W)


class Circle(NamedTuple):
    cx: float
    cy: float
    r: float
    score: float


@dataclass(frozen=True)
class DetectorParams:
    r_min: int = 8
    r_max: int = 25
    gamma: float = math.pi / 8
    vote_threshold: float = 0.33
    occupancy_factor: float = 1.5
    canny_low: float = 120.0
    canny_high: float = 300.0
    lcn_window: int = 9
    canny_sigma: float = 0.0

    def __post_init__(self):
        if not (0 < self.r_min <= self.r_max):
            raise ValueError(f"need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}")
        # gamma >= pi/2 degenerates to full-circle voting; allowed for diagnostics
        if not (0 < self.gamma <= math.pi):
            raise ValueError(f"gamma must be in (0, pi], got {self.gamma}")
        if not (0 < self.vote_threshold <= 1):
            raise ValueError(f"vote_threshold must be in (0, 1], got {self.vote_threshold}")
        if self.occupancy_factor < 1:
            raise ValueError(f"occupancy_factor must be >= 1, got {self.occupancy_factor}")
        if not (0 <= self.canny_low <= self.canny_high):
            raise ValueError("need 0 <= canny_low <= canny_high")
        if self.lcn_window < 3 or self.lcn_window % 2 == 0:
            raise ValueError(f"lcn_window must be odd and >= 3, got {self.lcn_window}")
        if self.canny_sigma < 0:
            raise ValueError("canny_sigma must be non-negative")

    @property
    def radii(self) -> range:
        return range(int(self.r_min), int(self.r_max) + 1)


# -- preprocessing --------------------------------------------------------------

def _gaussian_kernel(window: int) -> np.ndarray:
    sigma = (window - 1) / 4.0
    ax = np.arange(window) - window // 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def local_contrast_normalize(img: np.ndarray, window: int = 9) -> np.ndarray:
    """Gaussian-weighted subtractive then divisive normalization, rescaled to [0, 255].

    ``v' = v - mean_w(v)``; ``v'' = v' / max(mean(sigma_w), sigma_w)`` where
    ``sigma_w = sqrt(mean_w(v'**2))``. The image-wide mean of ``sigma_w``
    floors the divisor so flat, noisy areas are not blown up. A constant
    image maps to 127.5 everywhere.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    v = np.asarray(img, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {v.shape}")
    k = _gaussian_kernel(window)
    centered = v - ndimage.correlate(v, k, mode="reflect")
    sigma = np.sqrt(np.maximum(ndimage.correlate(centered**2, k, mode="reflect"), 0.0))
    divisor = np.maximum(sigma, sigma.mean())
    out = np.divide(centered, divisor, out=np.zeros_like(centered), where=divisor > 0)
    lo, hi = out.min(), out.max()
    # tiny spans are float noise around a flat image
    if hi - lo <= 1e-9 * max(1.0, float(np.abs(v).max())):
        return np.full(v.shape, 127.5)
    return (out - lo) * (255.0 / (hi - lo))


# -- edges ----------------------------------------------------------------------

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T

# neighbour (dy, dx) along the gradient for the four quantized directions
_NMS_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def canny_edges(img: np.ndarray, low: float, high: float, sigma: float = 0.0) -> EdgeMap:
    """Canny edge detection on a gray image.

    Optional Gaussian smoothing (``sigma`` px, 0 = off), Sobel gradients,
    non-maximum suppression across the edge, then hysteresis: pixels above
    ``high`` seed edges, pixels above ``low`` are kept when 8-connected to
    a seed. Gradient angles ``atan2(gy, gx)`` are
    reported for every surviving pixel.
    """
    if not (0 <= low <= high):
        raise ValueError("need 0 <= low <= high")
    v = np.asarray(img, dtype=np.float64)
    if sigma > 0:
        v = ndimage.gaussian_filter(v, sigma, mode="nearest")
    gx = ndimage.correlate(v, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(v, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)

    sector = np.round(np.mod(angle, np.pi) / (np.pi / 4)).astype(np.int8) % 4
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in enumerate(_NMS_STEPS):
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        # strict on one side so a two-pixel plateau keeps exactly one pixel
        keep |= (sector == s) & (mag >= fwd) & (mag > bwd)
    keep &= mag > 0

    weak = keep & (mag >= low)
    strong = keep & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n:
        seeded = np.zeros(n + 1, dtype=bool)
        seeded[np.unique(labels[strong])] = True
        seeded[0] = False
        edge = seeded[labels]
    else:
        edge = np.zeros(mag.shape, dtype=bool)
    direction = np.where(edge, angle, np.nan)
    # atan2 returns -pi for (-0.0, negative); fold into (-pi, pi]
    direction[direction <= -np.pi] = np.pi
    return EdgeMap(edge, direction)


def mask_edges(edges: EdgeMap, roi: np.ndarray) -> EdgeMap:
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != edges.edge.shape:
        raise ValueError(f"ROI shape {roi.shape} does not match edge map {edges.edge.shape}")
    edge = edges.edge & roi
    return EdgeMap(edge, np.where(edge, edges.direction, np.nan))


# -- Hough voting -----------------------------------------------------------------

def arc_offsets(r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer offsets ``(dy, dx)`` at rounded distance ``r`` and their angles.

    A cell is on the ring when ``r - 0.5 <= hypot(dx, dy) < r + 0.5``; each
    cell appears once, so voting along it never double-counts.
    """
    span = np.arange(-r - 1, r + 2)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    d2 = dx**2 + dy**2
    ring = (d2 >= (r - 0.5) ** 2) & (d2 < (r + 0.5) ** 2)
    dy, dx = dy[ring], dx[ring]
    return dy, dx, np.arctan2(dy, dx)


def _in_window(offset_angle: np.ndarray, theta: np.ndarray, gamma: float) -> np.ndarray:
    # angular distance to theta or theta + pi, whichever is closer
    delta = np.mod(offset_angle[None, :] - theta[:, None], np.pi)
    return (delta <= gamma) | (delta >= np.pi - gamma)


def _vote_plane(ys, xs, theta, r: int, gamma: float, shape: tuple[int, int], chunk: int = 8192) -> np.ndarray:
    h, w = shape
    dy, dx, alpha = arc_offsets(r)
    votes = np.zeros(h * w, dtype=np.int64)
    for s in range(0, len(ys), chunk):
        py, px, th = ys[s : s + chunk], xs[s : s + chunk], theta[s : s + chunk]
        sel = _in_window(alpha, th, gamma)
        ty = py[:, None] + dy[None, :]
        tx = px[:, None] + dx[None, :]
        sel &= (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        votes += np.bincount((ty * w + tx)[sel], minlength=h * w)
    return votes.reshape(h, w).astype(np.float64)


def _edge_points(edges: EdgeMap):
    ys, xs = np.nonzero(edges.edge)
    return ys, xs, edges.direction[ys, xs]


def cht_vote(edges: EdgeMap, params: DetectorParams) -> HoughAccumulator:
    """Gradient-directed circular Hough transform.

    Every edge pixel votes, for each radius, once for each ring cell whose
    bearing lies within ``gamma`` of its gradient direction or of the
    opposite direction.
    """
    ys, xs, theta = _edge_points(edges)
    radii = tuple(params.radii)
    planes = np.stack([_vote_plane(ys, xs, theta, r, params.gamma, edges.edge.shape) for r in radii])
    return HoughAccumulator(radii, planes)


def _possible_votes(r: int) -> int:
    return int(round(2 * math.pi * r))


def normalize_votes(acc: HoughAccumulator) -> HoughAccumulator:
    """Divide plane ``r`` by ``round(2 pi r)`` and clamp to [0, 1]."""
    scale = np.array([_possible_votes(r) for r in acc.radii], dtype=np.float64)
    planes = np.clip(acc.planes / scale[:, None, None], 0.0, 1.0)
    return HoughAccumulator(acc.radii, planes)


def _sort_candidates(cx, cy, r, score) -> list[Circle]:
    order = np.lexsort((cx, cy, r, -score))
    return [Circle(int(cx[i]), int(cy[i]), int(r[i]), float(score[i])) for i in order]


def extract_candidates(acc: HoughAccumulator, threshold: float) -> list[Circle]:
    """Cells scoring at least ``threshold``, best first.

    Ties are ordered by radius, then row, then column.
    """
    if not (0 < threshold <= 1):
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    k, cy, cx = np.nonzero(acc.planes >= threshold)
    r = np.asarray(acc.radii, dtype=np.int64)[k]
    return _sort_candidates(cx, cy, r, acc.planes[k, cy, cx])


def restrict_to_roi(candidates: Iterable[Circle], roi: np.ndarray) -> list[Circle]:
    """Drop candidates whose center cell lies outside the ROI.

    Arcs of a circle cut by the ROI border can still pass the vote
    threshold and put its center just outside the region.
    """
    roi = np.asarray(roi, dtype=bool)
    h, w = roi.shape
    out = []
    for c in candidates:
        x, y = int(round(c.cx)), int(round(c.cy))
        if 0 <= x < w and 0 <= y < h and roi[y, x]:
            out.append(c)
    return out


def select_circles(candidates: Iterable[Circle], image_w: int, image_h: int, a: float = 1.5) -> list[Circle]:
    """Greedy occupancy-map selection.

    Walk the candidates in the given (score-descending) order; keep one if
    its center cell is not yet occupied, then occupy every cell within
    ``a * r`` of its center.
    """
    occupied = np.zeros((image_h, image_w), dtype=bool)
    chosen = []
    for c in candidates:
        x, y = int(round(c.cx)), int(round(c.cy))
        if 0 <= x < image_w and 0 <= y < image_h and occupied[y, x]:
            continue
        chosen.append(c)
        rad = a * c.r
        x0, x1 = max(0, math.floor(c.cx - rad)), min(image_w, math.ceil(c.cx + rad) + 1)
        y0, y1 = max(0, math.floor(c.cy - rad)), min(image_h, math.ceil(c.cy + rad) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.ogrid[y0:y1, x0:x1]
        occupied[y0:y1, x0:x1] |= (xx - c.cx) ** 2 + (yy - c.cy) ** 2 <= rad * rad
    return chosen


def detect_flowers(gray: np.ndarray, roi: np.ndarray, params: DetectorParams | None = None) -> list[Circle]:
    """Full flower extraction on a gray image restricted to an ROI mask.

    Same result as chaining the individual stages, but votes are
    accumulated one radius plane at a time over the bounding box of the
    ROI edges, so memory stays proportional to the image, not to
    image x radii.
    """
    params = params or DetectorParams()
    gray = np.asarray(gray, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    if gray.shape != roi.shape:
        raise ValueError(f"gray image {gray.shape} and ROI {roi.shape} differ in size")
    if not roi.any():
        return []
    norm = local_contrast_normalize(gray, params.lcn_window)
    edges = mask_edges(canny_edges(norm, params.canny_low, params.canny_high, params.canny_sigma), roi)
    ys, xs, theta = _edge_points(edges)
    if len(ys) == 0:
        return []
    h, w = gray.shape
    # votes never land farther than r_max + 1 from an edge pixel
    reach = params.r_max + 1
    y0, y1 = max(0, ys.min() - reach), min(h, ys.max() + reach + 1)
    x0, x1 = max(0, xs.min() - reach), min(w, xs.max() + reach + 1)
    sub = (y1 - y0, x1 - x0)

    found = []
    for r in params.radii:
        plane = _vote_plane(ys - y0, xs - x0, theta, r, params.gamma, sub) / _possible_votes(r)
        np.clip(plane, 0.0, 1.0, out=plane)
        cy, cx = np.nonzero(plane >= params.vote_threshold)
        if len(cy):
            found.append((cx + x0, cy + y0, np.full(len(cy), r), plane[cy, cx]))
    if not found:
        return []
    cx, cy, rr, score = (np.concatenate(parts) for parts in zip(*found))
    candidates = restrict_to_roi(_sort_candidates(cx, cy, rr, score), roi)
    return select_circles(candidates, w, h, params.occupancy_factor)


# -- I/O -------------------------------------------------------------------------

def write_circles(path: str | Path, circles: Iterable[Circle]) -> None:
    """CSV with header ``cx,cy,r,score``, one circle per row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cx", "cy", "r", "score"])
        for c in circles:
            w.writerow([_num(c.cx), _num(c.cy), _num(c.r), repr(float(c.score))])


def _num(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_circles(path: str | Path) -> list[Circle]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["cx", "cy", "r", "score"]:
            raise ValueError(f"{path}:1: expected header 'cx,cy,r,score', got {header!r}")
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                if len(rec) != 4:
                    raise ValueError(f"expected 4 fields, got {len(rec)}")
                cx, cy, r, score = (float(v) for v in rec)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            out.append(Circle(cx, cy, r, score))
    return out


def draw_circles(img: np.ndarray, circles: Iterable[Circle], color=(255, 255, 0), width: int = 1) -> np.ndarray:
    """Copy of an RGB image with circle outlines drawn on it."""
    canvas = Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8))
    draw = ImageDraw.Draw(canvas)
    for c in circles:
        draw.ellipse([c.cx - c.r, c.cy - c.r, c.cx + c.r, c.cy + c.r], outline=tuple(color), width=width)
    return np.asarray(canvas).copy()
