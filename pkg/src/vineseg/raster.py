"""Raster I/O, annotation files and pixel-level helpers.

Images are plain numpy arrays:

* RGB image  -- ``uint8`` array of shape ``(H, W, 3)``
* gray image -- ``float64`` array of shape ``(H, W)``
* mask       -- ``bool`` array of shape ``(H, W)``, True = inflorescence

Polygon annotations are ``(N, 2)`` float arrays of ``(x, y)`` vertices;
point annotations are an ``(N, 2)`` float array of flower centers.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "ImageFormatError",
    "AnnotationError",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "to_gray",
    "rasterize_polygons",
    "mirror_pad",
    "read_polygons",
    "write_polygons",
    "read_points",
    "write_points",
]


class ImageFormatError(ValueError):
    """Raised when a raster file exists but cannot be decoded."""


class AnnotationError(ValueError):
    """Raised for malformed annotation files or invalid annotation geometry."""


def _check_rgb(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")


def _decode(path: Path) -> Image.Image:
    # open() on a missing/unreadable path raises OSError subclasses before decoding
    with open(path, "rb") as fh:
        payload = fh.read()
    try:
        im = Image.open(io.BytesIO(payload))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return im


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG (or JPEG) file into an ``(H, W, 3)`` uint8 array.

    Raises
    ------
    OSError
        If the file cannot be read.
    ImageFormatError
        If the file is not a decodable raster.
    """
    path = Path(path)
    im = _decode(path)
    return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write an RGB or 8-bit gray array as PNG (deterministic encoding)."""
    img = np.asarray(img)
    if img.ndim == 3:
        _check_rgb(img)
    elif img.ndim != 2:
        raise ValueError(f"cannot save array of shape {img.shape}")
    arr = np.ascontiguousarray(np.clip(img, 0, 255).astype(np.uint8))
    Image.fromarray(arr).save(Path(path), format="PNG", optimize=False)


def load_mask(path: str | Path) -> np.ndarray:
    """Read a mask PNG; gray values above 127 count as inflorescence."""
    path = Path(path)
    im = _decode(path)
    return np.asarray(im.convert("L")) > 127


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a boolean mask as 8-bit gray PNG (0 / 255)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    save_image(path, mask.astype(np.uint8) * 255)


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma ``0.299 R + 0.587 G + 0.114 B`` as float64."""
    img = np.asarray(img)
    _check_rgb(img)
    rgb = img.astype(np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def _as_polygon(poly) -> np.ndarray:
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise AnnotationError(f"polygon must be an (N, 2) vertex list, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise AnnotationError("polygon has non-finite coordinates")
    if len(np.unique(pts, axis=0)) < 3:
        raise AnnotationError(f"polygon needs at least 3 distinct vertices, got {len(pts)}")
    return pts


def rasterize_polygons(polys: Iterable, width: int, height: int) -> np.ndarray:
    """Rasterize polygons into a boolean ``(height, width)`` mask.

    A pixel is set when its center ``(x + 0.5, y + 0.5)`` lies inside any of
    the polygons under the even-odd rule. Each polygon is filled by
    scanline crossings; parts outside the image are clipped.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    mask = np.zeros((height, width), dtype=bool)
    for poly in polys:
        pts = _as_polygon(poly)
        x0, y0 = pts[:, 0], pts[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

        row_lo = max(int(math.floor(pts[:, 1].min() - 0.5)), 0)
        row_hi = min(int(math.ceil(pts[:, 1].max() - 0.5)), height - 1)
        if row_lo > row_hi:
            continue
        yc = np.arange(row_lo, row_hi + 1, dtype=np.float64) + 0.5

        # half-open crossing rule: an edge counts when the scanline separates its endpoints
        below0 = y0[None, :] <= yc[:, None]
        below1 = y1[None, :] <= yc[:, None]
        crosses = below0 != below1
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (yc[:, None] - y0[None, :]) / (y1 - y0)[None, :]
        xs = np.where(crosses, x0[None, :] + t * (x1 - x0)[None, :], np.inf)
        xs.sort(axis=1)
        ncross = crosses.sum(axis=1)

        for k, row in enumerate(range(row_lo, row_hi + 1)):
            n = ncross[k]
            if n < 2:
                continue
            spans = xs[k, : n - n % 2].reshape(-1, 2)
            # pixel x is inside when xa <= x + 0.5 < xb
            starts = np.ceil(spans[:, 0] - 0.5).astype(np.int64)
            stops = np.ceil(spans[:, 1] - 0.5).astype(np.int64)
            np.clip(starts, 0, width, out=starts)
            np.clip(stops, 0, width, out=stops)
            for a, b in zip(starts, stops):
                if b > a:
                    mask[row, a:b] = True
    return mask


def mirror_pad(img: np.ndarray, left: int = 0, right: int = 0, top: int = 0, bottom: int = 0) -> np.ndarray:
    """Pad by reflecting about the border pixels (border not duplicated).

    ``[a, b, c]`` padded left by 1 becomes ``[b, a, b, c]``. Works for RGB,
    gray or any array whose first two axes are rows and columns.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    for name, m, dim in (("left", left, w), ("right", right, w), ("top", top, h), ("bottom", bottom, h)):
        if m < 0:
            raise ValueError(f"{name} margin must be non-negative, got {m}")
        if m and m >= dim:
            raise ValueError(f"{name} margin {m} must be smaller than the image dimension {dim}")
    pad = [(top, bottom), (left, right)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode="reflect")


# -- annotation files ---------------------------------------------------------

def read_polygons(path: str | Path) -> list[np.ndarray]:
    """Parse a polygon file: one polygon per line, ``x,y`` pairs separated by spaces."""
    polys = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                verts = [tuple(float(v) for v in tok.split(",")) for tok in line.split(" ") if tok]
                if any(len(v) != 2 for v in verts):
                    raise ValueError("vertex is not an x,y pair")
                polys.append(_as_polygon(verts))
            except (ValueError, AnnotationError) as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from exc
    return polys


def _fmt(v: float) -> str:
    return repr(float(v))


def write_polygons(path: str | Path, polys: Sequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for poly in polys:
            pts = _as_polygon(poly)
            fh.write(" ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts) + "\n")


def read_points(path: str | Path, bounds: tuple[int, int] | None = None) -> np.ndarray:
    """Read a ``x,y`` CSV of flower centers into an ``(N, 2)`` array.

    If ``bounds=(width, height)`` is given, points outside the image raise.
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y"]:
            raise AnnotationError(f"{path}:1: expected header 'x,y', got {header!r}")
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                if len(rec) != 2:
                    raise ValueError(f"expected 2 fields, got {len(rec)}")
                x, y = float(rec[0]), float(rec[1])
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise ValueError("non-finite coordinate")
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from exc
            if bounds is not None and not (0 <= x <= bounds[0] and 0 <= y <= bounds[1]):
                raise AnnotationError(f"{path}:{lineno}: point ({x}, {y}) outside image bounds {bounds}")
            rows.append((x, y))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def write_points(path: str | Path, points) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for x, y in pts:
            writer.writerow([_fmt(x), _fmt(y)])
