"""Synthetic test scenes: anti-aliased disks on a noisy background."""
from __future__ import annotations

import numpy as np

__all__ = ["place_disks", "render_disks", "disk_scene"]


def place_disks(rng: np.random.Generator, n: int, width: int, height: int,
                r_range: tuple[float, float] = (8, 25), gap: float = 3.0,
                occupancy_factor: float = 1.5, max_tries: int = 20000) -> np.ndarray:
    """Rejection-sample ``n`` disjoint disks as rows ``(cx, cy, r)``.

    Disks keep ``gap`` px from each other and from the border, and no center
    falls inside another disk's ``occupancy_factor * r`` zone, so a correct
    detector can in principle recover all of them.
    """
    disks: list[tuple[float, float, float]] = []
    for _ in range(max_tries):
        if len(disks) == n:
            break
        r = rng.uniform(*r_range)
        cx = rng.uniform(r + gap, width - r - gap)
        cy = rng.uniform(r + gap, height - r - gap)
        ok = True
        for ox, oy, orad in disks:
            d = np.hypot(cx - ox, cy - oy)
            if d < r + orad + gap or d <= occupancy_factor * max(r, orad) + 1:
                ok = False
                break
        if ok:
            disks.append((cx, cy, r))
    if len(disks) < n:
        raise RuntimeError(f"could only place {len(disks)} of {n} disks in {width}x{height}")
    return np.asarray(disks)


def render_disks(disks: np.ndarray, width: int, height: int, fg: float = 200.0, bg: float = 60.0,
                 supersample: int = 4) -> np.ndarray:
    """Render disks with area-coverage anti-aliasing into a float gray image."""
    img = np.full((height, width), bg, dtype=np.float64)
    ss = supersample
    sub = (np.arange(ss) + 0.5) / ss
    for cx, cy, r in disks:
        x0, x1 = max(0, int(np.floor(cx - r - 1))), min(width, int(np.ceil(cx + r + 1)) + 1)
        y0, y1 = max(0, int(np.floor(cy - r - 1))), min(height, int(np.ceil(cy + r + 1)) + 1)
        # pixel (x, y) has its center at integer coordinates (x, y)
        px = (np.arange(x0, x1)[:, None] + sub[None, :]).ravel() - 0.5
        py = (np.arange(y0, y1)[:, None] + sub[None, :]).ravel() - 0.5
        inside = (px[None, :] - cx) ** 2 + (py[:, None] - cy) ** 2 <= r * r
        cover = inside.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
        patch = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = np.where(cover > 0, bg + cover * (fg - bg), patch)
    return img


def disk_scene(seed: int, n: int = 25, width: int = 400, height: int = 400, noise: float = 2.0,
               r_range: tuple[float, float] = (8, 25)) -> tuple[np.ndarray, np.ndarray]:
    """Gray image and ground-truth ``(cx, cy, r)`` rows for a seeded disk field."""
    rng = np.random.default_rng(seed)
    disks = place_disks(rng, n, width, height, r_range)
    img = render_disks(disks, width, height)
    if noise:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0, 255), disks
