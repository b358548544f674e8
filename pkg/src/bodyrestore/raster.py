"""Anti-aliased 2D raster primitives on float images.

Coordinates are (x, y) in pixel units with pixel centers at integer
positions. Coverage ("alpha") maps are computed from signed distances
with a half-pixel feather, so shapes composite smoothly.
"""

from __future__ import annotations

import numpy as np


def pixel_grid(hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = hw
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def disk_alpha(hw, center, radius) -> np.ndarray:
    xs, ys = pixel_grid(hw)
    d = np.hypot(xs - center[0], ys - center[1])
    return np.clip(radius + 0.5 - d, 0.0, 1.0)


def ellipse_alpha(hw, center, rx, ry) -> np.ndarray:
    xs, ys = pixel_grid(hw)
    # approximate distance via normalized radius, scaled back to pixels
    nd = np.hypot((xs - center[0]) / rx, (ys - center[1]) / ry)
    return np.clip((1.0 - nd) * min(rx, ry) + 0.5, 0.0, 1.0)


def segment_distance(hw, p0, p1) -> np.ndarray:
    """Distance from every pixel to the segment p0-p1."""
    xs, ys = pixel_grid(hw)
    px, py = xs - p0[0], ys - p0[1]
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    vv = vx * vx + vy * vy
    if vv == 0.0:
        return np.hypot(px, py)
    t = np.clip((px * vx + py * vy) / vv, 0.0, 1.0)
    return np.hypot(px - t * vx, py - t * vy)


def capsule_alpha(hw, p0, p1, halfwidth) -> np.ndarray:
    d = segment_distance(hw, p0, p1)
    return np.clip(halfwidth + 0.5 - d, 0.0, 1.0)


def convex_poly_alpha(hw, points) -> np.ndarray:
    """Filled convex polygon from (x, y) vertices, either winding."""
    xs, ys = pixel_grid(hw)
    pts = [(float(x), float(y)) for x, y in points]
    n = len(pts)
    area2 = sum(pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1]
                for i in range(n))
    orient = -1.0 if area2 > 0 else 1.0
    inside = np.full(hw, np.inf)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        norm = np.hypot(ex, ey)
        if norm == 0.0:
            continue
        sd = orient * ((xs - x0) * ey - (ys - y0) * ex) / norm
        inside = np.minimum(inside, sd)
    return np.clip(inside + 0.5, 0.0, 1.0)


def composite(img: np.ndarray, alpha: np.ndarray, color) -> None:
    """In-place alpha-composite of a flat color onto an (H,W,3) image."""
    a = alpha[..., None]
    img *= (1.0 - a)
    img += a * np.asarray(color, dtype=img.dtype)
