"""Boundary extraction, polar transform and vertex generation on binary masks.

Coordinates follow image conventions: ``x`` is the column, ``y`` is the row.
Angles are in degrees, measured from the +x axis toward +y (clockwise on
screen because rows grow downward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float


@dataclass(frozen=True)
class PolarPoint:
    r: float
    theta: float


@dataclass
class BoundaryMask:
    weights: np.ndarray  # blurred residual, float64, shape (H, W)
    support: np.ndarray  # bool, shape (H, W)

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


@dataclass
class AngularGrids:
    """Candidate boundary pixels per ray, in polar form.

    ``grids[k]`` is an ``(M_k, 2)`` array of ``(r, theta)`` rows. ``synthetic[k]``
    is True when grid ``k`` holds only the interpolated fallback candidate.
    """

    n_rays: int
    pole: Centroid
    grids: list
    synthetic: np.ndarray

    @property
    def delta_theta(self) -> float:
        return 360.0 / self.n_rays


@dataclass
class VertexSequence:
    points: np.ndarray  # (N, 2) as (x, y)
    pole: Centroid
    fallback: np.ndarray = field(default=None)  # (N,) bool, True where interpolated

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.fallback is None:
            self.fallback = np.zeros(len(self.points), dtype=bool)

    @property
    def n_rays(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------- morphology

def _shift_or(mask: np.ndarray) -> np.ndarray:
    """3x3 dilation with zero padding."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = np.zeros_like(mask)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def _shift_and(mask: np.ndarray) -> np.ndarray:
    """3x3 erosion; pixels outside the image count as background."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = np.ones_like(mask)
    for dy in range(3):
        for dx in range(3):
            out &= padded[dy:dy + h, dx:dx + w]
    return out


def dilate(mask: np.ndarray) -> np.ndarray:
    return _shift_or(np.asarray(mask, dtype=bool))


def erode(mask: np.ndarray) -> np.ndarray:
    return _shift_and(np.asarray(mask, dtype=bool))


def gaussian_kernel5(sigma: float = 1.0) -> np.ndarray:
    """Normalized 5x5 Gaussian kernel, accumulated in row-major order."""
    vals = [[math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) for dx in range(-2, 3)]
            for dy in range(-2, 3)]
    total = 0.0
    for row in vals:
        for v in row:
            total += v
    return np.array([[v / total for v in row] for row in vals], dtype=np.float64)


def _reflect_pad2(img: np.ndarray) -> np.ndarray:
    # half-sample symmetric: (b a | a b c ... | c b)
    return np.pad(img, 2, mode="symmetric")


def gaussian_blur5(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """5x5 Gaussian correlation with symmetric border reflection.

    Terms are summed in a fixed row-major kernel order so results are
    reproducible to the last bit.
    """
    img = np.asarray(img, dtype=np.float64)
    k = gaussian_kernel5(sigma)
    h, w = img.shape
    padded = _reflect_pad2(img)
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(5):
        for dx in range(5):
            out = out + k[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


def extract_boundary(mask: np.ndarray, sigma: float = 1.0) -> BoundaryMask:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GeometryError("empty mask")
    residual = dilate(mask) & ~erode(mask)
    weights = gaussian_blur5(residual.astype(np.float64), sigma)
    support = weights > 0.5 * weights.max()
    return BoundaryMask(weights=weights, support=support)


def centroid(mask: np.ndarray) -> Centroid:
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise GeometryError("empty mask")
    return Centroid(x=float(cols.mean()), y=float(rows.mean()))


# ---------------------------------------------------------------- polar

def to_polar(x, y, pole: Centroid):
    """Cartesian -> (r, theta in degrees within [0, 360)). Works on arrays."""
    dx = np.asarray(x, dtype=np.float64) - pole.x
    dy = np.asarray(y, dtype=np.float64) - pole.y
    r = np.hypot(dx, dy)
    theta = np.degrees(np.arctan2(dy, dx)) % 360.0
    theta = np.where(theta >= 360.0, 0.0, theta)
    if np.ndim(r) == 0:
        return float(r), float(theta)
    return r, theta


def from_polar(r, theta, pole: Centroid):
    t = np.radians(np.asarray(theta, dtype=np.float64))
    x = np.asarray(r, dtype=np.float64) * np.cos(t) + pole.x
    y = np.asarray(r, dtype=np.float64) * np.sin(t) + pole.y
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def to_polar_point(p, pole: Centroid) -> PolarPoint:
    r, t = to_polar(p[0], p[1], pole)
    return PolarPoint(r, t)


def from_polar_point(q: PolarPoint, pole: Centroid) -> tuple:
    return from_polar(q.r, q.theta, pole)


# ---------------------------------------------------------------- rays

def _check_rays(n_rays: int):
    if n_rays < 4:
        raise GeometryError("too few rays")


def _support_polar(boundary: BoundaryMask, pole: Centroid):
    rows, cols = np.nonzero(boundary.support)
    if rows.size == 0:
        raise GeometryError("empty boundary support")
    r, theta = to_polar(cols.astype(np.float64), rows.astype(np.float64), pole)
    return np.atleast_1d(r), np.atleast_1d(theta), rows, cols


def nearest_ray(theta, n_rays: int) -> np.ndarray:
    return np.rint(np.asarray(theta) / (360.0 / n_rays)).astype(np.int64) % n_rays


def _angular_gap(theta, target) -> np.ndarray:
    d = np.abs(np.asarray(theta) - target) % 360.0
    return np.minimum(d, 360.0 - d)


def _fallback_radii(ray_of: np.ndarray, r: np.ndarray, n_rays: int, empty: np.ndarray) -> np.ndarray:
    """Radius for each empty ray, interpolated between nearest nonempty rays."""
    counts = np.bincount(ray_of, minlength=n_rays)
    sums = np.bincount(ray_of, weights=r, minlength=n_rays)
    filled = np.flatnonzero(counts > 0)
    mean_r = np.zeros(n_rays)
    mean_r[filled] = sums[filled] / counts[filled]
    out = np.zeros(n_rays)
    for k in np.flatnonzero(empty):
        ahead = (filled - k) % n_rays
        behind = (k - filled) % n_rays
        j_next = filled[np.argmin(ahead)]
        j_prev = filled[np.argmin(behind)]
        d_next, d_prev = ahead.min(), behind.min()
        if j_next == j_prev:
            out[k] = mean_r[j_next]
        else:
            out[k] = (mean_r[j_prev] * d_next + mean_r[j_next] * d_prev) / (d_next + d_prev)
    return out


def build_angular_grids(boundary: BoundaryMask, pole: Centroid, n_rays: int) -> AngularGrids:
    _check_rays(n_rays)
    r, theta, _, _ = _support_polar(boundary, pole)
    ray_of = nearest_ray(theta, n_rays)
    grids = []
    empty = np.zeros(n_rays, dtype=bool)
    for k in range(n_rays):
        sel = (ray_of == k) | (ray_of == (k - 1) % n_rays) | (ray_of == (k + 1) % n_rays)
        grids.append(np.column_stack([r[sel], theta[sel]]))
        empty[k] = not sel.any()
    if empty.any():
        fill = _fallback_radii(ray_of, r, n_rays, empty)
        dt = 360.0 / n_rays
        for k in np.flatnonzero(empty):
            grids[k] = np.array([[fill[k], k * dt]])
    return AngularGrids(n_rays=n_rays, pole=pole, grids=grids, synthetic=empty)


def sample_vertices_train(grids: AngularGrids, rng: np.random.Generator) -> VertexSequence:
    picks = np.empty((grids.n_rays, 2))
    for k, g in enumerate(grids.grids):
        picks[k] = g[rng.integers(len(g))]
    x, y = from_polar(picks[:, 0], picks[:, 1], grids.pole)
    return VertexSequence(np.column_stack([x, y]), grids.pole, grids.synthetic.copy())


def generate_vertices_test(boundary: BoundaryMask, pole: Centroid, n_rays: int) -> VertexSequence:
    _check_rays(n_rays)
    r, theta, rows, cols = _support_polar(boundary, pole)
    ray_of = nearest_ray(theta, n_rays)
    dt = 360.0 / n_rays
    pts = np.empty((n_rays, 2))
    empty = np.zeros(n_rays, dtype=bool)
    for k in range(n_rays):
        sel = np.flatnonzero((ray_of == k) | (ray_of == (k - 1) % n_rays) | (ray_of == (k + 1) % n_rays))
        if sel.size == 0:
            empty[k] = True
            continue
        gap = _angular_gap(theta[sel], k * dt)
        # lexsort: last key is primary
        best = sel[np.lexsort((cols[sel], rows[sel], r[sel], gap))[0]]
        pts[k] = (cols[best], rows[best])
    if empty.any():
        fill = _fallback_radii(ray_of, r, n_rays, empty)
        for k in np.flatnonzero(empty):
            pts[k] = from_polar(fill[k], k * dt, pole)
    return VertexSequence(pts, pole, empty)


# ---------------------------------------------------------------- perturbation

def radial_field(n_harmonics: int, magnitude: float, rng: np.random.Generator):
    """Smooth periodic displacement function of angle with max |value| <= magnitude."""
    amps = rng.normal(size=n_harmonics) / np.arange(1, n_harmonics + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harmonics)
    probe = np.radians(np.arange(0.0, 360.0, 0.25))
    raw = np.sum(amps[:, None] * np.cos(np.arange(1, n_harmonics + 1)[:, None] * probe + phases[:, None]), axis=0)
    peak = np.abs(raw).max()
    # dense-grid peak can undershoot the true max slightly; keep 1% headroom
    scale = 0.0 if peak == 0 else 0.99 * magnitude / peak

    def field(theta_deg):
        t = np.radians(np.asarray(theta_deg, dtype=np.float64))
        k = np.arange(1, n_harmonics + 1)
        vals = np.sum(amps[:, None] * np.cos(k[:, None] * t.ravel()[None, :] + phases[:, None]), axis=0)
        return (scale * vals).reshape(t.shape)

    return field


def perturb_mask(mask: np.ndarray, magnitude: float, rng: np.random.Generator, n_harmonics: int = 4) -> np.ndarray:
    """Move the boundary radially about the centroid by a smooth field bounded by ``magnitude``.

    Each output pixel at polar ``(rho, phi)`` copies the input at
    ``(rho - d(phi), phi)`` (bilinear, thresholded at 0.5), so a star-convex
    input stays star-convex.
    """
    mask = np.asarray(mask, dtype=bool)
    if magnitude < 0:
        raise GeometryError("negative perturbation magnitude")
    if magnitude == 0:
        return mask.copy()
    pole = centroid(mask)
    field = radial_field(n_harmonics, magnitude, rng)
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rho, phi = to_polar(xx, yy, pole)
    src_r = np.maximum(rho - field(phi), 0.0)
    sx, sy = from_polar(src_r, phi, pole)
    vals = _bilinear_scalar(mask.astype(np.float64), sx, sy)
    out = vals >= 0.5
    return out


def _bilinear_scalar(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2)
    fx = xc - x0
    fy = yc - y0
    v = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x0 + 1] * fx * (1 - fy)
         + img[y0 + 1, x0] * (1 - fx) * fy + img[y0 + 1, x0 + 1] * fx * fy)
    return np.where(inside, v, 0.0)
