"""Fixed multi-scale featurizer, coordinate map and per-vertex feature sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SCALES = (4, 8, 16, 32)  # downsampling factors for 1/4 .. 1/32
CHANNEL_NAMES = (
    "intensity", "grad_x", "grad_y", "grad_mag",
    "local_mean", "local_std", "laplacian", "signed_dist",
)
N_BASE_CHANNELS = len(CHANNEL_NAMES)


class FeatureError(ValueError):
    pass


@dataclass
class FeaturePyramid:
    levels: list  # one (h, w, c) array per entry of SCALES
    factors: tuple = SCALES

    @property
    def channels(self) -> int:
        return self.levels[0].shape[2]


@dataclass
class FeatureGrid:
    values: np.ndarray  # (H/4, W/4, C + 2), coordinate channels last

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def split(self):
        return self.values[..., :-2], self.values[..., -2:]


def area_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape
    oh, ow = h // factor, w // factor
    if oh < 1 or ow < 1:
        raise FeatureError(f"image {h}x{w} too small for factor {factor}")
    crop = img[:oh * factor, :ow * factor]
    return crop.reshape(oh, factor, ow, factor).mean(axis=(1, 3))


def signed_distance(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance to the mask boundary, negative inside."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        return np.zeros(mask.shape)
    outside = ndimage.distance_transform_edt(~mask)
    inside = ndimage.distance_transform_edt(mask)
    return np.where(mask, -inside, outside)


def _local_std(img: np.ndarray) -> np.ndarray:
    mean = ndimage.uniform_filter(img, size=3, mode="nearest")
    padded = np.pad(img, 1, mode="edge")
    h, w = img.shape
    acc = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            acc += (padded[dy:dy + h, dx:dx + w] - mean) ** 2
    return np.sqrt(acc / 9.0)


def base_channels(img: np.ndarray, sdist: np.ndarray) -> np.ndarray:
    """The 8 handcrafted channels on one raster, stacked last."""
    gx = ndimage.correlate1d(img, [-0.5, 0.0, 0.5], axis=1, mode="nearest")
    gy = ndimage.correlate1d(img, [-0.5, 0.0, 0.5], axis=0, mode="nearest")
    return np.stack([
        img,
        gx,
        gy,
        np.hypot(gx, gy),
        ndimage.uniform_filter(img, size=3, mode="nearest"),
        _local_std(img),
        ndimage.laplace(img, mode="nearest"),
        sdist,
    ], axis=-1)


def build_pyramid(image: np.ndarray, mask: np.ndarray) -> FeaturePyramid:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise FeatureError(f"image {image.shape} and mask {mask.shape} differ")
    sd = signed_distance(mask) / max(image.shape)
    levels = []
    for f in SCALES:
        levels.append(base_channels(area_downsample(image, f), area_downsample(sd, f)))
    return FeaturePyramid(levels)


def upsample_bilinear(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Cell-centre aligned bilinear resize of an (h, w, c) raster, edges clamped."""
    h, w = raster.shape[:2]

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = raster[y0][:, x0] * (1 - fx) + raster[y0][:, x1] * fx
    bot = raster[y1][:, x0] * (1 - fx) + raster[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def merge_pyramid(pyr: FeaturePyramid, pyramid: bool = True) -> np.ndarray:
    """Resize every level to the 1/4 raster and concatenate fine to coarse.

    With ``pyramid=False`` the coarse levels are replaced by zeros, which keeps
    the channel count (and hence checkpoint shapes) unchanged.
    """
    base = pyr.levels[0]
    oh, ow = base.shape[:2]
    parts = [base]
    for lvl in pyr.levels[1:]:
        if pyramid:
            parts.append(upsample_bilinear(lvl, oh, ow))
        else:
            parts.append(np.zeros((oh, ow, lvl.shape[2])))
    return np.concatenate(parts, axis=-1)


def coord_map(height: int, width: int) -> np.ndarray:
    if height < 2 or width < 2:
        raise FeatureError("coordinate map needs at least 2x2 cells")
    xs = -1.0 + 2.0 * np.arange(width) / (width - 1)
    ys = -1.0 + 2.0 * np.arange(height) / (height - 1)
    out = np.empty((height, width, 2))
    out[..., 0] = xs[None, :]
    out[..., 1] = ys[:, None]
    return out


def assemble_grid(merged: np.ndarray, coords: np.ndarray) -> FeatureGrid:
    if merged.shape[:2] != coords.shape[:2]:
        raise FeatureError(f"spatial dims differ: {merged.shape[:2]} vs {coords.shape[:2]}")
    return FeatureGrid(np.concatenate([merged, coords], axis=-1))


def feature_grid(image, mask, pyramid: bool = True, coordpos: bool = True) -> FeatureGrid:
    """Convenience: pyramid -> merge -> coordinate map -> grid."""
    merged = merge_pyramid(build_pyramid(image, mask), pyramid=pyramid)
    coords = coord_map(*merged.shape[:2])
    if not coordpos:
        coords = np.zeros_like(coords)
    return assemble_grid(merged, coords)


def zero_disabled(values: np.ndarray, pyramid: bool = True, coordpos: bool = True) -> np.ndarray:
    """Zero the coarse-level and/or coordinate channels of a (..., D) array."""
    out = np.array(values, dtype=np.float64)
    if not pyramid:
        out[..., N_BASE_CHANNELS:-2] = 0.0
    if not coordpos:
        out[..., -2:] = 0.0
    return out


def bilinear_sample(grid: FeatureGrid, points) -> np.ndarray:
    """Sample the grid at full-resolution (x, y) points; returns (M, D) or (D,)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    v = grid.values
    h, w = v.shape[:2]
    gx = np.clip(pts[:, 0] / 4.0, 0.0, w - 1)
    gy = np.clip(pts[:, 1] / 4.0, 0.0, h - 1)
    x0 = np.minimum(np.floor(gx).astype(int), w - 2)
    y0 = np.minimum(np.floor(gy).astype(int), h - 2)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    out = (v[y0, x0] * (1 - fx) * (1 - fy) + v[y0, x0 + 1] * fx * (1 - fy)
           + v[y0 + 1, x0] * (1 - fx) * fy + v[y0 + 1, x0 + 1] * fx * fy)
    return out[0] if single else out


def sequence_features(grid: FeatureGrid, vertices) -> np.ndarray:
    pts = getattr(vertices, "points", vertices)
    return bilinear_sample(grid, np.asarray(pts).reshape(-1, 2))
