"""Synthetic tumour slices with angular boundary-class bands and patient MVI labels.

Each slice is a star-convex blob. A boundary segment is either intact
(class 0: continuous bright rim) or disrupted (broken, fainter rim over a
darker band 6..16 px inside the tumour; class 1 has narrow gaps, class 2
wider and dimmer ones). Disrupted segments are mostly class 1 or class 2
depending on where they sit in the image frame: with the default split lines
through the image centre, class 2 occupies the top-right and bottom-left
quadrants. Telling the two apart is far easier with absolute position than
from rim texture alone, while telling intact from disrupted needs both the
fine rim and the coarser interior band.

Classes are stored 0-based; rendered reports show them as 1..3.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Centroid, centroid

N_CLASSES = 3


@dataclass
class PhantomConfig:
    image_size: int = 64
    n_vertices: int = 90
    # only 1 - p0 is used: the mean fraction of disrupted bands; the 1/2 split
    # follows the position rule below
    class_priors: tuple = (0.70, 0.15, 0.15)
    band_count_range: tuple = (3, 8)
    radius_base: float = 17.0
    radius_jitter: float = 3.0
    radius_harmonics: int = 3
    harmonic_amplitude: float = 0.06
    noise_sigma: float = 0.10
    mvi_threshold: float = 0.30
    mvi_flip_prob: float = 0.05
    seed: int = 0
    # patient severity: non-class-0 mass is (1 - p0) * (1 -/+ spread), half the patients each
    severity_spread: float = 0.7
    # disrupted boundary is class 2 where an odd number of split lines (fractions
    # of image_size) lie at or before the point, counting rows and columns, and
    # class 1 elsewhere; each piece keeps that rule with probability
    # split_purity and takes the other class otherwise
    split_purity: float = 0.95
    split_rows: tuple = (0.5,)
    split_cols: tuple = (0.5,)
    # tumour centre offset from the image centre, per axis (px)
    centre_jitter: float = 8.0
    rim_width: float = 4.0
    rim_contrast: float = 0.5
    # darkening 6..16 px inside disrupted segments
    sector_contrast: float = 0.10
    # smooth intensity inhomogeneity: a linear ramp in a random direction with
    # slope uniform in [0, inhomogeneity] per pixel
    inhomogeneity: float = 0.01

    def __post_init__(self):
        self.image_size = max(32, int(self.image_size))
        self.n_vertices = max(4, int(self.n_vertices))
        p = np.clip(np.asarray(self.class_priors, dtype=np.float64), 0.0, None)
        if p.size != N_CLASSES or p.sum() <= 0:
            p = np.array([0.70, 0.15, 0.15])
        self.class_priors = tuple(float(v) for v in p / p.sum())
        lo, hi = (int(v) for v in self.band_count_range)
        lo = max(1, lo)
        self.band_count_range = (lo, max(lo, hi))
        self.radius_harmonics = max(0, int(self.radius_harmonics))
        # keep sum_j a_j * j^2 < 1 so the outline stays convex, hence star-convex
        # from any interior point (including the centroid)
        if self.radius_harmonics:
            cap = 0.9 / sum(j * j for j in range(2, self.radius_harmonics + 2))
            self.harmonic_amplitude = float(min(max(self.harmonic_amplitude, 0.0), cap))
        half = self.image_size / 2.0
        self.radius_base = float(min(max(self.radius_base, 4.0), 0.6 * half))
        self.radius_jitter = float(min(max(self.radius_jitter, 0.0), self.radius_base - 3.0))
        self.noise_sigma = max(0.0, float(self.noise_sigma))
        self.mvi_flip_prob = min(max(float(self.mvi_flip_prob), 0.0), 1.0)
        self.severity_spread = min(max(float(self.severity_spread), 0.0), 1.0)
        self.split_purity = min(max(float(self.split_purity), 0.5), 1.0)
        self.inhomogeneity = max(0.0, float(self.inhomogeneity))
        self.split_rows = tuple(sorted(min(max(float(v), 0.0), 1.0) for v in self.split_rows))
        self.split_cols = tuple(sorted(min(max(float(v), 0.0), 1.0) for v in self.split_cols))
        # largest outline radius plus 2 px of background must fit inside the image
        reach = (self.radius_base + self.radius_jitter) * (1.0 + self.radius_harmonics * self.harmonic_amplitude)
        self.centre_jitter = float(min(max(self.centre_jitter, 0.0), max(half - 2.0 - reach, 0.0)))
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_priors"] = list(self.class_priors)
        d["band_count_range"] = list(self.band_count_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class AngleLabels:
    """Piecewise-constant class table over [0, 360): band ``i`` starts at ``starts[i]``."""

    starts: tuple
    classes: tuple

    def __call__(self, theta):
        t = np.asarray(theta, dtype=np.float64) % 360.0
        idx = np.searchsorted(np.asarray(self.starts), t, side="right") - 1
        # angles before the first start wrap to the last band
        out = np.asarray(self.classes)[idx % len(self.classes)]
        return int(out) if out.ndim == 0 else out

    def sequence(self, n_rays: int) -> np.ndarray:
        return np.asarray(self(np.arange(n_rays) * (360.0 / n_rays)), dtype=np.int64)

    def to_list(self):
        return [[float(s), int(c)] for s, c in zip(self.starts, self.classes)]

    @classmethod
    def from_list(cls, rows):
        return cls(tuple(float(r[0]) for r in rows), tuple(int(r[1]) for r in rows))


@dataclass
class PhantomSlice:
    image: np.ndarray  # float32 (H, W)
    mask: np.ndarray  # bool (H, W)
    gt_angle_labels: AngleLabels
    gt_label_sequence: np.ndarray  # int64 (N,)
    patient_id: str
    slice_index: int
    pole: Centroid = field(default=None)

    def __post_init__(self):
        if self.pole is None:
            self.pole = centroid(self.mask)

    def labels_for(self, n_rays: int) -> np.ndarray:
        return self.gt_angle_labels.sequence(n_rays)


@dataclass
class PatientRecord:
    patient_id: str
    slices: list
    mvi_label: int
    patient_seed: int = 0


def patient_id_for(patient_seed: int) -> str:
    return f"P{patient_seed:04d}"


def _patient_rng(cfg: PhantomConfig, patient_seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, int(patient_seed) & 0xFFFFFFFFFFFFFFFF, 0]))


def _slice_rng(cfg: PhantomConfig, patient_seed: int, slice_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, int(patient_seed) & 0xFFFFFFFFFFFFFFFF, 1, int(slice_index)]))


def patient_severity(cfg: PhantomConfig, patient_seed: int) -> float:
    """Probability mass of the non-continuous classes for this patient."""
    rng = _patient_rng(cfg, patient_seed)
    q = 1.0 - cfg.class_priors[0]
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return q * (1.0 + sign * cfg.severity_spread)


def split_class(cfg: PhantomConfig, col, row) -> np.ndarray:
    """Class (1 or 2) of a disrupted segment at image position (col, row) under the split rule.

    Class 2 where the total number of split lines at or before the point is odd.
    """
    rows = np.asarray(cfg.split_rows) * cfg.image_size
    cols = np.asarray(cfg.split_cols) * cfg.image_size
    passed = (np.searchsorted(rows, np.asarray(row, dtype=np.float64), side="right")
              + np.searchsorted(cols, np.asarray(col, dtype=np.float64), side="right"))
    return np.where(passed % 2 == 1, 2, 1)


# angular resolution at which band edges are placed (degrees)
BAND_STEP = 0.5


def _runs_to_labels(cls: np.ndarray) -> AngleLabels:
    """Compress a label per BAND_STEP sample into a circular run table."""
    change = np.flatnonzero(cls != np.roll(cls, 1))
    if change.size == 0:
        return AngleLabels((0.0,), (int(cls[0]),))
    return AngleLabels(tuple(float(i * BAND_STEP) for i in change), tuple(int(cls[i]) for i in change))


def _draw_bands(cfg: PhantomConfig, severity: float, rng: np.random.Generator, point_at) -> AngleLabels:
    """Contiguous bands, each disrupted with probability ``severity``.

    Disrupted bands are cut where the split rule changes; each piece then
    draws its class from the rule. ``point_at(theta_deg)`` maps angles to
    image (col, row) positions on the outline.
    """
    lo, hi = cfg.band_count_range
    n = int(rng.integers(lo, hi + 1))
    widths = rng.dirichlet(np.full(n, 3.0)) * 360.0
    offset = rng.uniform(0.0, 360.0)
    starts = np.sort((offset + np.concatenate([[0.0], np.cumsum(widths)[:-1]])) % 360.0)
    disrupted = rng.random(n) < min(max(severity, 0.0), 1.0)

    theta = np.arange(int(round(360.0 / BAND_STEP))) * BAND_STEP
    band = (np.searchsorted(starts, theta, side="right") - 1) % n
    rule = split_class(cfg, *point_at(theta))
    key = band * 3 + rule
    piece = np.cumsum(key != np.roll(key, 1))
    if key[0] == key[-1]:
        # the run crossing 0 degrees is one piece
        piece[piece == piece[-1]] = piece[0]
    keep = rng.random(int(piece.max()) + 1) < cfg.split_purity
    sub = np.where(keep[piece], rule, 3 - rule)
    return _runs_to_labels(np.where(disrupted[band], sub, 0))


# arc-length period of the rim pattern (px)
RIM_PERIOD = 8.0
# interior shading sign per class, applied 6..16 px inside the boundary
SECTOR_SIGN = (0.0, -1.0, -1.0)
# disrupted rims go dark for GAP_LENGTH[c] px of every RIM_PERIOD and sit at
# BROKEN_LEVEL[c] otherwise: class 1 has narrower gaps, class 2 wider and dimmer
GAP_LENGTH = (0.0, 3.0, 4.0)
BROKEN_LEVEL = (1.0, 0.5, 0.4)
SECTOR_DEPTH = (6.0, 16.0)


def rim_amplitude(cls: np.ndarray, arc: np.ndarray) -> np.ndarray:
    """Rim brightness multiplier as a function of class and arc length (px)."""
    cls = np.asarray(cls)
    gap = np.asarray(GAP_LENGTH)[cls]
    return np.where(np.mod(arc, RIM_PERIOD) < gap, 0.0, np.asarray(BROKEN_LEVEL)[cls])


def sector_profile(depth: np.ndarray) -> np.ndarray:
    lo, hi = SECTOR_DEPTH
    return np.clip((depth - lo + 1.0) / 2.0, 0.0, 1.0) * np.clip((hi - depth + 1.0) / 2.0, 0.0, 1.0)


def generate_slice(cfg: PhantomConfig, patient_seed: int, slice_index: int) -> PhantomSlice:
    n = cfg.image_size
    severity = patient_severity(cfg, patient_seed)
    rng = _slice_rng(cfg, patient_seed, slice_index)

    c0 = n / 2.0 - 0.5 + rng.uniform(-cfg.centre_jitter, cfg.centre_jitter, size=2)
    r0 = cfg.radius_base + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter)
    js = np.arange(2, cfg.radius_harmonics + 2)
    amps = rng.uniform(0.0, cfg.harmonic_amplitude, size=js.size)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=js.size)

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    dx, dy = xx - c0[0], yy - c0[1]
    rho = np.hypot(dx, dy)
    psi = np.arctan2(dy, dx)
    radius = r0 * (1.0 + np.sum(amps[:, None, None] * np.cos(js[:, None, None] * psi + phases[:, None, None]), axis=0))
    mask = rho <= radius

    pole = centroid(mask)

    def point_at(theta_deg):
        t = np.radians(np.asarray(theta_deg, dtype=np.float64))[..., None]
        r = r0 * (1.0 + np.sum(amps * np.cos(js * t + phases), axis=-1))
        return c0[0] + r * np.cos(t[..., 0]), c0[1] + r * np.sin(t[..., 0])

    labels = _draw_bands(cfg, severity, rng, point_at)

    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    sd = np.where(mask, -inside, outside)
    half = cfg.rim_width / 2.0
    profile = np.clip(1.0 - np.abs(sd + half) / (half + 0.5), 0.0, 1.0)

    phi = np.degrees(np.arctan2(yy - pole.y, xx - pole.x)) % 360.0
    cls = labels(phi)
    arc = np.radians(phi) * r0
    rim = rim_amplitude(cls, arc) * profile
    sector = cfg.sector_contrast * np.asarray(SECTOR_SIGN)[cls] * sector_profile(inside)

    background = 0.25 + rng.uniform(-0.03, 0.03)
    tumour = 0.45 + rng.uniform(-0.03, 0.03)
    slope = rng.uniform(0.0, cfg.inhomogeneity)
    ramp_dir = rng.uniform(0.0, 2.0 * np.pi)
    ramp = slope * ((xx - (n - 1) / 2.0) * np.cos(ramp_dir) + (yy - (n - 1) / 2.0) * np.sin(ramp_dir))
    image = np.where(mask, tumour, background) + cfg.rim_contrast * rim + sector + ramp
    image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)

    return PhantomSlice(
        image=image.astype(np.float32),
        mask=mask,
        gt_angle_labels=labels,
        gt_label_sequence=labels.sequence(cfg.n_vertices),
        patient_id=patient_id_for(patient_seed),
        slice_index=int(slice_index),
        pole=pole,
    )


def minority_ratio(slices, n_rays: int | None = None) -> float:
    """Fraction of boundary vertices in classes 1 and 2 pooled over slices."""
    seqs = [s.gt_label_sequence if n_rays is None else s.labels_for(n_rays) for s in slices]
    allv = np.concatenate(seqs)
    return float(np.mean(allv != 0))


def generate_patient(cfg: PhantomConfig, patient_seed: int, n_slices: int) -> PatientRecord:
    slices = [generate_slice(cfg, patient_seed, i) for i in range(n_slices)]
    label = int(minority_ratio(slices) > cfg.mvi_threshold)
    flip_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(patient_seed), 2]))
    if flip_rng.random() < cfg.mvi_flip_prob:
        label = 1 - label
    return PatientRecord(patient_id_for(patient_seed), slices, label, int(patient_seed))


def generate_cohort(cfg: PhantomConfig, n_patients: int, slices_per_patient=(3, 8), counts=None) -> list:
    """Patients ``0..n_patients-1``.

    Slice counts are drawn per patient from the inclusive ``slices_per_patient``
    interval unless ``counts`` gives them explicitly.
    """
    if n_patients < 1:
        raise ValueError("need at least one patient")
    if counts is None:
        lo, hi = (int(v) for v in slices_per_patient)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        counts = [int(c) for c in rng.integers(max(lo, 1), max(hi, lo, 1) + 1, size=n_patients)]
    elif len(counts) != n_patients:
        raise ValueError("per-patient slice counts do not match n_patients")
    return [generate_patient(cfg, p, int(c)) for p, c in enumerate(counts) if c > 0]
