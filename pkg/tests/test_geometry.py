import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tumorbound import geometry as g
from conftest import random_mask, star_blob


# ---------------------------------------------------------------- oracles

def oracle_boundary_residual(mask):
    """Dilation minus erosion by explicit pixel-set algebra."""
    h, w = mask.shape
    fg = {(y, x) for y in range(h) for x in range(w) if mask[y, x]}
    nbhd = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            hits = [(y + dy, x + dx) in fg for dy, dx in nbhd]
            out[y, x] = any(hits) and not all(hits)
    return out


def oracle_blur(img):
    """Direct 5x5 correlation with symmetric reflection, row-major accumulation."""
    h, w = img.shape
    raw = [[math.exp(-(dx * dx + dy * dy) / 2.0) for dx in range(-2, 3)] for dy in range(-2, 3)]
    total = 0.0
    for row in raw:
        for v in row:
            total += v
    k = [[v / total for v in row] for row in raw]

    def refl(i, n):
        if i < 0:
            return -i - 1
        if i >= n:
            return 2 * n - i - 1
        return i

    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for a in range(5):
                for b in range(5):
                    acc = acc + k[a][b] * float(img[refl(y + a - 2, h), refl(x + b - 2, w)])
            out[y, x] = acc
    return out


def oracle_test_vertex(support, pole, n, k):
    dt = 360.0 / n
    cands = []
    for y, x in zip(*np.nonzero(support)):
        dx, dy = x - pole.x, y - pole.y
        theta = math.degrees(math.atan2(dy, dx)) % 360.0
        ray = round(theta / dt) % n
        if ray in ((k - 1) % n, k, (k + 1) % n):
            gap = abs(theta - k * dt) % 360.0
            gap = min(gap, 360.0 - gap)
            cands.append((gap, math.hypot(dx, dy), y, x))
    if not cands:
        return None
    _, _, y, x = min(cands)
    return (x, y)


# ---------------------------------------------------------------- morphology

def test_boundary_matches_set_algebra_and_direct_blur():
    rng = np.random.default_rng(11)
    for _ in range(6):
        mask = random_mask(rng, 32)
        b = g.extract_boundary(mask)
        resid = oracle_boundary_residual(mask)
        assert np.array_equal(g.dilate(mask) & ~g.erode(mask), resid)
        w = oracle_blur(resid.astype(float))
        assert np.array_equal(b.weights, w)
        assert np.array_equal(b.support, w > 0.5 * w.max())


def test_kernel_normalised_and_symmetric():
    k = g.gaussian_kernel5(1.0)
    assert k.shape == (5, 5)
    assert abs(k.sum() - 1.0) < 1e-15
    assert np.allclose(k, k.T) and np.allclose(k, k[::-1, ::-1])
    assert k[2, 2] == k.max()


def test_blur_preserves_constant_image():
    img = np.full((9, 7), 0.3)
    assert np.allclose(g.gaussian_blur5(img), 0.3, atol=1e-15)


def test_erosion_treats_outside_as_background():
    full = np.ones((5, 5), dtype=bool)
    er = g.erode(full)
    assert er[1:-1, 1:-1].all()
    assert not er[0].any() and not er[:, 0].any()
    assert g.dilate(full).all()


def test_single_pixel_boundary_is_its_neighbourhood():
    mask = np.zeros((9, 9), dtype=bool)
    mask[4, 4] = True
    resid = g.dilate(mask) & ~g.erode(mask)
    assert resid.sum() == 9 and resid[3:6, 3:6].all()
    b = g.extract_boundary(mask)
    assert b.support[4, 4]


def test_empty_mask_raises():
    with pytest.raises(g.GeometryError, match="empty mask"):
        g.extract_boundary(np.zeros((8, 8), dtype=bool))
    with pytest.raises(g.GeometryError, match="empty mask"):
        g.centroid(np.zeros((8, 8), dtype=bool))


def test_boundary_support_hugs_the_edge():
    mask = star_blob(48, 14.0)
    b = g.extract_boundary(mask)
    sd_in = ~g.erode(mask) & mask
    # every support pixel lies within two pixels of the mask edge
    from scipy import ndimage
    dist = ndimage.distance_transform_edt(~sd_in)
    assert dist[b.support].max() <= 2.0


# ---------------------------------------------------------------- polar

@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-50, 50), st.floats(-50, 50))
def test_polar_round_trip(x, y, px, py):
    pole = g.Centroid(px, py)
    r, t = g.to_polar(x, y, pole)
    assert r >= 0 and 0.0 <= t < 360.0
    xb, yb = g.from_polar(r, t, pole)
    assert abs(xb - x) <= 1e-9 * max(1.0, abs(x)) and abs(yb - y) <= 1e-9 * max(1.0, abs(y))


def test_polar_angle_convention():
    pole = g.Centroid(0.0, 0.0)
    assert g.to_polar(1.0, 0.0, pole) == (1.0, 0.0)
    r, t = g.to_polar(0.0, 2.0, pole)  # +y is a quarter turn
    assert r == 2.0 and abs(t - 90.0) < 1e-12
    _, t = g.to_polar(-1.0, -1e-300, pole)
    assert 0.0 <= t < 360.0
    q = g.to_polar_point((3.0, 4.0), pole)
    assert q.r == 5.0
    assert np.allclose(g.from_polar_point(q, pole), (3.0, 4.0))


def test_polar_arrays():
    pole = g.Centroid(1.5, -2.0)
    xs = np.linspace(-5, 5, 11)
    r, t = g.to_polar(xs, xs[::-1], pole)
    x2, y2 = g.from_polar(r, t, pole)
    assert np.allclose(x2, xs, atol=1e-12) and np.allclose(y2, xs[::-1], atol=1e-12)


# ---------------------------------------------------------------- rays

def test_too_few_rays():
    b = g.extract_boundary(star_blob(32, 10.0))
    pole = g.Centroid(15.5, 15.5)
    with pytest.raises(g.GeometryError, match="too few rays"):
        g.build_angular_grids(b, pole, 3)
    with pytest.raises(g.GeometryError, match="too few rays"):
        g.generate_vertices_test(b, pole, 2)


@pytest.mark.parametrize("n", [4, 30, 90])
def test_grids_hold_pixels_of_adjacent_rays(n):
    mask = star_blob(64, 18.0, wobble=0.1)
    b = g.extract_boundary(mask)
    pole = g.centroid(mask)
    grids = g.build_angular_grids(b, pole, n)
    assert len(grids.grids) == n and not grids.synthetic.any()
    rows, cols = np.nonzero(b.support)
    r, t = g.to_polar(cols.astype(float), rows.astype(float), pole)
    ray = np.rint(t / (360.0 / n)).astype(int) % n
    for k in range(n):
        sel = np.isin(ray, [(k - 1) % n, k, (k + 1) % n])
        got = sorted(map(tuple, np.round(grids.grids[k], 12)))
        want = sorted(zip(np.round(r[sel], 12), np.round(t[sel], 12)))
        assert got == want


@pytest.mark.parametrize("n", [8, 30, 90])
def test_test_vertices_match_brute_force(n):
    mask = star_blob(40, 12.0, cx=19.3, cy=20.1, wobble=0.12, phase=0.4)
    b = g.extract_boundary(mask)
    pole = g.centroid(mask)
    vs = g.generate_vertices_test(b, pole, n)
    assert vs.points.shape == (n, 2)
    for k in range(n):
        assert tuple(vs.points[k]) == oracle_test_vertex(b.support, pole, n, k)


def test_test_vertex_ties_prefer_smaller_radius_then_row():
    support = np.zeros((11, 11), dtype=bool)
    # ray 0 points along +x from the pole at (5, 5); two pixels on it
    support[5, 7] = support[5, 9] = True
    # ray at 90 degrees (+y): two equal-gap candidates at the same radius
    support[8, 4] = support[8, 6] = True
    b = g.BoundaryMask(support.astype(float), support)
    vs = g.generate_vertices_test(b, g.Centroid(5.0, 5.0), 4)
    assert tuple(vs.points[0]) == (7.0, 5.0)
    # (4, 8) and (6, 8) are equally far in angle and radius; same row, so smaller column
    assert tuple(vs.points[1]) == (4.0, 8.0)


def half_ring_boundary(n_size=41, radius=12.0):
    yy, xx = np.mgrid[0:n_size, 0:n_size].astype(float)
    c = (n_size - 1) / 2.0
    rr = np.hypot(xx - c, yy - c)
    support = (np.abs(rr - radius) < 0.7) & (yy <= c)  # upper half only (angles 180..360)
    return g.BoundaryMask(support.astype(float), support), g.Centroid(c, c)


def test_empty_grids_get_interpolated_fallback():
    b, pole = half_ring_boundary()
    n = 36
    grids = g.build_angular_grids(b, pole, n)
    vs = g.generate_vertices_test(b, pole, n)
    assert grids.synthetic.any() and np.array_equal(grids.synthetic, vs.fallback)
    for k in np.flatnonzero(grids.synthetic):
        r, t = grids.grids[k][0]
        assert len(grids.grids[k]) == 1
        assert t == k * 10.0
        assert 11.0 < r < 13.0  # interpolated between rays on the ring
        x, y = vs.points[k]
        assert np.isclose(math.hypot(x - pole.x, y - pole.y), r)
    assert not grids.synthetic[27]  # 270 degrees is on the ring


def test_fallback_interpolates_linearly_in_ray_index():
    ray_of = np.array([0, 4])
    r = np.array([10.0, 14.0])
    empty = np.array([False, True, True, True, False, True, True, True])
    out = g._fallback_radii(ray_of, r, 8, empty)
    assert np.allclose(out[1:4], [11.0, 12.0, 13.0])
    assert np.allclose(out[5:8], [13.0, 12.0, 11.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 120))
def test_train_vertices_come_from_their_grid(seed, n):
    mask = star_blob(48, 15.0, wobble=0.1)
    b = g.extract_boundary(mask)
    pole = g.centroid(mask)
    grids = g.build_angular_grids(b, pole, n)
    vs = g.sample_vertices_train(grids, np.random.default_rng(seed))
    assert vs.points.shape == (n, 2)
    for k in range(n):
        r, t = g.to_polar(*vs.points[k], pole)
        cand = grids.grids[k]
        assert np.min(np.hypot(cand[:, 0] - r, (cand[:, 1] - t + 180.0) % 360.0 - 180.0)) < 1e-6
    again = g.sample_vertices_train(grids, np.random.default_rng(seed))
    assert np.array_equal(vs.points, again.points)


def test_train_sampling_covers_every_candidate():
    mask = star_blob(48, 15.0)
    b = g.extract_boundary(mask)
    grids = g.build_angular_grids(b, g.centroid(mask), 30)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(400):
        p = g.sample_vertices_train(grids, rng).points[0]
        seen.add((round(p[0], 6), round(p[1], 6)))
    assert len(seen) == len(grids.grids[0])


# ---------------------------------------------------------------- perturbation

def test_zero_perturbation_is_identity():
    mask = star_blob(64, 18.0)
    out = g.perturb_mask(mask, 0.0, np.random.default_rng(0))
    assert np.array_equal(out, mask) and out is not mask
    with pytest.raises(g.GeometryError):
        g.perturb_mask(mask, -1.0, np.random.default_rng(0))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 5.0), st.integers(0, 2**31))
def test_radial_field_bounded(mag, seed):
    f = g.radial_field(4, mag, np.random.default_rng(seed))
    vals = f(np.linspace(0, 360, 3601))
    assert np.abs(vals).max() <= mag + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 2.0), st.integers(0, 2**31))
def test_perturbed_radius_moves_by_at_most_the_magnitude(mag, seed):
    mask = star_blob(64, 18.0, wobble=0.08)
    out = g.perturb_mask(mask, mag, np.random.default_rng(seed))
    pole = g.centroid(mask)
    assert out.any()
    # compare the outline radius along 180 rays, sampled at 0.05 px
    ts = np.radians(np.arange(0, 360, 2.0))
    steps = np.arange(0, 31, 0.05)

    def outline(m):
        xs = pole.x + steps[None, :] * np.cos(ts)[:, None]
        ys = pole.y + steps[None, :] * np.sin(ts)[:, None]
        inside = m[np.clip(np.rint(ys).astype(int), 0, 63), np.clip(np.rint(xs).astype(int), 0, 63)]
        return np.array([steps[np.flatnonzero(row)[-1]] for row in inside])

    # pixel rounding on both masks adds up to one pixel diagonal each way
    assert np.abs(outline(out) - outline(mask)).max() <= mag + 1.5
