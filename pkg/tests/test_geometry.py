import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layered_enclosure.errors import ConfigurationError, PreconditionError
from layered_enclosure.geometry import (
    LayeredMedium,
    ObstacleSpec,
    SourceBall,
    enclosure_region,
    in_enclosure,
    hessian_closed_form,
    lower_eigenvalue_bound,
    naive_eigenvalue_bound,
    optical_distance,
    optical_distance_many,
    optical_distance_sets,
    path_length,
    snell_point,
)
from layered_enclosure.oracle import brute_force_snell, fd_hessian

coord = st.floats(-3.0, 3.0)
depth = st.floats(0.05, 3.0)


@st.composite
def media(draw):
    gp = draw(st.floats(0.2, 3.0))
    return LayeredMedium(gp, gp * draw(st.floats(1.01, 6.0)))


@st.composite
def pairs(draw):
    x = np.array([draw(coord), draw(coord), -draw(depth)])
    y = np.array([draw(coord), draw(coord), draw(depth)])
    return x, y


# medium and shapes


def test_medium_rejects_faster_upper_layer():
    with pytest.raises(PreconditionError):
        LayeredMedium(2.0, 1.0)
    with pytest.raises(PreconditionError):
        LayeredMedium(0.0, 1.0)


def test_medium_ratio():
    m = LayeredMedium(1.0, 4.0)
    assert m.a0 == pytest.approx(2.0)
    assert m.is_refracting and not LayeredMedium(2.0, 2.0).is_refracting


def test_source_ball_must_sit_in_upper_layer():
    with pytest.raises(PreconditionError):
        SourceBall((0, 0, 0.2), 0.3)
    with pytest.raises(PreconditionError):
        SourceBall((0, 0, 1.0), 0.3, amplitude=0.0)


def test_obstacle_ellipticity_and_conditions():
    ob = ObstacleSpec("ball", ((0, 0, -1), 0.3), contrast=-0.5)
    assert ob.condition == "A1"
    with pytest.raises(PreconditionError):
        ob.check_ellipticity(LayeredMedium(0.2, 0.4))
    assert ObstacleSpec("ball", ((0, 0, -1), 0.3), contrast=0.7).condition == "A2"


def test_tapered_profile_is_flat_inside_and_zero_outside():
    s = SourceBall((0, 0, 1.0), 0.3, amplitude=2.5)
    pts = np.array([[0, 0, 1.0], [0, 0, 1.0 + 0.3], [0, 0, 1.0 + 0.5]])
    prof = s.profile(pts, h=0.05)
    assert prof[0] == 2.5 and prof[1] == pytest.approx(1.25) and prof[2] == 0.0


# path length


def test_path_length_examples():
    assert path_length((0, 0, -1), (0, 0, 1), (0, 0), LayeredMedium(1, 1)) == pytest.approx(2.0)
    m = LayeredMedium(1, 4)
    assert path_length((0, 0, -1), (0, 0, 1), (0, 0), m) == pytest.approx(1.5)
    assert path_length((3, 0, -1), (0, 0, 1), (1, 0), m) == pytest.approx(np.sqrt(5) / 2 + np.sqrt(2))


def test_path_length_rejects_wrong_layers():
    with pytest.raises(PreconditionError):
        path_length((0, 0, 0.1), (0, 0, 1), (0, 0), LayeredMedium(1, 2))
    with pytest.raises(PreconditionError):
        snell_point((0, 0, -1), (0, 0, 0.0), LayeredMedium(1, 2))


# refraction point


def test_snell_vertical_pair():
    s = snell_point((0, 0, -1), (0, 0, 2), LayeredMedium(1, 3))
    assert np.all(s.z_prime == 0) and s.theta_minus == 0 and s.theta_plus == 0


def test_snell_equal_speeds_is_straight():
    s = snell_point((0, 0, -1), (2, 0, 1), LayeredMedium(1.7, 1.7))
    np.testing.assert_allclose(s.z_prime, [1.0, 0.0], atol=1e-12)


def test_snell_against_dense_grid():
    m = LayeredMedium(1, 4)
    x, y = np.array([2.0, 0, -1]), np.array([0.0, 0, 1])
    s = snell_point(x, y, m)
    z, lval, gain = brute_force_snell(x, y, m, grid_step=1e-4)
    assert np.abs(z - s.z_prime).max() <= 1e-6
    assert abs(lval - s.l_value) <= 1e-9
    assert gain <= 1e-9


@given(media(), pairs())
def test_snell_residual_and_segment(m, xy):
    x, y = xy
    s = snell_point(x, y, m)
    assert abs(s.snell_residual) <= 1e-10
    d = y[:2] - x[:2]
    L = np.hypot(*d)
    if L > 0:
        e = d / L
        along = np.dot(s.z_prime - x[:2], e)
        assert -1e-12 <= along <= L * (1 + 1e-12) + 1e-12
        perp = (s.z_prime - x[:2]) - along * e
        assert np.linalg.norm(perp) <= 1e-12 * max(1.0, L)


@given(media(), pairs(), st.integers(0, 2**32 - 1))
def test_minimality_in_large_disk(m, xy, seed):
    x, y = xy
    s = snell_point(x, y, m)
    rng = np.random.default_rng(seed)
    r = 10.0 * np.sqrt(rng.uniform(size=1000))
    a = rng.uniform(0, 2 * np.pi, 1000)
    mid = 0.5 * (x[:2] + y[:2])
    zs = mid + np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    vals = np.array([path_length(x, y, z, m) for z in zs])
    assert np.all(vals >= s.l_value - 1e-12)
    near = vals <= s.l_value
    assert np.all(np.linalg.norm(zs[near] - s.z_prime, axis=1) <= 1e-9)


@given(media(), pairs())
def test_hessian_closed_form_matches_finite_differences(m, xy):
    x, y = xy
    s = snell_point(x, y, m)
    H, et, ep, det = hessian_closed_form(x, y, s, m)
    Hf = fd_hessian(x, y, s.z_prime, m, step=1e-3 * min(abs(x[2]), y[2]))
    assert np.abs(H - Hf).max() <= 1e-6 * max(1.0, np.abs(H).max())
    assert det == pytest.approx(et * ep, rel=1e-14)
    assert np.linalg.eigvalsh(H).min() > 0
    np.testing.assert_allclose(sorted(np.linalg.eigvalsh(H)), sorted([et, ep]), rtol=1e-9)


def test_hessian_vertical_example():
    m = LayeredMedium(1, 4)
    s = snell_point((0, 0, -1), (0, 0, 1), m)
    np.testing.assert_allclose(s.hessian, 1.5 * np.eye(2))
    assert s.det_h == pytest.approx(9 / 4)
    x, y = np.array([2.0, 0, -1]), np.array([0.0, 0, 1])
    s = snell_point(x, y, m)
    assert np.abs(s.hessian - fd_hessian(x, y, s.z_prime, m)).max() <= 1e-6


@given(media(), st.floats(0.1, 4.0), st.floats(0.05, 0.9), st.data())
def test_corrected_eigenvalue_bound_holds(m, L, A, data):
    x = np.array([0.0, 0.0, -data.draw(st.floats(A, 1 / A))])
    d = data.draw(st.floats(0.0, L))
    y = np.array([d, 0.0, data.draw(st.floats(A, 1 / A))])
    s = snell_point(x, y, m)
    assert min(s.eig_tangent, s.eig_perp) >= lower_eigenvalue_bound(m, L, A) * (1 - 1e-12)


def test_stated_eigenvalue_bound_fails_for_short_vertical_rays():
    m = LayeredMedium(1.0, 2.0)
    L, A = 0.5, 0.5
    s = snell_point((0, 0, -1 / A), (0, 0, 1 / A), m)
    assert min(s.eig_tangent, s.eig_perp) < naive_eigenvalue_bound(m, L, A)
    assert min(s.eig_tangent, s.eig_perp) >= lower_eigenvalue_bound(m, L, A)


@given(st.floats(0.2, 3.0), pairs())
def test_equal_speed_distance_is_euclidean(g, xy):
    x, y = xy
    assert optical_distance(x, y, LayeredMedium(g, g)) == pytest.approx(
        np.linalg.norm(x - y) / np.sqrt(g), rel=1e-12, abs=1e-12)


@given(media(), pairs(), st.floats(0, 2 * np.pi), coord, coord)
def test_rotation_and_translation_invariance(m, xy, phi, tx, ty):
    x, y = xy
    s = snell_point(x, y, m)
    R = np.array([[np.cos(phi), -np.sin(phi), 0], [np.sin(phi), np.cos(phi), 0], [0, 0, 1]])
    t = np.array([tx, ty, 0.0])
    s2 = snell_point(R @ x + t, R @ y + t, m)
    assert s2.l_value == pytest.approx(s.l_value, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(s2.z_prime, R[:2, :2] @ s.z_prime + t[:2], atol=1e-9)


def test_vectorised_distance_matches_scalar():
    m = LayeredMedium(1.0, 2.5)
    rng = np.random.default_rng(5)
    xs = np.column_stack([rng.uniform(-2, 2, (50, 2)), -rng.uniform(0.1, 2, 50)])
    y = np.array([0.3, -0.2, 1.1])
    lv = optical_distance_many(xs, y, m)
    np.testing.assert_allclose(lv, [optical_distance(x, y, m) for x in xs], rtol=1e-13)


# set level distances


def test_vertical_alignment_distance():
    m = LayeredMedium(1.0, 2.0)
    d, r, b, eta = 1.1, 0.4, 1.2, 0.3
    ob = ObstacleSpec("ball", ((0, 0, -d - r), r))
    src = SourceBall((0, 0, b), eta)
    od = optical_distance_sets(ob, src, m)
    assert od.l_DB == pytest.approx(d / np.sqrt(2) + (b - eta), abs=1e-10)
    np.testing.assert_allclose(od.x0, [0, 0, -d], atol=1e-6)
    np.testing.assert_allclose(od.y0, [0, 0, b - eta], atol=1e-6)


def test_boundary_distance_equals_volumetric_minimum():
    m = LayeredMedium(1.0, 3.0)
    ob = ObstacleSpec("box", ((-0.2, 0.3, -1.4), (0.5, 0.8, -0.9)))
    src = SourceBall((0.6, -0.4, 1.0), 0.25)
    od = optical_distance_sets(ob, src, m)
    shift = src.radius / np.sqrt(m.gamma_plus)
    vol = ob.volume_samples(30)
    lv = optical_distance_many(vol, src.center, m) - shift
    assert np.all(lv >= od.l_DB - 1e-12)
    # zoom the volumetric lattice onto the best interior point
    best, w = vol[np.argmin(lv)], 0.05
    for _ in range(8):
        ax = np.linspace(-w, w, 21)
        cube = best + np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
        cube = cube[ob.contains(cube)]
        lc = optical_distance_many(cube, src.center, m) - shift
        best, w = cube[np.argmin(lc)], w / 4
    assert lc.min() >= od.l_DB - 1e-12
    assert lc.min() - od.l_DB <= 1e-4


def test_boundary_distance_off_axis_ball_polished():
    m = LayeredMedium(1.0, 2.0)
    ob = ObstacleSpec("ball", ((0.7, -0.3, -1.2), 0.35))
    src = SourceBall((-0.4, 0.2, 1.0), 0.3)
    od = optical_distance_sets(ob, src, m)
    dense = ObstacleSpec("ball", ((0.7, -0.3, -1.2), 0.35), n_boundary=200_000)
    lv = optical_distance_many(dense.boundary_samples, src.center, m) - 0.3
    assert od.l_DB <= lv.min() + 1e-12
    assert lv.min() - od.l_DB <= 1e-4


@settings(max_examples=8)
@given(coord, coord)
def test_set_distance_translation_invariant(tx, ty):
    m = LayeredMedium(1.0, 2.0)
    base = optical_distance_sets(ObstacleSpec("ball", ((0.2, 0.1, -1.0), 0.3)),
                                 SourceBall((-0.3, 0.4, 0.9), 0.2), m)
    moved = optical_distance_sets(ObstacleSpec("ball", ((0.2 + tx, 0.1 + ty, -1.0), 0.3)),
                                  SourceBall((-0.3 + tx, 0.4 + ty, 0.9), 0.2), m)
    assert moved.l_DB == pytest.approx(base.l_DB, abs=1e-9)


def test_empty_boundary_samples_rejected():
    ob = ObstacleSpec("ball", ((0, 0, -1), 0.3), boundary_samples=np.zeros((0, 3)))
    with pytest.raises(ConfigurationError):
        optical_distance_sets(ob, SourceBall((0, 0, 1), 0.2), LayeredMedium(1, 2))


# enclosure region


def test_enclosure_with_true_distance_contains_obstacle():
    m = LayeredMedium(1.0, 2.0)
    ob = ObstacleSpec("ball", ((0.3, 0, -1.2), 0.35))
    src = SourceBall((0, 0, 1.0), 0.3)
    od = optical_distance_sets(ob, src, m)
    reg = enclosure_region(od.l_DB, src, m, ((-1, -1, -2), (1, 1, -0.05)), n=64)
    assert np.all(in_enclosure(ob.volume_samples(20), od.l_DB, src, m))
    frac, n = reg.obstacle_coverage(ob)
    assert n > 0 and frac == 1.0


def test_enclosure_threshold_is_strict():
    m = LayeredMedium(1.0, 2.0)
    src = SourceBall((0, 0, 1.0), 0.3)
    x = np.array([0.2, 0.0, -0.8])
    level = optical_distance(x, src.center, m) - src.radius / np.sqrt(m.gamma_plus)
    eps = 1e-3
    assert not enclosure_region(level + eps, src, m, (x, x), n=1).mask.ravel()[0]
    assert enclosure_region(level - eps, src, m, (x, x), n=1).mask.ravel()[0]


def test_enclosure_rejects_upper_box():
    with pytest.raises(PreconditionError):
        enclosure_region(1.0, SourceBall((0, 0, 1), 0.2), LayeredMedium(1, 2), ((0, 0, -1), (1, 1, 0.5)))
