
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coindie.errors import DegenerateNeighborhoodWarning, EmptyResult
from coindie.geometry import (
    PointCloud,
    RigidTransform,
    SpatialIndex,
    apply,
    compose,
    estimate_normals,
    exclude_border,
    nearest,
    ortho_drift,
    rot_z,
    voxel_downsample,
)

from conftest import linear_scan

angles = st.floats(-np.pi, np.pi, allow_nan=False)
coords = st.floats(-50, 50, allow_nan=False)


@st.composite
def transforms(draw):
    axis = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    axis = axis / np.linalg.norm(axis)
    t = [draw(coords) for _ in range(3)]
    return RigidTransform.from_rotvec(axis * draw(angles), t)


# compose / apply


def test_compose_identity():
    I = compose(RigidTransform.identity(), RigidTransform.identity())
    assert np.array_equal(I.matrix, np.eye(4))


def test_compose_inverse_is_identity(rng):
    T = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 10)
    assert np.allclose(compose(T, T.inverse()).matrix, np.eye(4), atol=1e-9)
    assert np.allclose((T.inverse() @ T).matrix, np.eye(4), atol=1e-9)


def test_compose_rz30_rz60():
    T = compose(RigidTransform(rot_z(np.radians(30))), RigidTransform(rot_z(np.radians(60))))
    assert np.allclose(T.rotation, rot_z(np.radians(90)), atol=1e-12)


def test_compose_order():
    # b first, then a
    a = RigidTransform(translation=(1.0, 0.0, 0.0))
    b = RigidTransform(rot_z(np.pi / 2))
    p = compose(a, b).transform_points(np.array([[1.0, 0.0, 0.0]]))
    assert np.allclose(p, [[1.0, 1.0, 0.0]])


def test_apply_identity_bitwise(rng):
    c = PointCloud(rng.normal(size=(50, 3)) * 7.3, None, "c")
    out = apply(RigidTransform.identity(), c)
    assert np.array_equal(out.points, c.points)
    assert out.id == "c"


def test_apply_translation_and_rotation():
    c = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    assert np.array_equal(apply(RigidTransform(translation=(1, 0, 0)), c).points, [[1.0, 0.0, 0.0]])
    c = PointCloud(np.array([[1.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    out = apply(RigidTransform(rot_z(np.pi / 2), (5.0, 5.0, 5.0)), c)
    assert np.allclose(out.points, [[5.0, 6.0, 5.0]], atol=1e-12)
    # normals rotate but ignore the translation
    assert np.allclose(out.normals, [[0.0, 1.0, 0.0]], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(transforms(), transforms(), st.integers(0, 2**31))
def test_apply_compose_property(a, b, seed):
    pts = np.random.default_rng(seed).uniform(-20, 20, (20, 3))
    c = PointCloud(pts)
    lhs = apply(compose(a, b), c).points
    rhs = apply(a, apply(b, c)).points
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(transforms())
def test_transform_invariants(T):
    assert ortho_drift(T.rotation) < 1e-9
    assert np.linalg.det(T.rotation) > 0


def test_orthogonality_after_many_compositions():
    rng = np.random.default_rng(0)
    steps = [RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3)) for _ in range(1000)]
    T = RigidTransform.identity()
    worst = 0.0
    for k in range(10**6):
        T = steps[k % 1000] @ T
        if k % 997 == 0:
            worst = max(worst, ortho_drift(T.rotation))
    worst = max(worst, ortho_drift(T.rotation))
    assert worst < 1e-9


def test_renormalization_path():
    R = rot_z(0.3) + 1e-7
    T = RigidTransform(R, np.zeros(3))
    assert ortho_drift(T.rotation) < 1e-12


def test_rejects_reflection_and_garbage():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidTransform(2 * np.eye(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), (np.nan, 0, 0))


def test_transforms_are_immutable():
    T = RigidTransform.identity()
    with pytest.raises(ValueError):
        T.rotation[0, 0] = 2.0


# point cloud


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, np.inf]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.array([[0.0, 0.0, 1.0]]))


# nearest neighbor


def test_nearest_examples():
    idx = SpatialIndex(PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])))
    k, d2 = nearest(idx, [0.9, 0.0, 0.0])
    assert k == 1 and d2 == pytest.approx(0.01, abs=1e-15)
    assert nearest(idx, [5.0, 0.0, 0.0]) == (2, 0.0)


def test_nearest_random_vs_linear_scan(rng):
    pts = rng.uniform(-10, 10, (1000, 3))
    q = rng.uniform(-12, 12, (100, 3))
    idx, d2 = SpatialIndex(pts).query(q)
    for j in range(len(q)):
        assert (idx[j], d2[j]) == linear_scan(pts, q[j])


def test_nearest_ties_lowest_index(rng):
    # integer lattices with duplicated points produce many exact ties
    checked = 0
    for _ in range(12):
        pts = rng.integers(-3, 4, (150, 3)).astype(float)
        pts = np.vstack([pts, pts[rng.integers(0, 150, 30)]])
        q = rng.integers(-4, 5, (100, 3)) + rng.choice([0.0, 0.5], (100, 3))
        idx, d2 = SpatialIndex(pts).query(q)
        for j in range(len(q)):
            assert (idx[j], d2[j]) == linear_scan(pts, q[j])
            checked += 1
    assert checked >= 1000


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31), st.booleans())
def test_nearest_property(n, seed, lattice):
    r = np.random.default_rng(seed)
    pts = r.integers(-2, 3, (n, 3)).astype(float) if lattice else r.normal(size=(n, 3))
    q = r.integers(-3, 4, (5, 3)).astype(float) / 2 if lattice else r.normal(size=(5, 3))
    idx, d2 = SpatialIndex(pts).query(q)
    for j in range(5):
        assert (idx[j], d2[j]) == linear_scan(pts, q[j])


# normals


def test_normals_plane_z():
    g = np.linspace(-5, 5, 30)
    X, Y = np.meshgrid(g, g)
    c = estimate_normals(PointCloud(np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])))
    assert np.allclose(c.normals, [0.0, 0.0, 1.0], atol=1e-6)


def test_normals_plane_x_tie_to_plus_x():
    g = np.linspace(-5, 5, 30)
    Y, Z = np.meshgrid(g, g)
    c = estimate_normals(PointCloud(np.column_stack([np.zeros(Y.size), Y.ravel(), Z.ravel()])))
    assert np.allclose(c.normals, [1.0, 0.0, 0.0], atol=1e-6)


def test_normals_plane_y_tie_to_plus_y():
    g = np.linspace(-5, 5, 30)
    X, Z = np.meshgrid(g, g)
    c = estimate_normals(PointCloud(np.column_stack([X.ravel(), np.zeros(X.size), Z.ravel()])))
    assert np.allclose(c.normals, [0.0, 1.0, 0.0], atol=1e-6)


def test_normals_sphere():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(10000, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    p *= 10.0
    c = estimate_normals(PointCloud(p), k=20)
    radial = p / 10.0
    # orientation is +z by convention, so compare up to sign
    cosang = np.abs(np.einsum("ij,ij->i", c.normals, radial))
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 5.0
    assert np.all(c.normals[:, 2] >= 0)


def test_normals_degenerate_line():
    x = np.arange(30, dtype=float)
    c = PointCloud(np.column_stack([x, 2 * x, np.zeros(30)]))
    with pytest.warns(DegenerateNeighborhoodWarning):
        out = estimate_normals(c)
    assert np.array_equal(out.normals, np.tile([0.0, 0.0, 1.0], (30, 1)))


def test_normals_preconditions():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.zeros((5, 3))), k=20)
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(50, 3))), k=2)


# border exclusion


def test_exclude_border_line():
    x = np.arange(-10, 11, dtype=float)
    c = PointCloud(np.column_stack([x, np.zeros(21), np.zeros(21)]))
    out = exclude_border(c, 5.0)
    assert len(out) == 11
    assert np.array_equal(out.points[:, 0], np.arange(-5, 6))


def test_exclude_border_large_radius_identical(rng):
    c = PointCloud(rng.normal(size=(100, 3)))
    assert exclude_border(c, 1e3) is c


def test_exclude_border_filters_normals_in_lockstep(rng):
    p = rng.normal(size=(200, 3)) * 5
    n = rng.normal(size=(200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    out = exclude_border(PointCloud(p, n), 4.0)
    keep = np.linalg.norm(p - p.mean(axis=0), axis=1) <= 4.0
    assert np.array_equal(out.points, p[keep]) and np.array_equal(out.normals, n[keep])


def test_exclude_border_empty():
    c = PointCloud(np.array([[-10.0, 0, 0], [10.0, 0, 0]]))
    with pytest.raises(EmptyResult):
        exclude_border(c, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 5.0))
def test_exclude_border_idempotent_with_original_center(seed, r):
    c = PointCloud(np.random.default_rng(seed).normal(size=(300, 3)) * 3)
    center = c.centroid
    try:
        once = exclude_border(c, r, center)
    except EmptyResult:
        return
    twice = exclude_border(once, r, center)
    assert np.array_equal(once.points, twice.points)


def test_exclude_border_on_coin_drops_rim(coin_pair):
    src = coin_pair[0]
    out = exclude_border(src, 8.0)
    d = np.linalg.norm(src.points - src.centroid, axis=1)
    assert len(out) == np.count_nonzero(d <= 8.0)
    # the bevelled rim lies beyond 9 mm and is gone; the central pattern stays
    assert np.all(np.linalg.norm(out.points - src.centroid, axis=1) <= 8.0)
    assert 0.3 < len(out) / len(src) < 0.7


# voxel grid


def test_voxel_downsample_deterministic(rng):
    c = PointCloud(rng.uniform(0, 3, (2000, 3)))
    a = voxel_downsample(c, 0.5)
    b = voxel_downsample(c, 0.5)
    assert np.array_equal(a.points, b.points)
    assert len(a) <= 6**3
    # every output point is the mean of its voxel
    keys = np.floor(c.points / 0.5).astype(int)
    k0 = keys[0]
    inside = np.all(keys == k0, axis=1)
    assert np.any(np.all(np.isclose(a.points, c.points[inside].mean(axis=0)), axis=1))
