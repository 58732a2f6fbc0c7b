"""Point clouds, rigid transforms and nearest-neighbor queries.

All lengths are millimetres.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhoodWarning, EmptyResult

ORTHO_TOL = 1e-9


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions and optional unit normals of one scanned coin face.

    Parameters
    ----------
    points : array_like, shape (N, 3)
        Coordinates in millimetres.
    normals : array_like, shape (N, 3), optional
        Unit normals, one per point.
    id : str
        Opaque coin identifier.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    id: str = ""

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def subset(self, mask_or_index) -> "PointCloud":
        nrm = None if self.normals is None else self.normals[mask_or_index]
        return PointCloud(self.points[mask_or_index], nrm, self.id)

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals, self.id)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix of a rotation vector (axis times angle in radians)."""
    w = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_angle(R: np.ndarray) -> float:
    """Angle in radians of a rotation matrix, via clamped arccos."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def ortho_drift(R: np.ndarray) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform must be finite")
        drift = ortho_drift(R)
        if drift > 1e-4 or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be orthogonal with det +1")
        if drift > ORTHO_TOL:
            R = orthonormalize(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rodrigues(rotvec), translation)

    @classmethod
    def planar(cls, angle: float, tx: float = 0.0, ty: float = 0.0) -> "RigidTransform":
        """Rotation about z followed by an in-plane translation."""
        return cls(rot_z(angle), (tx, ty, 0.0))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        ang = np.degrees(rotation_angle(self.rotation))
        return f"RigidTransform(angle={ang:.4f} deg, translation={np.round(self.translation, 6).tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point by ``R p + t`` and every normal by ``R n``."""
    pts = t.transform_points(cloud.points)
    nrm = None if cloud.normals is None else cloud.normals @ t.rotation.T
    if nrm is not None and len(nrm):
        # rotation keeps unit length up to rounding; keep the invariant tight
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm, cloud.id)


class SpatialIndex:
    """Read-only nearest-neighbor index over one point cloud.

    Results match an exhaustive linear scan exactly, including the
    tie-break toward the lowest point index.
    """

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest point index and squared distance for each query row."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        pts = self.points
        if len(pts) == 1:
            idx = np.zeros(len(q), dtype=np.intp)
            return idx, _sqdist(q, pts[idx])
        _, ii = self._tree.query(q, k=2)
        i0, i1 = ii[:, 0], ii[:, 1]
        d0 = _sqdist(q, pts[i0])
        d1 = _sqdist(q, pts[i1])
        swap = (d1 < d0) | ((d1 == d0) & (i1 < i0))
        idx = np.where(swap, i1, i0)
        d2 = np.where(swap, d1, d0)
        # near-ties may hide further equidistant points; resolve exhaustively
        hi = np.maximum(d0, d1)
        lo = np.minimum(d0, d1)
        close = np.flatnonzero(hi - lo <= 1e-9 * hi + 1e-300)
        for j in close:
            r = np.sqrt(hi[j]) * (1.0 + 1e-6) + 1e-12
            cand = np.asarray(self._tree.query_ball_point(q[j], r), dtype=np.intp)
            dc = _sqdist(q[j], pts[cand])
            best = np.flatnonzero(dc == dc.min())
            k = cand[best].min()
            idx[j] = k
            d2[j] = _sqdist(q[j], pts[k])
        return idx, d2

    def knn(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Indices of the ``k`` nearest points (no tie guarantee)."""
        _, ii = self._tree.query(np.atleast_2d(queries), k=k)
        return np.asarray(ii).reshape(len(np.atleast_2d(queries)), k)


def nearest(index: SpatialIndex, query) -> Tuple[int, float]:
    """Nearest indexed point to a single query: ``(point_index, squared_distance)``."""
    idx, d2 = index.query(np.asarray(query, dtype=float).reshape(1, 3))
    return int(idx[0]), float(d2[0])


def _orient(normals: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # +z first; ties on z broken toward +x, then +y
    sign = np.sign(normals[:, 2])
    undecided = np.abs(normals[:, 2]) <= tol
    sign[undecided] = np.sign(normals[undecided, 0])
    undecided &= np.abs(normals[:, 0]) <= tol
    sign[undecided] = np.sign(normals[undecided, 1])
    sign[sign == 0] = 1.0
    return normals * sign[:, None]


def estimate_normals(cloud: PointCloud, k: int = 20) -> PointCloud:
    """Per-point PCA normals from the ``k`` nearest neighbors.

    The neighborhood is the point plus its ``k`` neighbors.  Normals are
    oriented to non-negative z.  Collinear neighborhoods get ``+z`` and a
    :class:`DegenerateNeighborhoodWarning`.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {n}")
    pts = cloud.points
    nbr = SpatialIndex(cloud).knn(pts, k + 1)
    nb = pts[nbr]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / (k + 1)
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    degenerate = w[:, 1] <= 1e-12 * np.maximum(w[:, 2], 1e-300)
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} rank-deficient neighborhoods; normal set to +z",
            DegenerateNeighborhoodWarning,
            stacklevel=2,
        )
        normals[degenerate] = (0.0, 0.0, 1.0)
    normals = _orient(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


def exclude_border(cloud: PointCloud, radius_mm: float, center=None) -> PointCloud:
    """Keep the points within ``radius_mm`` of the cloud centroid.

    ``center`` overrides the centroid (the mean of all positions), which
    lets a caller reuse the reference computed on the raw cloud.

    Raises
    ------
    EmptyResult
        If no point survives.
    """
    if not radius_mm > 0:
        raise ValueError("radius_mm must be positive")
    c = cloud.centroid if center is None else np.asarray(center, dtype=float)
    keep = _sqdist(cloud.points, c) <= radius_mm * radius_mm
    if not np.any(keep):
        raise EmptyResult(f"no point of cloud {cloud.id!r} within {radius_mm} mm of its center")
    if np.all(keep):
        return cloud
    return cloud.subset(keep)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Output order follows the lexicographic order of voxel coordinates, so
    the result is deterministic.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(counts)
    pts = np.zeros((m, 3))
    np.add.at(pts, inverse, cloud.points)
    pts /= counts[:, None]
    nrm = None
    if cloud.normals is not None:
        nrm = np.zeros((m, 3))
        np.add.at(nrm, inverse, cloud.normals)
        norm = np.linalg.norm(nrm, axis=1, keepdims=True)
        bad = norm[:, 0] < 1e-12
        nrm[bad] = (0.0, 0.0, 1.0)
        norm[bad] = 1.0
        nrm /= norm
    return PointCloud(pts, nrm, cloud.id)
