"""Local rigid registration: point-to-point and point-to-plane ICP.

Both variants run on border-excluded clouds so that the irregular rim of a
coin does not drive the alignment of its pattern.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateInput, NoCorrespondences, SingularSystem
from .geometry import (
    PointCloud,
    RigidTransform,
    SpatialIndex,
    exclude_border,
    rodrigues,
    rotation_angle,
)


class Variant(str, enum.Enum):
    POINT_TO_POINT = "point_to_point"
    POINT_TO_PLANE = "point_to_plane"


@dataclass(frozen=True)
class IcpConfig:
    """Stopping rule, correspondence rejection and border radius of ICP.

    ``border_radius_mm=None`` disables border exclusion and
    ``max_correspondence_distance=None`` disables pair rejection.
    """

    max_iterations: int = 60
    translation_epsilon: float = 1e-3
    rotation_epsilon: float = 1e-4
    border_radius_mm: Optional[float] = 8.0
    variant: Variant = Variant.POINT_TO_PLANE
    max_correspondence_distance: Optional[float] = 2.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("translation_epsilon", "rotation_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("border_radius_mm", "max_correspondence_distance"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive or None")


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of a registration.

    ``final_rmse`` is the RMSE of the variant's own residuals over accepted
    pairs at the final pose: point-to-plane distances for the plane
    variant, point-to-point distances otherwise.  ``history`` holds, per iteration, the RMSE of the matched pairs before
    and after that iteration's solve.
    """

    transform: RigidTransform
    final_rmse: float
    iterations_used: int
    converged: bool
    correspondences_used: int
    history: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)


def kabsch_solve(source_pts, target_pts) -> RigidTransform:
    """Least-squares rigid motion taking ``source_pts`` onto ``target_pts``.

    Centroids are removed, the cross-covariance is decomposed by SVD and the
    sign of the last singular direction is corrected so that det(R) = +1.

    Raises
    ------
    DegenerateInput
        If fewer than 3 pairs are given or the cross-covariance has rank < 2.
    """
    src = np.asarray(source_pts, dtype=float)
    tgt = np.asarray(target_pts, dtype=float)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateInput("source and target must both have shape (N, 3)")
    if len(src) < 3:
        raise DegenerateInput("Kabsch needs at least 3 point pairs")
    cs = src.mean(axis=0)
    ct = tgt.mean(axis=0)
    H = (src - cs).T @ (tgt - ct)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or S[1] <= 1e-12 * S[0]:
        raise DegenerateInput("cross-covariance rank < 2 (collinear points)")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, ct - R @ cs)


def plane_normal_equations(src_pts, tgt_pts, tgt_normals, center=None):
    """Gauss-Newton system of the point-to-plane objective at zero motion.

    The motion ``x = (w, tau)`` rotates by ``w`` about ``center`` and then
    translates by ``tau``.  With residuals ``r_i = (s_i - y_i) . n_i`` and
    rows ``a_i = [(s_i - c) x n_i, n_i]`` the linearized objective is
    ``sum (r_i + a_i . x)^2``.

    Returns
    -------
    H : ndarray, shape (6, 6)
        ``A^T A``.
    g : ndarray, shape (6,)
        ``A^T r``, half the gradient of the objective at ``x = 0``.
    center : ndarray, shape (3,)
    """
    s = np.asarray(src_pts, dtype=float)
    y = np.asarray(tgt_pts, dtype=float)
    n = np.asarray(tgt_normals, dtype=float)
    c = s.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    r = np.einsum("ij,ij->i", s - y, n)
    A = np.hstack([np.cross(s - c, n), n])
    return A.T @ A, A.T @ r, c


def motion_to_transform(x, center) -> RigidTransform:
    """Rigid transform of a rotation vector about ``center`` plus translation."""
    R = rodrigues(x[:3])
    c = np.asarray(center, dtype=float)
    return RigidTransform(R, c + np.asarray(x[3:]) - R @ c)


def _solve_damped(H, g):
    tr = np.trace(H)
    if not np.isfinite(tr) or tr <= 0:
        raise SingularSystem("point-to-plane system is empty")
    Hd = H + 1e-9 * tr * np.eye(6)
    cond = np.linalg.cond(Hd)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystem(f"point-to-plane system condition number {cond:.3g}")
    x = np.linalg.solve(Hd, -g)
    # iterative refinement removes the damping bias in well-posed directions
    for _ in range(2):
        x = x + np.linalg.solve(Hd, -g - H @ x)
    return x


def point_to_plane_step(source, target, correspondences=None) -> RigidTransform:
    """One linearized point-to-plane solve using target normals.

    Parameters
    ----------
    source : PointCloud or ndarray
        Current (already transformed) source points.
    target : PointCloud
        Target cloud with normals.
    correspondences : (ndarray, ndarray), optional
        Matching source and target indices; defaults to index ``i`` to ``i``.
    """
    spts = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=float)
    if target.normals is None:
        raise ValueError("point-to-plane needs target normals")
    if correspondences is None:
        si = ti = np.arange(len(spts))
    else:
        si, ti = (np.asarray(c, dtype=np.intp) for c in correspondences)
    if len(si) < 6:
        raise DegenerateInput("point-to-plane needs at least 6 correspondences")
    H, g, c = plane_normal_equations(spts[si], target.points[ti], target.normals[ti])
    return motion_to_transform(_solve_damped(H, g), c)


class IcpProblem:
    """Border-excluded clouds and target index, reusable across starts."""

    def __init__(self, source: PointCloud, target: PointCloud, cfg: IcpConfig):
        if len(source) == 0 or len(target) == 0:
            raise DegenerateInput("registration inputs must be non-empty")
        if cfg.variant is Variant.POINT_TO_PLANE and target.normals is None:
            raise ValueError("point-to-plane ICP needs target normals")
        self.cfg = cfg
        if cfg.border_radius_mm is not None:
            source = exclude_border(source, cfg.border_radius_mm)
            # keep every target point a retained source point could be paired with
            d = cfg.max_correspondence_distance
            if d is not None:
                target = exclude_border(target, cfg.border_radius_mm + d)
        self.source = source
        self.target = target
        self.index = SpatialIndex(target)
        d = cfg.max_correspondence_distance
        self._max_d2 = np.inf if d is None else d * d

    def _match(self, T: RigidTransform):
        s = T.transform_points(self.source.points)
        idx, d2 = self.index.query(s)
        keep = d2 <= self._max_d2
        return s, idx, d2, keep

    def run(self, init: Optional[RigidTransform] = None) -> RegistrationResult:
        cfg = self.cfg
        T = RigidTransform.identity() if init is None else init
        tgt = self.target
        history = []
        converged = False
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            s, idx, d2, keep = self._match(T)
            if not np.any(keep):
                raise NoCorrespondences(f"all pairs rejected at iteration {it}")
            sk, yk = s[keep], tgt.points[idx[keep]]
            if cfg.variant is Variant.POINT_TO_POINT:
                step = kabsch_solve(sk, yk)
            else:
                if len(sk) < 6:
                    raise DegenerateInput("point-to-plane needs at least 6 correspondences")
                H, g, c = plane_normal_equations(sk, yk, tgt.normals[idx[keep]])
                step = motion_to_transform(_solve_damped(H, g), c)
            after = step.transform_points(sk) - yk
            history.append(
                (float(np.sqrt(d2[keep].mean())), float(np.sqrt(np.einsum("ij,ij->i", after, after).mean())))
            )
            T = step @ T
            if (
                np.linalg.norm(step.translation) < cfg.translation_epsilon
                and rotation_angle(step.rotation) < cfg.rotation_epsilon
            ):
                converged = True
                break
        s, idx, d2, keep = self._match(T)
        if not np.any(keep):
            raise NoCorrespondences("all pairs rejected at the final pose")
        if cfg.variant is Variant.POINT_TO_PLANE:
            res = np.einsum("ij,ij->i", s[keep] - tgt.points[idx[keep]], tgt.normals[idx[keep]])
            rmse = float(np.sqrt(np.mean(res * res)))
        else:
            rmse = float(np.sqrt(d2[keep].mean()))
        return RegistrationResult(
            transform=T,
            final_rmse=rmse,
            iterations_used=it,
            converged=converged,
            correspondences_used=int(keep.sum()),
            history=tuple(history),
        )


def icp(
    source: PointCloud,
    target: PointCloud,
    init: Optional[RigidTransform] = None,
    cfg: Optional[IcpConfig] = None,
) -> RegistrationResult:
    """Refine ``init`` so that ``source`` lands on ``target``.

    The returned transform maps source coordinates into the target frame.
    Iteration stops once an incremental step moves less than both
    tolerances (``converged=True``) or after ``cfg.max_iterations``.
    """
    cfg = IcpConfig() if cfg is None else cfg
    return IcpProblem(source, target, cfg).run(init)
