"""Initialization-free registration by multi-start ICP.

Coins are flat, so after both scans are centered and rotated face-up the
remaining search is three-dimensional: a spin about z and an in-plane
shift.  Starts are drawn at random or laid out on a lattice, each is
refined by local ICP, and the lowest-RMSE result wins.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CoinDieError, DegenerateInput, AllTrialsFailed
from .geometry import PointCloud, RigidTransform, apply, voxel_downsample, _orient
from .icp import IcpConfig, IcpProblem, RegistrationResult


class Strategy(str, enum.Enum):
    RANDOM = "random"
    GRID = "grid"


@dataclass(frozen=True)
class SearchSpace3DOF:
    """Spin in ``[-rotation_range, rotation_range]`` and shift in ``[-r_max, r_max]^2``."""

    rotation_range: float = np.pi
    r_max: float = 5.0

    def __post_init__(self):
        if not (self.rotation_range > 0 and self.r_max >= 0):
            raise ValueError("search ranges must be non-empty")


@dataclass(frozen=True)
class GlobalConfig:
    """Settings of the multi-start search.

    ``coarse_voxel_mm`` runs the trials on voxel-downsampled copies and
    ``trial_max_iterations`` caps their ICP iterations; with either set the
    winner is refined once more with ``icp`` on the full clouds.
    """

    strategy: Strategy = Strategy.RANDOM
    trials: int = 100
    grid_shape: Tuple[int, int, int] = (12, 3, 3)
    rng_seed: int = 0
    icp: IcpConfig = field(default_factory=IcpConfig)
    space: SearchSpace3DOF = field(default_factory=SearchSpace3DOF)
    coarse_voxel_mm: Optional[float] = 0.7
    trial_max_iterations: Optional[int] = 10

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "grid_shape", tuple(int(v) for v in self.grid_shape))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.grid_shape) != 3 or min(self.grid_shape) < 1:
            raise ValueError("grid_shape must be three positive counts")

    @property
    def trial_count(self) -> int:
        if self.strategy is Strategy.GRID:
            return int(np.prod(self.grid_shape))
        return self.trials


def canonicalize_pose(cloud: PointCloud) -> Tuple[PointCloud, RigidTransform]:
    """Center ``cloud`` and turn its face normal to +z.

    The face normal is the smallest-variance principal axis, signed toward
    +z of the input frame.  The rotation is the minimal one taking that
    axis to +z.  Returns the moved cloud and the transform applied.
    """
    if len(cloud) < 3:
        raise DegenerateInput("canonicalization needs at least 3 points")
    c = cloud.centroid
    d = cloud.points - c
    w, v = np.linalg.eigh(d.T @ d / len(d))
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise DegenerateInput("cloud covariance has rank < 2")
    n = _orient(v[:, :1].T)[0]
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(n, z)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        R = np.eye(3)
    else:
        angle = np.arctan2(s, n @ z)
        R = RigidTransform.from_rotvec(axis / s * angle).rotation
    T = RigidTransform(R, -R @ c)
    return apply(T, cloud), T


def face_normal(cloud: PointCloud) -> np.ndarray:
    """Unit face normal used by :func:`canonicalize_pose`."""
    _, T = canonicalize_pose(cloud)
    return T.rotation.T @ np.array([0.0, 0.0, 1.0])


def initial_poses(cfg: GlobalConfig) -> List[RigidTransform]:
    """Starting poses of every trial, in trial order."""
    sp = cfg.space
    if cfg.strategy is Strategy.RANDOM:
        rng = np.random.default_rng(cfg.rng_seed)
        a = rng.uniform(-sp.rotation_range, sp.rotation_range, cfg.trials)
        xy = rng.uniform(-sp.r_max, sp.r_max, (cfg.trials, 2))
        return [RigidTransform.planar(a[k], xy[k, 0], xy[k, 1]) for k in range(cfg.trials)]
    na, nx, ny = cfg.grid_shape
    angles = -sp.rotation_range + 2 * sp.rotation_range * np.arange(na) / na
    # cell centers, so odd counts include the zero shift
    xs = -sp.r_max + sp.r_max * (2 * np.arange(nx) + 1) / nx
    ys = -sp.r_max + sp.r_max * (2 * np.arange(ny) + 1) / ny
    return [RigidTransform.planar(a, x, y) for a in angles for x in xs for y in ys]


def _winner(results: Sequence[Optional[RegistrationResult]]) -> int:
    best = None
    for k, r in enumerate(results):
        if r is not None and (best is None or r.final_rmse < results[best].final_rmse):
            best = k
    return best


def global_register(source: PointCloud, target: PointCloud, cfg: Optional[GlobalConfig] = None, return_trials: bool = False):
    """Register ``source`` onto ``target`` from no initial guess.

    Both clouds are canonicalized internally and the winner is expressed
    in the original frames.  Ties in RMSE go to the lowest trial index.

    Returns
    -------
    RegistrationResult
        Or ``(result, trial_results)`` with ``return_trials=True``; trial
        results are in canonical frames, ``None`` for failed trials.

    Raises
    ------
    AllTrialsFailed
        If every trial raised a registration error.
    """
    cfg = GlobalConfig() if cfg is None else cfg
    cs, Ts = canonicalize_pose(source)
    ct, Tt = canonicalize_pose(target)
    trial_icp = cfg.icp
    if cfg.trial_max_iterations:
        trial_icp = replace(cfg.icp, max_iterations=cfg.trial_max_iterations)
    if cfg.coarse_voxel_mm:
        search = IcpProblem(voxel_downsample(cs, cfg.coarse_voxel_mm), voxel_downsample(ct, cfg.coarse_voxel_mm), trial_icp)
    else:
        search = IcpProblem(cs, ct, trial_icp)
    trials: List[Optional[RegistrationResult]] = []
    errors = []
    for init in initial_poses(cfg):
        try:
            trials.append(search.run(init))
        except CoinDieError as exc:
            trials.append(None)
            errors.append(exc)
    k = _winner(trials)
    if k is None:
        raise AllTrialsFailed(f"all {len(trials)} trials failed; last error: {errors[-1]!r}")
    best = trials[k]
    if cfg.coarse_voxel_mm or cfg.trial_max_iterations:
        best = IcpProblem(cs, ct, cfg.icp).run(best.transform)
    T = Tt.inverse() @ best.transform @ Ts
    result = RegistrationResult(
        transform=T,
        final_rmse=best.final_rmse,
        iterations_used=best.iterations_used,
        converged=best.converged,
        correspondences_used=best.correspondences_used,
        history=best.history,
    )
    if return_trials:
        return result, trials
    return result
