"""Glue between registration and the distance-histogram feature."""
from __future__ import annotations

from typing import Optional, Tuple

from .geometry import PointCloud, RigidTransform, estimate_normals, exclude_border, voxel_downsample
from .globalreg import GlobalConfig, global_register
from .icp import RegistrationResult
from .metric import DEFAULT_BINS, DEFAULT_H_MAX, DistanceHistogram, distance_map, histogram


def prepare(cloud: PointCloud, voxel_size: Optional[float] = None, k: int = 20) -> PointCloud:
    """Optional voxel downsampling followed by normal estimation."""
    if voxel_size:
        cloud = voxel_downsample(cloud, voxel_size)
    return estimate_normals(cloud, k)


def pair_histogram(
    source: PointCloud,
    target: PointCloud,
    alignment: RigidTransform,
    border_radius_mm: Optional[float] = 8.0,
    bins: int = DEFAULT_BINS,
    h_max: float = DEFAULT_H_MAX,
) -> DistanceHistogram:
    """Histogram of the aligned, border-excluded source against the whole target.

    The rim is excluded for the same reason as during registration: its
    shape is specific to the flan, not to the die.
    """
    if border_radius_mm is not None:
        source = exclude_border(source, border_radius_mm)
    return histogram(distance_map(source, target, alignment), bins, h_max)


def compare(
    source: PointCloud,
    target: PointCloud,
    cfg: Optional[GlobalConfig] = None,
    bins: int = DEFAULT_BINS,
    h_max: float = DEFAULT_H_MAX,
) -> Tuple[RegistrationResult, DistanceHistogram]:
    """Globally register ``source`` onto ``target`` and summarize the fit."""
    cfg = GlobalConfig() if cfg is None else cfg
    result = global_register(source, target, cfg)
    h = pair_histogram(source, target, result.transform, cfg.icp.border_radius_mm, bins, h_max)
    return result, h
