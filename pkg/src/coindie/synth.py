"""Procedural coins with known die and pose.

A die is a smooth relief (a bounded sum of anisotropic Gaussian bumps) in
its own frame.  Striking a coin samples an irregular, off-center flan over
that relief, adds a bevelled rim, optional wear, fracture and scanner noise,
and finally places the scan at a pose.  The pose maps die coordinates to
scan coordinates, so for two strikes ``A`` and ``B`` of any dies the
pattern-aligning transform is ``pose_B @ pose_A.inverse()``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .geometry import PointCloud, RigidTransform, rot_x, rot_z


@dataclass(frozen=True)
class DieSpec:
    """Engraved pattern of one die.

    When ``family_seed`` is set the die is an engraving of a shared coin
    type: the family's features are jittered, some are dropped and a few
    die-specific ones are added, with ``variation_mm`` setting the scale
    of the differences.  Otherwise the pattern is drawn independently.
    """

    seed: int
    relief_depth: float = 0.3
    n_features: int = 45
    pattern_radius: float = 9.0
    family_seed: Optional[int] = None
    variation_mm: float = 0.35
    amplitude_variation: float = 0.2
    drop_fraction: float = 0.12
    extra_fraction: float = 1 / 6
    name: str = ""

    @property
    def die_id(self) -> str:
        return self.name or f"die{self.seed}"


@dataclass(frozen=True)
class Fracture:
    """Half-plane cut in the flan frame: points with ``p . u > offset`` are lost."""

    angle: float
    offset_mm: float


@dataclass(frozen=True)
class StrikeSpec:
    coin_radius: float = 11.0
    sample_count: int = 20000
    sensor_noise_sigma: float = 0.05
    wear_fraction: float = 0.0
    fracture: Optional[Fracture] = None
    rim_irregularity: float = 0.5
    strike_offset_mm: float = 0.7
    bevel_width: float = 1.6
    bevel_depth: float = 1.0
    wear_blur_mm: float = 0.6

    def __post_init__(self):
        if self.sample_count < 1000:
            raise ValueError("sample_count must be >= 1000")
        if self.sensor_noise_sigma < 0:
            raise ValueError("sensor_noise_sigma must be >= 0")
        if not 0.0 <= self.wear_fraction <= 1.0:
            raise ValueError("wear_fraction must lie in [0, 1]")


class Pattern:
    """Evaluable height field of a die."""

    def __init__(self, centers, sig_u, sig_v, angles, amps, depth):
        self.centers = np.asarray(centers, dtype=float)
        self.sig_u = np.asarray(sig_u, dtype=float)
        self.sig_v = np.asarray(sig_v, dtype=float)
        self.angles = np.asarray(angles, dtype=float)
        self.amps = np.asarray(amps, dtype=float)
        self.depth = float(depth)

    def _raw(self, xy, blur=0.0):
        su2 = self.sig_u**2 + blur**2
        sv2 = self.sig_v**2 + blur**2
        scale = self.sig_u * self.sig_v / np.sqrt(su2 * sv2)
        c, s = np.cos(self.angles), np.sin(self.angles)
        out = np.zeros(len(xy))
        for k in range(len(self.amps)):
            dx = xy[:, 0] - self.centers[k, 0]
            dy = xy[:, 1] - self.centers[k, 1]
            u = c[k] * dx + s[k] * dy
            v = -s[k] * dx + c[k] * dy
            out += self.amps[k] * scale[k] * np.exp(-0.5 * (u * u / su2[k] + v * v / sv2[k]))
        return out

    def height(self, xy, wear: float = 0.0, blur: float = 0.6):
        """Relief at ``xy``; ``wear`` blends toward a low-passed copy."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        raw = self._raw(xy)
        if wear > 0:
            raw = (1.0 - wear) * raw + wear * 0.7 * self._raw(xy, blur)
        return self.depth * np.tanh(raw / self.depth)


def _features(rng, n, radius, depth):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(-np.pi, np.pi, n)
    centers = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    sig_u = rng.uniform(0.35, 1.1, n)
    elong = np.where(rng.uniform(0, 1, n) < 0.4, rng.uniform(2.0, 4.0, n), rng.uniform(0.8, 1.3, n))
    sig_v = sig_u * elong
    angles = rng.uniform(0, np.pi, n)
    amps = depth * rng.uniform(0.4, 1.2, n) * np.where(rng.uniform(0, 1, n) < 0.8, 1.0, -1.0)
    return centers, sig_u, sig_v, angles, amps


def die_pattern(die: DieSpec) -> Pattern:
    """Deterministic height field of ``die``."""
    rng = np.random.default_rng([die.seed, 0xD1E])
    if die.family_seed is None:
        feats = _features(rng, die.n_features, die.pattern_radius, die.relief_depth)
        return Pattern(*feats, die.relief_depth)
    frng = np.random.default_rng([die.family_seed, 0xFA])
    centers, sig_u, sig_v, angles, amps = _features(frng, die.n_features, die.pattern_radius, die.relief_depth)
    n = len(amps)
    v = die.variation_mm
    centers = centers + rng.normal(0, v, (n, 2))
    sig_u = sig_u * (1 + rng.normal(0, 0.15, n)).clip(0.6, 1.6)
    sig_v = sig_v * (1 + rng.normal(0, 0.15, n)).clip(0.6, 1.6)
    angles = angles + rng.normal(0, 0.15, n)
    amps = amps * (1 + rng.normal(0, die.amplitude_variation, n)).clip(0.4, 1.8)
    keep = rng.uniform(0, 1, n) >= die.drop_fraction
    extra = _features(rng, max(1, int(round(n * die.extra_fraction))), die.pattern_radius, die.relief_depth)
    parts = [np.concatenate([a[keep], b]) for a, b in zip((centers, sig_u, sig_v, angles, amps), extra)]
    return Pattern(*parts, die.relief_depth)


def _rim_profile(rng, irregularity):
    k = np.arange(2, 7)
    amp = irregularity * rng.uniform(0.3, 1.0, len(k)) / k
    phase = rng.uniform(-np.pi, np.pi, len(k))
    return k, amp, phase


def strike(
    die: DieSpec,
    spec: StrikeSpec = StrikeSpec(),
    pose: Optional[RigidTransform] = None,
    seed: int = 0,
    coin_id: str = "",
    pattern: Optional[Pattern] = None,
) -> Tuple[PointCloud, str]:
    """Scan of one coin struck by ``die``.

    Returns the cloud (in the scan frame given by ``pose``) and the die id.
    """
    rng = np.random.default_rng([seed, 0x5781CE])
    pattern = die_pattern(die) if pattern is None else pattern
    pose = RigidTransform.identity() if pose is None else pose
    k, amp, phase = _rim_profile(rng, spec.rim_irregularity)
    offset = rng.normal(0, spec.strike_offset_mm, 2)
    R0 = spec.coin_radius

    def boundary(phi):
        return R0 + np.sum(amp[None, :] * np.cos(np.outer(phi, k) + phase[None, :]), axis=1)

    rmax = R0 + amp.sum()
    xy = np.zeros((0, 2))
    while len(xy) < spec.sample_count:
        m = int(1.4 * (spec.sample_count - len(xy))) + 64
        r = rmax * np.sqrt(rng.uniform(0, 1, m))
        phi = rng.uniform(-np.pi, np.pi, m)
        inside = r <= boundary(phi)
        xy = np.vstack([xy, np.column_stack([r * np.cos(phi), r * np.sin(phi)])[inside]])
    xy = xy[: spec.sample_count]
    r = np.hypot(xy[:, 0], xy[:, 1])
    phi = np.arctan2(xy[:, 1], xy[:, 0])
    edge = (boundary(phi) - r).clip(min=0.0)
    if spec.fracture is not None:
        u = np.array([np.cos(spec.fracture.angle), np.sin(spec.fracture.angle)])
        keep = xy @ u <= spec.fracture.offset_mm
        xy, edge = xy[keep], edge[keep]
        # the fracture face also drops off like a rim
        edge = np.minimum(edge, spec.fracture.offset_mm - xy @ u)
    die_xy = xy + offset
    z = pattern.height(die_xy, wear=spec.wear_fraction, blur=spec.wear_blur_mm)
    bevel = np.where(edge < spec.bevel_width, spec.bevel_depth * (1.0 - edge / spec.bevel_width) ** 2, 0.0)
    z = z - bevel
    if spec.sensor_noise_sigma > 0:
        z = z + rng.normal(0, spec.sensor_noise_sigma, len(z))
    pts = np.column_stack([die_xy, z])
    cloud = PointCloud(pose.transform_points(pts), None, coin_id)
    return cloud, die.die_id


def random_pose(rng, max_tilt_deg: float = 20.0, max_shift_mm: float = 20.0) -> RigidTransform:
    """Face-up scan pose: any spin about z, bounded tilt, bounded shift."""
    spin = rng.uniform(-np.pi, np.pi)
    tilt = np.radians(rng.uniform(0, max_tilt_deg))
    tilt_dir = rng.uniform(-np.pi, np.pi)
    R = rot_z(tilt_dir) @ rot_x(tilt) @ rot_z(-tilt_dir) @ rot_z(spin)
    return RigidTransform(R, rng.uniform(-max_shift_mm, max_shift_mm, 3))


@dataclass(frozen=True)
class DamageProfile:
    """Which coins of a corpus are damaged and how.

    A fraction of coins is chosen at random; each chosen coin is worn with
    probability ``wear_prob`` and fractured with probability
    ``fracture_prob`` (at least one of the two always applies).
    """

    fraction: float = 0.0
    wear_range: Tuple[float, float] = (0.5, 0.9)
    fracture_prob: float = 0.6
    wear_prob: float = 0.6
    fracture_offset_range: Tuple[float, float] = (3.0, 7.0)


@dataclass
class Corpus:
    clouds: List[PointCloud]
    die_ids: List[str]
    poses: List[RigidTransform]
    dies: List[DieSpec]
    damaged: List[bool] = field(default_factory=list)

    @property
    def ids(self) -> List[str]:
        return [c.id for c in self.clouds]

    def pairs(self):
        """All ``(i, j, label)`` with ``i < j``; label 1 for a shared die."""
        n = len(self.clouds)
        return [(i, j, int(self.die_ids[i] == self.die_ids[j])) for i in range(n) for j in range(i + 1, n)]

    def relative_pose(self, i: int, j: int) -> RigidTransform:
        """Pattern-aligning transform from coin ``i`` onto coin ``j``."""
        return self.poses[j] @ self.poses[i].inverse()


def make_corpus(
    n_dies: int,
    coins_per_die: int,
    damage_profile: Optional[DamageProfile] = None,
    seed: int = 0,
    strike_spec: StrikeSpec = StrikeSpec(),
    poses: str = "random",
    family: bool = True,
    die_kwargs: Optional[dict] = None,
) -> Corpus:
    """Labeled corpus of ``n_dies * coins_per_die`` coins.

    ``poses`` is ``"random"`` (face-up scans at arbitrary spin, tilt and
    shift) or ``"aligned"`` (every scan in its die frame).  With
    ``family=True`` all dies engrave one shared coin type.
    """
    if n_dies < 1 or coins_per_die < 1:
        raise ValueError("n_dies and coins_per_die must be positive")
    damage = DamageProfile() if damage_profile is None else damage_profile
    rng = np.random.default_rng([seed, 0xC0])
    family_seed = int(rng.integers(2**31)) if family else None
    dies = [
        DieSpec(seed=int(rng.integers(2**31)), family_seed=family_seed, name=f"die{d:02d}", **(die_kwargs or {}))
        for d in range(n_dies)
    ]
    n = n_dies * coins_per_die
    n_damaged = int(round(damage.fraction * n))
    damaged = np.zeros(n, dtype=bool)
    damaged[rng.permutation(n)[:n_damaged]] = True
    clouds, die_ids, pose_list = [], [], []
    for d, die in enumerate(dies):
        pattern = die_pattern(die)
        for c in range(coins_per_die):
            i = d * coins_per_die + c
            spec = strike_spec
            if damaged[i]:
                fract = rng.uniform() < damage.fracture_prob
                worn = (not fract) or rng.uniform() < damage.wear_prob
                spec = replace(
                    spec,
                    wear_fraction=float(rng.uniform(*damage.wear_range)) if worn else 0.0,
                    fracture=Fracture(float(rng.uniform(-np.pi, np.pi)), float(rng.uniform(*damage.fracture_offset_range)))
                    if fract
                    else None,
                )
            pose = random_pose(rng) if poses == "random" else RigidTransform.identity()
            cloud, die_id = strike(die, spec, pose, seed=int(rng.integers(2**31)), coin_id=f"coin{i:03d}", pattern=pattern)
            clouds.append(cloud)
            die_ids.append(die_id)
            pose_list.append(pose)
    return Corpus(clouds, die_ids, pose_list, dies, damaged.tolist())


def write_corpus(corpus: Corpus, directory, binary: bool = True) -> None:
    """One PLY per coin plus ``labels.csv`` and ``poses.csv``."""
    from .io import save_cloud

    os.makedirs(directory, exist_ok=True)
    for cloud in corpus.clouds:
        save_cloud(cloud, os.path.join(directory, f"{cloud.id}.ply"), binary=binary)
    with open(os.path.join(directory, "labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "die"])
        for cloud, die in zip(corpus.clouds, corpus.die_ids):
            w.writerow([cloud.id, die])
    with open(os.path.join(directory, "poses.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"])
        for cloud, pose in zip(corpus.clouds, corpus.poses):
            w.writerow([cloud.id] + [repr(float(v)) for v in pose.rotation.ravel()] + [repr(float(v)) for v in pose.translation])
