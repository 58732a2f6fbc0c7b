"""Error metrics and the registration experiments run on synthetic pairs.

``basin_map`` offsets the true pose over a grid of rotation angles and
translation norms, ``border_sweep`` compares border radii and ICP variants
from random starts, and ``global_method_table`` scores initialization-free
search strategies.  Every report is a deterministic function of its seed.
"""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CoinDieError
from .geometry import PointCloud, RigidTransform
from .globalreg import GlobalConfig, face_normal, global_register
from .icp import IcpConfig, IcpProblem, Variant


@dataclass(frozen=True)
class RegistrationError:
    dt: float
    dR: float


@dataclass(frozen=True)
class SuccessCriterion:
    max_dR: float = 5.0
    max_dt: float = 0.5

    def __post_init__(self):
        if not (self.max_dR > 0 and self.max_dt > 0):
            raise ValueError("success thresholds must be positive")

    def __call__(self, err: RegistrationError) -> bool:
        return err.dR < self.max_dR and err.dt < self.max_dt


def registration_error(estimate: RigidTransform, truth: RigidTransform) -> RegistrationError:
    """Translation distance in mm and relative rotation angle in degrees."""
    dt = float(np.linalg.norm(estimate.translation - truth.translation))
    M = estimate.rotation @ truth.rotation.T
    # same angle as arccos((trace - 1) / 2), but accurate near 0 and near pi
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    angle = np.arctan2(s, c)
    return RegistrationError(dt, float(np.degrees(angle)))


def perturb(truth: RigidTransform, angle_deg: float, shift: np.ndarray, center, axis=(0.0, 0.0, 1.0)) -> RigidTransform:
    """``truth`` followed by a rotation about ``center`` (target frame) and a shift."""
    axis = np.asarray(axis, dtype=float)
    R = RigidTransform.from_rotvec(axis / np.linalg.norm(axis) * np.radians(angle_deg)).rotation
    c = np.asarray(center, dtype=float)
    return RigidTransform(R, c - R @ c + np.asarray(shift, dtype=float)) @ truth


def _run(problem: IcpProblem, init: RigidTransform, truth: RigidTransform) -> Optional[RegistrationError]:
    try:
        return registration_error(problem.run(init).transform, truth)
    except CoinDieError:
        return None


def _csv(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    return "nan" if v is None or not np.isfinite(v) else f"{v:.6f}"


@dataclass
class BasinMap:
    angles: np.ndarray
    norms: np.ndarray
    success: np.ndarray
    errors: List[List[Optional[RegistrationError]]]

    def rate_within(self, max_angle: float, max_norm: float) -> float:
        a = np.abs(self.angles) <= max_angle + 1e-9
        t = self.norms <= max_norm + 1e-9
        return float(self.success[np.ix_(a, t)].mean())

    def to_csv(self) -> str:
        rows = []
        for i, a in enumerate(self.angles):
            for j, t in enumerate(self.norms):
                e = self.errors[i][j]
                rows.append([f"{a:.6f}", f"{t:.6f}", int(self.success[i, j]), _fmt(e and e.dR), _fmt(e and e.dt)])
        return _csv(["angle_deg", "translation_mm", "success", "dR_deg", "dt_mm"], rows)


def basin_map(
    pair: Tuple[PointCloud, PointCloud, RigidTransform],
    angle_grid: Sequence[float] = tuple(np.linspace(-30, 30, 13)),
    translation_grid: Sequence[float] = tuple(np.linspace(0, 5, 11)),
    cfg: Optional[IcpConfig] = None,
    seed: int = 0,
    criterion: SuccessCriterion = SuccessCriterion(),
    problem: Optional[IcpProblem] = None,
) -> BasinMap:
    """Local ICP success over a grid of initial offsets from the truth.

    Each cell rotates the true pose about the target centroid (about the
    face normal) by its angle and shifts it by its norm in one seeded
    random in-plane direction.
    """
    source, target, truth = pair
    cfg = IcpConfig() if cfg is None else cfg
    problem = IcpProblem(source, target, cfg) if problem is None else problem
    rng = np.random.default_rng(seed)
    angles = np.asarray(angle_grid, dtype=float)
    norms = np.asarray(translation_grid, dtype=float)
    center = target.centroid
    axis, e1, e2 = _plane_basis(target)
    success = np.zeros((len(angles), len(norms)), dtype=bool)
    errors = []
    for i, a in enumerate(angles):
        row = []
        for j, t in enumerate(norms):
            phi = rng.uniform(-np.pi, np.pi)
            init = perturb(truth, a, t * (np.cos(phi) * e1 + np.sin(phi) * e2), center, axis)
            e = _run(problem, init, truth)
            row.append(e)
            success[i, j] = e is not None and criterion(e)
        errors.append(row)
    return BasinMap(angles, norms, success, errors)


def _plane_basis(target):
    axis = face_normal(target)
    e1 = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return axis, e1, np.cross(axis, e1)


def random_inits(target: PointCloud, truth: RigidTransform, n: int, rng, max_angle: float = 10.0, max_shift: float = 3.0):
    """Starts spun about the target face normal by up to ``max_angle`` degrees
    and shifted in the face plane by up to ``max_shift`` mm."""
    axis, e1, e2 = _plane_basis(target)
    center = target.centroid
    out = []
    for _ in range(n):
        a = rng.uniform(-max_angle, max_angle)
        t = rng.uniform(0, max_shift)
        phi = rng.uniform(-np.pi, np.pi)
        out.append(perturb(truth, a, t * (np.cos(phi) * e1 + np.sin(phi) * e2), center, axis))
    return out


@dataclass
class SweepRow:
    radius: Optional[float]
    variant: str
    mean_dt: float
    mean_dR: float
    success_rate: float
    failures: int


def border_sweep(
    pairs: Sequence[Tuple[PointCloud, PointCloud, RigidTransform]],
    radii: Sequence[Optional[float]] = (4.0, 6.0, 8.0, 10.0, None),
    variants: Sequence[str] = ("point_to_plane", "point_to_point"),
    n_inits: int = 100,
    seed: int = 0,
    base: Optional[IcpConfig] = None,
    criterion: SuccessCriterion = SuccessCriterion(),
) -> List[SweepRow]:
    """Mean error per (radius, variant) over seeded random starts.

    ``None`` in ``radii`` disables border exclusion.  Every configuration
    sees the same starts.  A run that raises counts as a failure and is
    left out of the means.
    """
    base = IcpConfig() if base is None else base
    rng = np.random.default_rng(seed)
    inits = [random_inits(tgt, truth, n_inits, rng) for _, tgt, truth in pairs]
    rows = []
    for variant in variants:
        for r in radii:
            cfg = replace(base, border_radius_mm=r, variant=Variant(variant))
            errs, fails = [], 0
            for (src, tgt, truth), starts in zip(pairs, inits):
                problem = IcpProblem(src, tgt, cfg)
                for init in starts:
                    e = _run(problem, init, truth)
                    if e is None:
                        fails += 1
                    else:
                        errs.append(e)
            ok = sum(criterion(e) for e in errs)
            total = len(errs) + fails
            rows.append(
                SweepRow(
                    r,
                    Variant(variant).value,
                    float(np.mean([e.dt for e in errs])) if errs else float("nan"),
                    float(np.mean([e.dR for e in errs])) if errs else float("nan"),
                    ok / total,
                    fails,
                )
            )
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    return _csv(
        ["radius_mm", "variant", "mean_dt_mm", "mean_dR_deg", "success_rate", "failures"],
        [["none" if r.radius is None else f"{r.radius:g}", r.variant, _fmt(r.mean_dt), _fmt(r.mean_dR), _fmt(r.success_rate), r.failures] for r in rows],
    )


METHOD_THRESHOLDS = (("dR<1deg", "dR", 1.0), ("dR<5deg", "dR", 5.0), ("dt<0.5mm", "dt", 0.5))


@dataclass
class MethodRow:
    method: str
    rates: Dict[str, float]
    n_pairs: int
    failures: int


def global_method_table(
    pairs: Sequence[Tuple[PointCloud, PointCloud, RigidTransform]],
    methods: Dict[str, Callable[[PointCloud, PointCloud, RigidTransform], RigidTransform]],
    thresholds=METHOD_THRESHOLDS,
) -> List[MethodRow]:
    """Fraction of pairs each method registers under each threshold.

    ``methods`` maps a row name to ``f(source, target, truth) -> estimate``;
    the truth is passed only so that oracle rows can be expressed.  Failed
    registrations count against every column.
    """
    rows = []
    for name, fn in methods.items():
        errs, fails = [], 0
        for src, tgt, truth in pairs:
            try:
                errs.append(registration_error(fn(src, tgt, truth), truth))
            except CoinDieError:
                fails += 1
        n = len(pairs)
        rates = {col: sum(getattr(e, attr) < lim for e in errs) / n for col, attr, lim in thresholds}
        rows.append(MethodRow(name, rates, n, fails))
    return rows


def search_method(cfg: GlobalConfig):
    """Method callable for :func:`global_method_table` running ``global_register``."""

    def run(src, tgt, _truth):
        return global_register(src, tgt, cfg).transform

    return run


def method_csv(rows: Sequence[MethodRow], thresholds=METHOD_THRESHOLDS) -> str:
    cols = [c for c, _, _ in thresholds]
    return _csv(["method"] + cols + ["pairs", "failures"], [[r.method] + [_fmt(r.rates[c]) for c in cols] + [r.n_pairs, r.failures] for r in rows])


def synthetic_pairs(
    n_pairs: int,
    seed: int = 0,
    voxel_size: Optional[float] = 0.12,
    poses: str = "random",
    damage_profile=None,
) -> List[Tuple[PointCloud, PointCloud, RigidTransform]]:
    """Same-die pairs ``(source, target, truth)`` with normals, one die per pair."""
    from .pipeline import prepare
    from .synth import make_corpus

    corpus = make_corpus(n_pairs, 2, damage_profile, seed=seed, poses=poses)
    clouds = [prepare(c, voxel_size) for c in corpus.clouds]
    return [(clouds[2 * k], clouds[2 * k + 1], corpus.relative_pose(2 * k, 2 * k + 1)) for k in range(n_pairs)]


def summary_line(name: str, passed: bool, detail: str = "") -> str:
    return f"{'PASS' if passed else 'FAIL'} {name}" + (f": {detail}" if detail else "")
