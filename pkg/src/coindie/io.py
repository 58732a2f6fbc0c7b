"""Point-cloud files, label tables and the pipeline configuration.

Coordinates are millimetres throughout; no unit detection is attempted.
Supported cloud formats are PLY (ASCII or binary little-endian, x/y/z as
float or double, optional nx/ny/nz) and whitespace-separated XYZ with 3 or
6 columns.
"""
from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, EmptyCloud, ParseError
from .geometry import PointCloud


class CloudFormat(str, enum.Enum):
    PLY_ASCII = "ply_ascii"
    PLY_BINARY_LE = "ply_binary_le"
    XYZ = "xyz"


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _unit_normals(normals, path):
    n = np.asarray(normals, dtype=float)
    norm = np.linalg.norm(n, axis=1)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        bad = int(np.flatnonzero((norm == 0) | ~np.isfinite(norm))[0])
        raise ParseError(f"{path}: point {bad}: normal has zero or non-finite length")
    # leave normals that are already unit untouched so files round-trip bitwise
    off = np.abs(norm - 1.0) > 1e-12
    if np.any(off):
        n = n.copy()
        n[off] /= norm[off, None]
    return n


def _finish(points, normals, path, cloud_id):
    if len(points) == 0:
        raise EmptyCloud(f"{path}: no points")
    if not np.all(np.isfinite(points)):
        raise ParseError(f"{path}: non-finite coordinate")
    if normals is not None:
        normals = _unit_normals(normals, path)
    return PointCloud(points, normals, cloud_id)


def _read_header(fh, path):
    first = fh.readline()
    if first.rstrip(b"\r\n") != b"ply":
        raise ParseError(f"{path}: line 1: missing 'ply' magic")
    fmt = None
    elements: List[Tuple[str, int, list]] = []
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise ParseError(f"{path}: line {line_no}: header has no end_header")
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}: line {line_no}: unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"{path}: line {line_no}: bad element declaration")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: line {line_no}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"{path}: line {line_no}: bad list property")
                elements[-1][2].append((parts[4], None))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"{path}: line {line_no}: unknown property type {line!r}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"{path}: line {line_no}: unexpected header keyword {parts[0]!r}")
    if fmt is None:
        raise ParseError(f"{path}: header declares no format")
    return fmt, elements, line_no


def _columns(props, path):
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"{path}: vertex element lacks property {axis!r}")
        if props[names.index(axis)][1] not in ("f4", "f8"):
            raise ParseError(f"{path}: property {axis!r} must be float or double")
    has_normals = all(a in names for a in ("nx", "ny", "nz"))
    return names, has_normals


def _load_ply(path, cloud_id):
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _read_header(fh, path)
        body = fh.read()
        header_bytes = os.path.getsize(path) - len(body)
    if not any(e[0] == "vertex" for e in elements):
        raise ParseError(f"{path}: no vertex element")
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").split("\n")
        cursor = 0
        for name, count, props in elements:
            if name != "vertex":
                # rows of other elements are skipped line by line
                cursor += count
                continue
            names, has_normals = _columns(props, path)
            if any(t is None for _, t in props):
                raise ParseError(f"{path}: list properties on vertices are not supported")
            rows = lines[cursor : cursor + count]
            if len(rows) < count:
                raise ParseError(f"{path}: line {header_lines + len(lines) + 1}: expected {count} vertices")
            data = np.empty((count, len(props)))
            for k, row in enumerate(rows):
                vals = row.split()
                if len(vals) != len(props):
                    raise ParseError(f"{path}: line {header_lines + cursor + k + 1}: expected {len(props)} values")
                try:
                    data[k] = [float(v) for v in vals]
                except ValueError:
                    raise ParseError(f"{path}: line {header_lines + cursor + k + 1}: non-numeric value") from None
            break
    else:
        offset = 0
        for name, count, props in elements:
            if any(t is None for _, t in props):
                raise ParseError(f"{path}: byte {header_bytes + offset}: list properties are not supported")
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if offset + need > len(body):
                raise ParseError(f"{path}: byte {header_bytes + len(body)}: truncated {name} data, need {need} bytes")
            if name == "vertex":
                names, has_normals = _columns(props, path)
                rec = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                data = np.column_stack([rec[p].astype(float) for p in names])
                break
            offset += need
    pts = np.column_stack([data[:, names.index(a)] for a in "xyz"])
    nrm = np.column_stack([data[:, names.index(a)] for a in ("nx", "ny", "nz")]) if has_normals else None
    return _finish(pts, nrm, path, cloud_id)


def _load_xyz(path, cloud_id):
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.replace(",", " ").split()
            if width is None:
                width = len(vals)
                if width not in (3, 6):
                    raise ParseError(f"{path}: line {line_no}: expected 3 or 6 columns, found {width}")
            elif len(vals) != width:
                raise ParseError(f"{path}: line {line_no}: expected {width} columns, found {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise ParseError(f"{path}: line {line_no}: non-numeric value") from None
    if not rows:
        raise EmptyCloud(f"{path}: no points")
    data = np.array(rows)
    return _finish(data[:, :3], data[:, 3:] if width == 6 else None, path, cloud_id)


def detect_format(path) -> CloudFormat:
    if str(path).lower().endswith(".ply"):
        with open(path, "rb") as fh:
            head = fh.read(512).decode("ascii", errors="replace")
        return CloudFormat.PLY_BINARY_LE if "binary_little_endian" in head else CloudFormat.PLY_ASCII
    return CloudFormat.XYZ


def load_cloud(path, cloud_id: Optional[str] = None) -> PointCloud:
    """Read a cloud; the id defaults to the file name without extension.

    Raises
    ------
    ParseError
        Malformed content; the message names the line or byte offset.
    EmptyCloud
        The file declares or contains no points.
    """
    cloud_id = os.path.splitext(os.path.basename(str(path)))[0] if cloud_id is None else cloud_id
    if detect_format(path) is CloudFormat.XYZ:
        return _load_xyz(path, cloud_id)
    return _load_ply(path, cloud_id)


def save_cloud(cloud: PointCloud, path, binary: Optional[bool] = None, dtype: str = "f8") -> None:
    """Write ``cloud`` as PLY (by extension ``.ply``) or XYZ.

    ASCII output uses 17 significant digits so float64 data round-trips.
    """
    if dtype not in ("f4", "f8"):
        raise ValueError("dtype must be 'f4' or 'f8'")
    has_n = cloud.normals is not None
    data = cloud.points if not has_n else np.hstack([cloud.points, cloud.normals])
    if not str(path).lower().endswith(".ply"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in data:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        return
    binary = True if binary is None else binary
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if has_n else [])
    tname = "float" if dtype == "f4" else "double"
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {tname} {n}" for n in names] + ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<" + dtype).tobytes())
        else:
            fmt = "{:.9g}" if dtype == "f4" else "{:.17g}"
            vals = data.astype(dtype)
            fh.write("".join(" ".join(fmt.format(v) for v in row) + "\n" for row in vals).encode("ascii"))


def find_cloud(directory, coin_id: str) -> str:
    """Path of the cloud file for ``coin_id`` inside ``directory``."""
    for ext in (".ply", ".xyz", ".txt", ""):
        p = os.path.join(directory, coin_id + ext)
        if os.path.isfile(p):
            return p
    raise FileNotFoundError(f"no cloud file for id {coin_id!r} in {directory}")


def list_clouds(directory) -> List[str]:
    """Cloud files of ``directory`` in sorted order."""
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith((".ply", ".xyz")))
    return [os.path.join(directory, f) for f in names]


def _rows(path, n_cols, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and [c.strip() for c in rows[0]] == header:
        rows = rows[1:]
        start = 2
    else:
        start = 1
    out = []
    for k, r in enumerate(rows):
        if len(r) != n_cols:
            raise ParseError(f"{path}: line {start + k}: expected {n_cols} fields, found {len(r)}")
        out.append([c.strip() for c in r])
    return out


def read_pairs(path) -> List[Tuple[str, str, int]]:
    """``idA,idB,label`` rows; a header row is optional."""
    out = []
    for k, (a, b, lab) in enumerate(_rows(path, 3, ["idA", "idB", "label"])):
        if lab not in ("0", "1"):
            raise ParseError(f"{path}: pair {a},{b}: label must be 0 or 1, got {lab!r}")
        out.append((a, b, int(lab)))
    return out


def write_pairs(pairs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["idA", "idB", "label"])
        w.writerows(pairs)


def read_labels(path) -> Dict[str, str]:
    """``id,die`` rows as a dict; a header row is optional."""
    labels = {}
    for coin, die in _rows(path, 2, ["id", "die"]):
        if coin in labels:
            raise ParseError(f"{path}: duplicate id {coin!r}")
        labels[coin] = die
    return labels


def read_poses(path) -> Dict[str, np.ndarray]:
    """Ground-truth poses written by the generator, as 4x4 matrices."""
    poses = {}
    for row in _rows(path, 13, ["id"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"]):
        m = np.eye(4)
        vals = [float(v) for v in row[1:]]
        m[:3, :3] = np.reshape(vals[:9], (3, 3))
        m[:3, 3] = vals[9:]
        poses[row[0]] = m
    return poses


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable default of the pipeline, overridable from a key=value file."""

    border_radius_mm: Optional[float] = 8.0
    max_iterations: int = 60
    translation_epsilon: float = 1e-3
    rotation_epsilon: float = 1e-4
    max_correspondence_distance: Optional[float] = 2.0
    variant: str = "point_to_plane"
    strategy: str = "random"
    trials: int = 100
    grid_angles: int = 12
    grid_shifts: int = 3
    r_max: float = 5.0
    coarse_voxel_mm: Optional[float] = 0.7
    trial_max_iterations: Optional[int] = 10
    normals_k: int = 20
    voxel_size: Optional[float] = None
    bins: int = 64
    h_max: float = 1.0
    lam: float = 1e-3
    alpha: float = 0.5
    seed: int = 0

    # config files say "lambda"; the attribute avoids the keyword
    _ALIASES = {"lambda": "lam"}

    def icp_config(self):
        from .icp import IcpConfig

        return IcpConfig(
            max_iterations=self.max_iterations,
            translation_epsilon=self.translation_epsilon,
            rotation_epsilon=self.rotation_epsilon,
            border_radius_mm=self.border_radius_mm,
            variant=self.variant,
            max_correspondence_distance=self.max_correspondence_distance,
        )

    def global_config(self):
        from .globalreg import GlobalConfig, SearchSpace3DOF

        return GlobalConfig(
            strategy=self.strategy,
            trials=self.trials,
            grid_shape=(self.grid_angles, self.grid_shifts, self.grid_shifts),
            rng_seed=self.seed,
            icp=self.icp_config(),
            space=SearchSpace3DOF(r_max=self.r_max),
            coarse_voxel_mm=self.coarse_voxel_mm,
            trial_max_iterations=self.trial_max_iterations,
        )

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values = {}
        for line_no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}: line {line_no}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            name = cls._ALIASES.get(key, key)
            if name not in types or name.startswith("_"):
                raise ConfigError(f"{source}: line {line_no}: unknown key {key!r}")
            values[name] = _convert(val, getattr(defaults, name), types[name], key, source, line_no)
        try:
            cfg = replace(defaults, **values)
            cfg.global_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), str(path))

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            out.append(f"{key} = {'none' if v is None else v}")
        return "\n".join(out) + "\n"


def _convert(val, default, annotation, key, source, line_no):
    optional = "Optional" in str(annotation)
    if optional and val.lower() == "none":
        return None
    base = str(annotation).replace("Optional[", "").rstrip("]")
    try:
        if base == "int":
            return int(val)
        if base == "float":
            return float(val)
    except ValueError:
        raise ConfigError(f"{source}: line {line_no}: {key} expects {base}, got {val!r}") from None
    return val
