import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coindie.errors import ConfigError, EmptyCloud, ParseError
from coindie.geometry import PointCloud
from coindie.io import (
    CloudFormat,
    PipelineConfig,
    detect_format,
    load_cloud,
    read_labels,
    read_pairs,
    save_cloud,
    write_pairs,
)

ASCII_PLY = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
end_header
0.5 -1.25 3
1e-3 2.5 -0.125
7 8 9
"""


def test_ascii_ply_fixture(tmp_path):
    p = tmp_path / "three.ply"
    p.write_text(ASCII_PLY)
    c = load_cloud(p)
    assert c.id == "three" and c.normals is None
    assert np.array_equal(c.points, [[0.5, -1.25, 3.0], [1e-3, 2.5, -0.125], [7.0, 8.0, 9.0]])
    assert detect_format(p) is CloudFormat.PLY_ASCII


def test_xyz_trailing_blank_lines(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("1 2 3\n4 5 6\n\n\n   \n")
    assert np.array_equal(load_cloud(p).points, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])


def _cloud(rng, n=500, normals=True):
    pts = rng.normal(size=(n, 3)) * 10
    nrm = None
    if normals:
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm, "c")


@pytest.mark.parametrize("name,binary", [("c.ply", True), ("c.ply", False), ("c.xyz", None)])
@pytest.mark.parametrize("normals", [True, False])
def test_round_trip_bitwise(tmp_path, rng, name, binary, normals):
    c = _cloud(rng, normals=normals)
    p = tmp_path / name
    save_cloud(c, p, binary=binary)
    back = load_cloud(p)
    assert np.array_equal(back.points, c.points)
    if normals:
        assert np.array_equal(back.normals, c.normals)
    else:
        assert back.normals is None


def test_binary_float32_round_trip(tmp_path, rng):
    c = PointCloud(rng.normal(size=(50, 3)).astype(np.float32).astype(float))
    p = tmp_path / "f.ply"
    save_cloud(c, p, dtype="f4")
    assert b"property float x" in p.read_bytes()[:200]
    assert np.array_equal(load_cloud(p).points, c.points)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3), min_size=1, max_size=30))
def test_round_trip_property(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    c = PointCloud(np.array(rows, dtype=float))
    for name, binary in (("a.ply", True), ("b.ply", False), ("c.xyz", None)):
        save_cloud(c, d / name, binary=binary)
        assert np.array_equal(load_cloud(d / name).points, c.points)


def test_normals_are_normalized(tmp_path):
    p = tmp_path / "n.xyz"
    p.write_text("0 0 0 0 0 2\n1 0 0 3 0 4\n")
    c = load_cloud(p)
    assert np.allclose(c.normals, [[0, 0, 1], [0.6, 0, 0.8]])


def test_ply_with_faces_and_extra_properties(tmp_path):
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            "element vertex 2",
            "property double x",
            "property double y",
            "property double z",
            "property uchar red",
            "element face 1",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    body = struct.pack("<dddB", 1.0, 2.0, 3.0, 255) + struct.pack("<dddB", 4.0, 5.0, 6.0, 0) + struct.pack("<Biii", 3, 0, 1, 0)
    p = tmp_path / "mesh.ply"
    p.write_bytes(header.encode() + b"\n" + body)
    assert np.array_equal(load_cloud(p).points, [[1, 2, 3], [4, 5, 6]])


def _ply(tmp_path, text, name="bad.ply"):
    p = tmp_path / name
    p.write_bytes(text if isinstance(text, bytes) else text.encode())
    return p


def test_parse_errors_name_location(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        load_cloud(_ply(tmp_path, "plx\n"))
    with pytest.raises(ParseError, match="line 2"):
        load_cloud(_ply(tmp_path, "ply\nformat binary_big_endian 1.0\nend_header\n"))
    bad_row = ASCII_PLY.replace("1e-3 2.5 -0.125", "1e-3 oops -0.125")
    with pytest.raises(ParseError, match="line 10"):
        load_cloud(_ply(tmp_path, bad_row))
    short_row = ASCII_PLY.replace("7 8 9", "7 8")
    with pytest.raises(ParseError, match="line 11"):
        load_cloud(_ply(tmp_path, short_row))
    with pytest.raises(ParseError, match="'z'"):
        load_cloud(_ply(tmp_path, ASCII_PLY.replace("property float z\n", "")))
    with pytest.raises(ParseError, match="float or double"):
        load_cloud(_ply(tmp_path, ASCII_PLY.replace("property float x", "property int x")))
    with pytest.raises(ParseError, match="end_header"):
        load_cloud(_ply(tmp_path, "ply\nformat ascii 1.0\n"))


def test_truncated_binary_reports_byte_offset(tmp_path, rng):
    p = tmp_path / "t.ply"
    save_cloud(_cloud(rng, 10, normals=False), p)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(ParseError, match=f"byte {len(data) - 5}"):
        load_cloud(p)


def test_xyz_errors(tmp_path):
    p = tmp_path / "e.xyz"
    p.write_text("1 2 3\n4 5\n")
    with pytest.raises(ParseError, match="line 2"):
        load_cloud(p)
    p.write_text("1 2 3 4\n")
    with pytest.raises(ParseError, match="line 1"):
        load_cloud(p)
    p.write_text("\n\n")
    with pytest.raises(EmptyCloud):
        load_cloud(p)


def test_empty_ply(tmp_path):
    empty = ASCII_PLY.split("end_header")[0].replace("vertex 3", "vertex 0") + "end_header\n"
    with pytest.raises(EmptyCloud):
        load_cloud(_ply(tmp_path, empty))


def test_pairs_and_labels(tmp_path):
    p = tmp_path / "pairs.csv"
    write_pairs([("a", "b", 1), ("a", "c", 0)], p)
    assert p.read_text() == "idA,idB,label\na,b,1\na,c,0\n"
    assert read_pairs(p) == [("a", "b", 1), ("a", "c", 0)]
    p.write_text("a,b,1\n")
    assert read_pairs(p) == [("a", "b", 1)]
    p.write_text("a,b,2\n")
    with pytest.raises(ParseError, match="a,b"):
        read_pairs(p)
    lab = tmp_path / "labels.csv"
    lab.write_text("id,die\nx,d1\ny,d2\n")
    assert read_labels(lab) == {"x": "d1", "y": "d2"}
    lab.write_text("x,d1\nx,d2\n")
    with pytest.raises(ParseError):
        read_labels(lab)


def test_config_parse():
    cfg = PipelineConfig.parse("# comment\nborder_radius_mm = 6\nlambda = 0.5\nmax_correspondence_distance = none\nstrategy = grid\n")
    assert cfg.border_radius_mm == 6.0 and cfg.lam == 0.5 and cfg.max_correspondence_distance is None
    assert cfg.icp_config().border_radius_mm == 6.0
    assert cfg.global_config().strategy.value == "grid"
    assert PipelineConfig.parse("") == PipelineConfig()


def test_config_round_trip():
    cfg = PipelineConfig(trials=17, voxel_size=0.2, alpha=0.7, seed=9)
    assert PipelineConfig.parse(cfg.dumps()) == cfg


@pytest.mark.parametrize(
    "text,match",
    [("bogus = 1\n", "bogus"), ("trials = many\n", "trials"), ("trials\n", "key = value"), ("variant = sideways\n", "sideways"), ("_ALIASES = 1\n", "_ALIASES")],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.parse(text)
