import numpy as np
import pytest

from lidarchange.core import PointCloud, load_ply, save_ply
from lidarchange.errors import DataError, PlyParseError

ASCII_MINIMAL = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1.5 0 0
0 2.5 1
"""


def test_ascii_minimal(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(ASCII_MINIMAL)
    c = load_ply(p)
    assert len(c) == 3
    assert c.normals is None and c.intensity is None
    assert np.allclose(c.points[2], [0, 2.5, 1])


def test_normals_passthrough_renormalized(tmp_path):
    text = """ply
format ascii 1.0
element vertex 2
property float x
property float y
property float z
property float nx
property float ny
property float nz
end_header
0 0 0 0 0 2
1 1 1 0 3 0
"""
    p = tmp_path / "n.ply"
    p.write_text(text)
    c = load_ply(p)
    assert np.allclose(c.normals, [[0, 0, 1], [0, 1, 0]])


def test_nan_coordinate_names_vertex(tmp_path):
    text = ASCII_MINIMAL.replace("1.5 0 0", "1.5 nan 0")
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(DataError, match="vertex index 1"):
        load_ply(p)


def test_malformed_header_names_line(tmp_path):
    text = ASCII_MINIMAL.replace("element vertex 3", "element vertex three")
    p = tmp_path / "hdr.ply"
    p.write_text(text)
    with pytest.raises(PlyParseError, match="line 3"):
        load_ply(p)


def test_unknown_property_ignored(tmp_path):
    text = """ply
format ascii 1.0
element vertex 1
property float x
property float y
property float z
property uchar red
end_header
1 2 3 255
"""
    p = tmp_path / "extra.ply"
    p.write_text(text)
    c = load_ply(p)
    assert np.allclose(c.points[0], [1, 2, 3])


@pytest.mark.parametrize("binary", [False, True])
def test_roundtrip(tmp_path, binary):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-100, 100, size=(50, 3))
    normals = rng.normal(size=(50, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(points=pts, intensity=rng.uniform(0, 1, 50), normals=normals)
    p = tmp_path / "rt.ply"
    save_ply(cloud, p, binary=binary)
    back = load_ply(p)
    assert np.allclose(back.points, pts, atol=1e-12)
    assert np.allclose(back.normals, normals, atol=1e-6)
    assert np.allclose(back.intensity, cloud.intensity, atol=1e-6)


def test_binary_truncated_body(tmp_path):
    pts = np.zeros((4, 3))
    p = tmp_path / "t.ply"
    save_ply(PointCloud(points=pts), p, binary=True)
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(PlyParseError, match="truncated"):
        load_ply(p)


def test_extra_int_properties_roundtrip(tmp_path):
    pts = np.arange(12, dtype=float).reshape(4, 3)
    p = tmp_path / "e.ply"
    save_ply(PointCloud(points=pts), p, binary=True,
             extra={"semantic_class": np.array([0, 1, 2, 3]),
                    "instance_id": np.array([-1, 5, 5, 9])})
    # reader ignores unknown properties but must still parse geometry
    back = load_ply(p)
    assert np.allclose(back.points, pts)
