"""Round-trip and validation tests for mesh, point-cloud and checkpoint IO."""

import numpy as np
import pytest

from pointcloth.geometry import PointCloud
from pointcloth.meshio import (
    checkpoint_pack,
    checkpoint_unpack,
    export_body,
    load_checkpoint,
    load_rigged_mesh,
    read_obj,
    read_ply,
    save_checkpoint,
    write_obj,
    write_ply,
    write_rig_json,
)


def test_obj_round_trip_exact(humanoid, tmp_path):
    p = tmp_path / "body.obj"
    write_obj(p, humanoid.vertices, humanoid.faces, humanoid.vertex_normals)
    v, f, n = read_obj(p)
    # %.17g preserves every float64 exactly
    assert np.array_equal(v, humanoid.vertices)
    assert np.array_equal(f, humanoid.faces)
    assert np.array_equal(n, humanoid.vertex_normals)


def test_obj_without_normals(tmp_path):
    p = tmp_path / "tri.obj"
    verts = np.array([[0.1, 0.2, 0.3], [1.0, 0, 0], [0.0, 1, 0]])
    write_obj(p, verts, np.array([[0, 1, 2]]))
    v, f, n = read_obj(p)
    assert np.array_equal(v, verts)
    assert f.tolist() == [[0, 1, 2]]
    assert n is None


def test_obj_face_index_out_of_range_names_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 9\n")
    with pytest.raises(ValueError, match="line 5"):
        read_obj(p)


def test_obj_malformed_face_names_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nf 1 2\n")
    with pytest.raises(ValueError, match="line 2"):
        read_obj(p)


def test_obj_non_numeric_vertex(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v a b c\n")
    with pytest.raises(ValueError, match="line 1"):
        read_obj(p)


def test_ply_round_trip(tmp_path, rng):
    pos = rng.normal(size=(100, 3))
    nrm = rng.normal(size=(100, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    p = tmp_path / "cloud.ply"
    write_ply(p, PointCloud(pos, nrm))
    back = read_ply(p)
    # storage is float32; the read-back must match the f32 cast exactly
    assert np.array_equal(back.positions, pos.astype("<f4").astype(np.float64))
    assert np.array_equal(back.normals, nrm.astype("<f4").astype(np.float64))


def test_ply_header_contract(tmp_path):
    nrm = np.array([[0.0, 0.0, 1.0]])
    p = tmp_path / "one.ply"
    write_ply(p, PointCloud(np.array([[1.0, 2.0, 3.0]]), nrm))
    blob = p.read_bytes()
    header = blob[: blob.index(b"end_header\n")].decode()
    assert "format binary_little_endian 1.0" in header
    assert "element vertex 1" in header
    for prop in ("x", "y", "z", "nx", "ny", "nz"):
        assert f"property float {prop}" in header
    payload = blob[blob.index(b"end_header\n") + len(b"end_header\n"):]
    assert len(payload) == 6 * 4


def test_ply_refuses_empty_or_normalless(tmp_path):
    with pytest.raises(ValueError):
        write_ply(tmp_path / "x.ply", PointCloud(np.zeros((0, 3))))
    with pytest.raises(ValueError):
        write_ply(tmp_path / "y.ply", PointCloud(np.zeros((2, 3))))


def test_ply_rejects_foreign_layout(tmp_path):
    p = tmp_path / "alien.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ValueError):
        read_ply(p)
    q = tmp_path / "notply.bin"
    q.write_bytes(b"\x00\x01\x02")
    with pytest.raises(ValueError):
        read_ply(q)


def test_rigged_mesh_round_trip(humanoid, tmp_path):
    export_body(humanoid, tmp_path / "b.obj", tmp_path / "b.rig.json")
    back = load_rigged_mesh(tmp_path / "b.obj", tmp_path / "b.rig.json")
    assert np.array_equal(back.vertices, humanoid.vertices)
    assert np.array_equal(back.faces, humanoid.faces)
    assert back.skeleton.names == humanoid.skeleton.names
    assert np.array_equal(back.skeleton.parents, humanoid.skeleton.parents)
    np.testing.assert_allclose(back.skinning, humanoid.skinning, atol=1e-15)


def test_rigged_mesh_rejects_bad_weight_row(humanoid, tmp_path):
    write_obj(tmp_path / "b.obj", humanoid.vertices, humanoid.faces)
    bad = humanoid.skinning.copy()
    bad[7] *= 0.5
    clone = type(humanoid)(vertices=humanoid.vertices, faces=humanoid.faces,
                           vertex_normals=humanoid.vertex_normals,
                           skinning=bad, skeleton=humanoid.skeleton)
    write_rig_json(tmp_path / "b.rig.json", clone)
    with pytest.raises(ValueError, match="row 7"):
        load_rigged_mesh(tmp_path / "b.obj", tmp_path / "b.rig.json")


def test_rigged_mesh_renormalizes_tolerable_rows(humanoid, tmp_path):
    write_obj(tmp_path / "b.obj", humanoid.vertices, humanoid.faces)
    near = humanoid.skinning * 1.005
    clone = type(humanoid)(vertices=humanoid.vertices, faces=humanoid.faces,
                           vertex_normals=humanoid.vertex_normals,
                           skinning=near, skeleton=humanoid.skeleton)
    write_rig_json(tmp_path / "b.rig.json", clone)
    back = load_rigged_mesh(tmp_path / "b.obj", tmp_path / "b.rig.json")
    np.testing.assert_allclose(back.skinning.sum(axis=1), 1.0, atol=1e-9)


def test_rigged_mesh_malformed_json(humanoid, tmp_path):
    write_obj(tmp_path / "b.obj", humanoid.vertices, humanoid.faces)
    (tmp_path / "b.rig.json").write_text("{not json")
    with pytest.raises(ValueError, match="malformed"):
        load_rigged_mesh(tmp_path / "b.obj", tmp_path / "b.rig.json")


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_round_trip_bit_exact(rng, tmp_path):
    named = {
        "enc.w0": rng.normal(size=(8, 3)).astype("<f4"),
        "dec.bias": rng.normal(size=17),
        "tables/fps": rng.integers(0, 100, size=(4, 9)).astype("<i8"),
        "scalar": np.float64(3.5),
    }
    meta = {"epoch": 12, "seed": 99, "note": "unit-test"}
    p = tmp_path / "model.ckpt"
    save_checkpoint(p, named, meta)
    back, meta_back = load_checkpoint(p)
    assert meta_back == meta
    assert set(back) == set(named)
    for k in named:
        a = np.asarray(named[k])
        assert back[k].dtype == a.dtype.newbyteorder("<")
        assert back[k].shape == a.shape
        assert a.tobytes() == back[k].tobytes()
    # container bytes themselves are deterministic
    assert checkpoint_pack(named, meta) == checkpoint_pack(named, meta)


def test_checkpoint_rejects_foreign_blob():
    with pytest.raises(ValueError, match="checkpoint"):
        checkpoint_unpack(b"GARBAGE!" + b"\x00" * 32)


def test_checkpoint_rejects_unsupported_dtype():
    with pytest.raises(ValueError, match="dtype"):
        checkpoint_pack({"x": np.zeros(3, dtype=np.float16)}, {})


def test_checkpoint_rejects_future_version(rng):
    blob = bytearray(checkpoint_pack({"x": rng.normal(size=3)}, {}))
    blob[8:12] = (99).to_bytes(4, "little")
    with pytest.raises(ValueError, match="version"):
        checkpoint_unpack(bytes(blob))
