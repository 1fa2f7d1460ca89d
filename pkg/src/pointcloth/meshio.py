"""File formats: ASCII OBJ meshes, binary little-endian PLY point clouds, and
the JSON rig sidecar (skeleton + skinning weights).

OBJ floats are written with repr-level precision so a write/read/write round
trip is byte-identical.  PLY stores x,y,z,nx,ny,nz as little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, Skeleton, TemplateBody, vertex_normals

PLY_MAGIC = b"ply"


def write_obj(path, vertices: np.ndarray, faces: np.ndarray,
              normals: np.ndarray | None = None) -> None:
    """Write an ASCII OBJ with v/vn/f records (faces as ``f v//vn ...``)."""
    lines = []
    for v in vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    if normals is not None:
        for n in normals:
            lines.append(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
        for f in faces:
            lines.append("f " + " ".join(f"{i + 1}//{i + 1}" for i in f))
    else:
        for f in faces:
            lines.append("f " + " ".join(str(i + 1) for i in f))
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read an ASCII OBJ.  Returns (vertices, faces, normals-or-None).

    Only v/vn/f records are interpreted; parse failures report the 1-based
    line number.  Face vertex indices must be in range.
    """
    verts: list[list[float]] = []
    norms: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) != 4:
                    raise ValueError("only triangular faces are supported")
                face = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                faces.append(face)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"OBJ parse error at line {lineno}: {raw!r} ({exc})") from None
    vertices = np.asarray(verts, dtype=np.float64)
    face_arr = np.asarray(faces, dtype=np.int64)
    if face_arr.size and (face_arr.min() < 0 or face_arr.max() >= len(verts)):
        bad = np.nonzero((face_arr < 0) | (face_arr >= len(verts)))[0][0]
        # recover the offending line number for the error message
        f_lineno = _face_line_number(path, int(bad))
        raise ValueError(f"OBJ parse error at line {f_lineno}: face index out of range")
    normals = np.asarray(norms, dtype=np.float64) if norms else None
    return vertices, face_arr, normals


def _face_line_number(path, face_ordinal: int) -> int:
    seen = -1
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if raw.strip().startswith("f "):
            seen += 1
            if seen == face_ordinal:
                return lineno
    return -1


def write_ply(path, cloud: PointCloud) -> None:
    """Write a binary little-endian PLY with float32 x,y,z,nx,ny,nz."""
    if len(cloud) == 0:
        raise ValueError("refusing to write empty point cloud")
    if cloud.normals is None:
        raise ValueError("point cloud export requires normals")
    header = "\n".join([
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property float nx",
        "property float ny",
        "property float nz",
        "end_header",
    ]) + "\n"
    data = np.hstack([cloud.positions, cloud.normals]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> PointCloud:
    """Read a binary little-endian PLY written by :func:`write_ply`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(PLY_MAGIC):
        raise ValueError(f"{path}: not a PLY file")
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    header = blob[:end].decode("ascii").splitlines()
    count = None
    props: list[str] = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:2] == ["property", "float"]:
            props.append(parts[2])
        elif parts[0] == "format" and parts[1] != "binary_little_endian":
            raise ValueError(f"{path}: unsupported PLY format {parts[1]}")
    if count is None or props[:6] != ["x", "y", "z", "nx", "ny", "nz"]:
        raise ValueError(f"{path}: unsupported PLY layout")
    data = np.frombuffer(blob[end:], dtype="<f4", count=count * 6).reshape(count, 6)
    return PointCloud(positions=data[:, :3].astype(np.float64),
                      normals=data[:, 3:].astype(np.float64))


def write_rig_json(path, body: TemplateBody) -> None:
    """Write the skeleton + skinning sidecar (documented schema: joints[],
    parents[], offsets[], weights[N][J])."""
    doc = {
        "joints": list(body.skeleton.names),
        "parents": [int(p) for p in body.skeleton.parents],
        "offsets": body.skeleton.offsets.tolist(),
        "weights": body.skinning.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_rigged_mesh(mesh_file, skinning_file) -> TemplateBody:
    """Assemble a TemplateBody from an OBJ mesh plus a rig JSON sidecar.

    Skinning rows must sum to 1 within [0.99, 1.01]; they are renormalized.
    A row outside that band is rejected with its index.
    """
    vertices, faces, normals = read_obj(mesh_file)
    if faces.size == 0:
        raise ValueError(f"{mesh_file}: mesh has no faces")
    try:
        doc = json.loads(Path(skinning_file).read_text())
        names = tuple(doc["joints"])
        parents = np.asarray(doc["parents"], dtype=np.int64)
        offsets = np.asarray(doc["offsets"], dtype=np.float64)
        weights = np.asarray(doc["weights"], dtype=np.float64)
    except (KeyError, json.JSONDecodeError) as exc:
        raise ValueError(f"{skinning_file}: malformed rig file ({exc})") from None
    if weights.shape != (len(vertices), len(names)):
        raise ValueError(
            f"{skinning_file}: weights shape {weights.shape} does not match "
            f"{len(vertices)} vertices x {len(names)} joints")
    row = weights.sum(axis=1)
    bad = np.nonzero((row < 0.99) | (row > 1.01))[0]
    if bad.size:
        raise ValueError(
            f"{skinning_file}: weight row {bad[0]} sums to {row[bad[0]]:.4f}, "
            "outside [0.99, 1.01]")
    weights = weights / row[:, None]
    if normals is None:
        normals = vertex_normals(vertices, faces)
    body = TemplateBody(vertices=vertices, faces=faces, vertex_normals=normals,
                        skinning=weights,
                        skeleton=Skeleton(names=names, parents=parents, offsets=offsets))
    body.validate()
    return body


def export_body(body: TemplateBody, mesh_path, rig_path) -> None:
    """Write a TemplateBody as OBJ + rig JSON (inverse of load_rigged_mesh)."""
    write_obj(mesh_path, body.vertices, body.faces, body.vertex_normals)
    write_rig_json(rig_path, body)


def checkpoint_pack(named: dict[str, np.ndarray], meta: dict) -> bytes:
    """Serialize named tensors + JSON metadata into the checkpoint container.

    Layout: magic, version, meta length + JSON, tensor count, then per tensor
    a name table entry (name, dtype code, shape) followed by raw little-endian
    data.  Bit-exact round trip.
    """
    out = bytearray()
    out += b"PTCLOTH1"
    out += struct.pack("<I", 1)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta_blob))
    out += meta_blob
    out += struct.pack("<I", len(named))
    codes = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
    for name, arr in named.items():
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # 0-d arrays are already contiguous
        dt = arr.dtype.newbyteorder("<")
        if np.dtype(dt) not in codes:
            raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", codes[np.dtype(dt)], arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype(dt, copy=False).tobytes()
    return bytes(out)


def checkpoint_unpack(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`checkpoint_pack`."""
    if blob[:8] != b"PTCLOTH1":
        raise ValueError("not a pointcloth checkpoint")
    off = 8
    (version,) = struct.unpack_from("<I", blob, off); off += 4
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, off); off += 4
    meta = json.loads(blob[off:off + meta_len].decode("utf-8")); off += meta_len
    (count,) = struct.unpack_from("<I", blob, off); off += 4
    dtypes = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
    named: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off); off += 2
        name = blob[off:off + nlen].decode("utf-8"); off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off); off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off); off += 4 * ndim
        dt = dtypes[code]
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype=dt, count=n_items, offset=off).reshape(shape)
        off += n_items * dt.itemsize
        named[name] = arr.copy()
    return named, meta


def save_checkpoint(path, named: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(checkpoint_pack(named, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return checkpoint_unpack(Path(path).read_bytes())
