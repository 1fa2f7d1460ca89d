"""Mesh geometry kernels: barycentric surface addressing, sampling, local
frames, farthest-point sampling, nearest-neighbor queries and the Chamfer
metric.

Everything here is plain float64 numpy over immutable inputs.  The accelerated
nearest-neighbor path (scipy cKDTree) is required to agree with brute force
exactly; ties are broken by the lowest target index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy: ``parents[j]`` is -1 for the root, ``offsets[j]`` is the
    rest-pose offset from the parent joint (absolute position for the root)."""

    names: tuple[str, ...]
    parents: np.ndarray  # (J,) int
    offsets: np.ndarray  # (J, 3) float

    @property
    def num_joints(self) -> int:
        return len(self.names)

    def rest_positions(self) -> np.ndarray:
        """World-space joint positions in the rest pose, (J, 3)."""
        pos = np.zeros((self.num_joints, 3))
        for j in range(self.num_joints):
            p = self.parents[j]
            pos[j] = self.offsets[j] if p < 0 else pos[p] + self.offsets[j]
        return pos


@dataclass(frozen=True)
class TemplateBody:
    """Rest-pose body mesh with skeleton and skinning weights.

    The template surface is the constant domain on which all per-vertex
    feature fields live; every surface point is addressed by a face index
    plus barycentric weights (see :class:`SurfacePoint`).
    """

    vertices: np.ndarray        # (N, 3) float, meters
    faces: np.ndarray           # (F, 3) int
    vertex_normals: np.ndarray  # (N, 3) float, unit
    skinning: np.ndarray        # (N, J) float, rows sum to 1
    skeleton: Skeleton

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def validate(self) -> None:
        n = self.num_vertices
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise ValueError("faces reference invalid vertex indices")
        if self.skinning.shape != (n, self.skeleton.num_joints):
            raise ValueError("skinning shape does not match vertices/joints")
        if (self.skinning < -1e-12).any():
            raise ValueError("skinning weights must be non-negative")
        row = self.skinning.sum(axis=1)
        bad = np.nonzero(np.abs(row - 1.0) > 1e-9)[0]
        if bad.size:
            raise ValueError(f"skinning row {bad[0]} sums to {row[bad[0]]!r}, expected 1")


@dataclass(frozen=True)
class SurfacePoint:
    """A point on the template surface: face index + barycentric weights."""

    face: int
    bary: np.ndarray  # (3,) non-negative, sums to 1

    def __post_init__(self):
        b = np.asarray(self.bary, dtype=np.float64)
        object.__setattr__(self, "bary", b)
        if b.shape != (3,):
            raise ValueError("bary must have exactly 3 weights")
        if abs(float(b.sum()) - 1.0) > 1e-12 or (b < -1e-12).any() or (b > 1 + 1e-12).any():
            raise ValueError("barycentric weights must lie in [0,1] and sum to 1")


@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal tangent frame at a surface point.

    Columns of ``rotation`` are (tangent, bitangent, normal); determinant +1.
    Local displacements map to world space as ``rotation @ r + origin``.
    """

    rotation: np.ndarray  # (3, 3)
    origin: np.ndarray    # (3,)


@dataclass
class PointCloud:
    positions: np.ndarray            # (M, 3)
    normals: np.ndarray | None = field(default=None)  # (M, 3) unit, optional

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.positions.shape:
                raise ValueError("normals must match positions count")
            lengths = np.linalg.norm(self.normals, axis=1)
            if len(lengths) and np.abs(lengths - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")

    def __len__(self) -> int:
        return self.positions.shape[0]


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Triangle areas, (F,)."""
    v0, v1, v2 = (vertices[faces[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, (N, 3) unit.

    Accumulates unnormalized face cross products (twice the area-weighted
    normal), which makes the result equivariant under rigid motions.
    """
    v0, v1, v2 = (vertices[faces[:, i]] for i in range(3))
    fn = np.cross(v1 - v0, v2 - v0)
    out = np.zeros_like(vertices)
    for i in range(3):
        np.add.at(out, faces[:, i], fn)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return out / norms


def pack_surface_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Pack a sequence of SurfacePoint into (faces (M,), bary (M,3)) arrays."""
    faces = np.array([sp.face for sp in points], dtype=np.int64)
    bary = np.array([sp.bary for sp in points], dtype=np.float64)
    return faces, bary


def sample_surface(body_or_mesh, count: int, seed: int) -> list[SurfacePoint]:
    """Draw ``count`` area-uniform points on the mesh surface, deterministically.

    Accepts a TemplateBody or a (vertices, faces) pair.
    """
    if isinstance(body_or_mesh, tuple):
        vertices, faces = body_or_mesh
    else:
        vertices, faces = body_or_mesh.vertices, body_or_mesh.faces
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = face_areas(vertices, faces)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("degenerate surface")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    # sqrt trick: uniform over each triangle
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return [SurfacePoint(int(f), b) for f, b in zip(face_idx, bary)]


def position_at(vertices: np.ndarray, faces: np.ndarray, sp: SurfacePoint) -> np.ndarray:
    """Barycentric position of ``sp`` on the given (possibly posed) mesh."""
    idx = faces[sp.face]
    return sp.bary @ vertices[idx]


def positions_at(vertices: np.ndarray, faces: np.ndarray,
                 face_idx: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Vectorized :func:`position_at` for packed surface points, (M, 3)."""
    corner = vertices[faces[face_idx]]            # (M, 3, 3)
    return np.einsum("mc,mcd->md", bary, corner)


def interpolate_feature(field: np.ndarray, faces: np.ndarray, sp: SurfacePoint) -> np.ndarray:
    """Barycentric interpolation of a per-vertex feature field at ``sp``.

    Terms are accumulated in vertex-index order, so a point on a shared edge
    evaluates to byte-identical features through either adjacent face.
    """
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError("feature field must be (N, C)")
    idx = faces[sp.face]
    order = np.argsort(idx)
    out = np.zeros(field.shape[1], dtype=field.dtype)
    for j in order:
        out = out + sp.bary[j] * field[idx[j]]
    return out


def interpolate_features(field: np.ndarray, faces: np.ndarray,
                         face_idx: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Vectorized barycentric interpolation, index-ordered like
    :func:`interpolate_feature`, (M, C)."""
    idx = faces[face_idx]                          # (M, 3)
    order = np.argsort(idx, axis=1)
    idx_s = np.take_along_axis(idx, order, axis=1)
    bary_s = np.take_along_axis(bary, order, axis=1)
    out = bary_s[:, 0, None] * field[idx_s[:, 0]]
    out = out + bary_s[:, 1, None] * field[idx_s[:, 1]]
    out = out + bary_s[:, 2, None] * field[idx_s[:, 2]]
    return out


def _frame_from(normal: np.ndarray, edge: np.ndarray) -> np.ndarray:
    nn = np.linalg.norm(normal)
    if nn < 1e-12:
        raise ValueError("degenerate frame")
    n = normal / nn
    t = edge - np.dot(edge, n) * n
    tn = np.linalg.norm(t)
    if tn < 1e-12:
        raise ValueError("degenerate frame")
    t = t / tn
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=1)


def local_frame(posed_vertices: np.ndarray, faces: np.ndarray, sp: SurfacePoint,
                posed_normals: np.ndarray | None = None) -> LocalFrame:
    """Tangent frame at a surface point of the posed mesh.

    Normal column: barycentrically interpolated (then normalized) posed vertex
    normals.  Tangent: the face's first edge projected orthogonal to the
    normal.  Bitangent: normal x tangent.  Rigid-equivariant by construction.

    ``posed_normals`` may be passed to reuse precomputed vertex normals.
    """
    if posed_normals is None:
        posed_normals = vertex_normals(posed_vertices, faces)
    idx = faces[sp.face]
    n = sp.bary @ posed_normals[idx]
    edge = posed_vertices[idx[1]] - posed_vertices[idx[0]]
    rot = _frame_from(n, edge)
    return LocalFrame(rotation=rot, origin=position_at(posed_vertices, faces, sp))


def local_frames(posed_vertices: np.ndarray, faces: np.ndarray,
                 face_idx: np.ndarray, bary: np.ndarray,
                 posed_normals: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`local_frame`: rotations (M, 3, 3), origins (M, 3)."""
    if posed_normals is None:
        posed_normals = vertex_normals(posed_vertices, faces)
    idx = faces[face_idx]                          # (M, 3)
    n = np.einsum("mc,mcd->md", bary, posed_normals[idx])
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    if (nn < 1e-12).any():
        raise ValueError("degenerate frame")
    n = n / nn
    edge = posed_vertices[idx[:, 1]] - posed_vertices[idx[:, 0]]
    t = edge - np.sum(edge * n, axis=1, keepdims=True) * n
    tn = np.linalg.norm(t, axis=1, keepdims=True)
    if (tn < 1e-12).any():
        raise ValueError("degenerate frame")
    t = t / tn
    b = np.cross(n, t)
    rot = np.stack([t, b, n], axis=2)              # columns (t, b, n)
    origins = np.einsum("mc,mcd->md", bary, posed_vertices[idx])
    return rot, origins


def vertex_tangent_refs(faces: np.ndarray, num_vertices: int) -> np.ndarray:
    """Reference neighbor per vertex: its lowest-index adjacent vertex.

    Purely topological, so a vertex's reference edge is the same through
    every face that touches it; interpolating the resulting edge vectors
    yields a tangent field with no cross-face jumps.
    """
    ref = np.full(num_vertices, num_vertices, dtype=np.int64)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        va, vb = faces[:, a], faces[:, b]
        np.minimum.at(ref, va, vb)
        np.minimum.at(ref, vb, va)
    if (ref >= num_vertices).any():
        orphan = int(np.nonzero(ref >= num_vertices)[0][0])
        raise ValueError(f"vertex {orphan} belongs to no face")
    return ref


def continuous_frames(posed_vertices: np.ndarray, faces: np.ndarray,
                      face_idx: np.ndarray, bary: np.ndarray,
                      tangent_refs: np.ndarray,
                      posed_normals: np.ndarray | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Cross-face-continuous tangent frames, (M, 3, 3) rotations + (M, 3) origins.

    Unlike :func:`local_frames` (whose tangent follows the face's first edge),
    the tangent here comes from per-vertex reference edges interpolated
    barycentrically, so a point on a shared edge receives a byte-identical
    frame through either adjacent face.  Columns are (tangent, bitangent,
    normal); rigid-equivariant.
    """
    if posed_normals is None:
        posed_normals = vertex_normals(posed_vertices, faces)
    edges = posed_vertices[tangent_refs] - posed_vertices
    n = interpolate_features(posed_normals, faces, face_idx, bary)
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    if (nn < 1e-12).any():
        raise ValueError("degenerate frame")
    n = n / nn
    e = interpolate_features(edges, faces, face_idx, bary)
    t = e - np.sum(e * n, axis=1, keepdims=True) * n
    tn = np.linalg.norm(t, axis=1, keepdims=True)
    if (tn < 1e-12).any():
        raise ValueError("degenerate frame")
    t = t / tn
    b = np.cross(n, t)
    rot = np.stack([t, b, n], axis=2)
    origins = interpolate_features(posed_vertices, faces, face_idx, bary)
    return rot, origins


def farthest_point_sample(points: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min farthest point sampling, (k,) indices.

    Deterministic: starts at index 0; argmax ties resolve to the lowest
    index.  The first j entries of a k-sample equal the j-sample, so one
    call can serve every prefix.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = 0
    dist = np.sum((points - points[0]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1), out=dist)
    return chosen


class NearestNeighborIndex:
    """Exact nearest-neighbor queries over a fixed target cloud.

    cKDTree-accelerated; guaranteed to match brute force, with ties broken
    by the lowest target index.
    """

    def __init__(self, positions: np.ndarray):
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape[0] == 0:
            raise ValueError("empty target cloud")
        self.positions = positions
        self._tree = cKDTree(positions)

    def query(self, point: np.ndarray) -> tuple[int, float]:
        """(index, squared distance) of the nearest target point."""
        point = np.asarray(point, dtype=np.float64)
        d, i = self._tree.query(point)
        # resolve exact-distance ties to the lowest index
        cand = self._tree.query_ball_point(point, d)
        if cand:
            sq = np.sum((self.positions[cand] - point) ** 2, axis=1)
            best = sq.min()
            i = min(int(c) for c, s in zip(cand, sq) if s == best)
        return int(i), float(np.sum((self.positions[i] - point) ** 2))

    def query_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched nearest query: (indices (M,), squared distances (M,)).

        No tie post-processing (distances are what matter in bulk use)."""
        d, i = self._tree.query(np.asarray(points, dtype=np.float64))
        return i.astype(np.int64), d ** 2


def nearest_neighbor(query: np.ndarray, target: PointCloud) -> tuple[int, float]:
    """Exact nearest target point by squared distance; lowest index on ties."""
    return NearestNeighborIndex(target.positions).query(query)


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric squared-distance Chamfer between two clouds.

    Mean squared nearest-neighbor distance from a to b plus the same from b
    to a; no square root.  Raw m^2 value (callers rescale for reporting).
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty cloud")
    _, d_ab = NearestNeighborIndex(b.positions).query_many(a.positions)
    _, d_ba = NearestNeighborIndex(a.positions).query_many(b.positions)
    return float(d_ab.mean() + d_ba.mean())
