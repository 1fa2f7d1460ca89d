"""Seamed UV-plane feature grids, the baseline the surface route is measured
against.

A UV atlas assigns each face corner a 2D coordinate.  Per-vertex feature
fields can be splatted onto a square grid and sampled back bilinearly at any
surface point's UV.  Where the atlas cuts the surface (island borders, wrap
seams, pole fans) adjacent faces map to distant texels, so the sampled field
jumps across those edges; barycentric surface interpolation has no such jump.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .body import HumanoidConfig, humanoid_face_uvs


def _bilinear_taps(uv: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Four texel taps per UV sample: flat indices (M, 4) and weights (M, 4).

    Texel centers sit at uv = (i + 0.5) / resolution, so a sample at a texel
    center takes that texel with weight one.  Indices clamp to the border.
    """
    g = uv * resolution - 0.5
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    ix0 = np.clip(i0[:, 0], 0, resolution - 1)
    iy0 = np.clip(i0[:, 1], 0, resolution - 1)
    ix1 = np.clip(i0[:, 0] + 1, 0, resolution - 1)
    iy1 = np.clip(i0[:, 1] + 1, 0, resolution - 1)
    fx, fy = f[:, 0], f[:, 1]
    idx = np.stack([iy0 * resolution + ix0, iy0 * resolution + ix1,
                    iy1 * resolution + ix0, iy1 * resolution + ix1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                  (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


@dataclass
class GridCache:
    """Precomputed splat/sample tables tying one atlas to one mesh + grid."""

    resolution: int
    face_uvs: np.ndarray        # (F, 3, 2)
    corner_vertex: torch.Tensor  # (F*3,) int64
    splat_idx: torch.Tensor      # (F*3, 4) int64 flat texel indices
    splat_w: torch.Tensor        # (F*3, 4) float64
    norm: torch.Tensor           # (res*res, 1) float64, >= eps


@dataclass(frozen=True)
class UVAtlas:
    """Per-face-corner UV coordinates in [0, 1]^2."""

    face_uvs: np.ndarray  # (F, 3, 2)

    def __post_init__(self):
        fu = np.asarray(self.face_uvs, dtype=np.float64)
        if fu.ndim != 3 or fu.shape[1:] != (3, 2):
            raise ValueError("face_uvs must be (F, 3, 2)")
        object.__setattr__(self, "face_uvs", fu)

    @property
    def num_faces(self) -> int:
        return self.face_uvs.shape[0]

    def uv_at(self, face_idx: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """UV of packed surface points, (M, 2).  Face-local on purpose: the
        same edge point reached through two faces may land on different UVs."""
        corner = self.face_uvs[np.asarray(face_idx)]
        return np.einsum("mc,mcd->md", np.asarray(bary, dtype=np.float64), corner)

    def prepare(self, faces: np.ndarray, resolution: int) -> GridCache:
        if faces.shape[0] != self.num_faces:
            raise ValueError("atlas and mesh disagree on face count")
        if resolution < 2:
            raise ValueError("grid resolution must be >= 2")
        corner_uv = self.face_uvs.reshape(-1, 2)
        idx, w = _bilinear_taps(corner_uv, resolution)
        norm = np.zeros(resolution * resolution)
        np.add.at(norm, idx.ravel(), w.ravel())
        return GridCache(
            resolution=resolution,
            face_uvs=self.face_uvs,
            corner_vertex=torch.from_numpy(faces.reshape(-1).astype(np.int64)),
            splat_idx=torch.from_numpy(idx),
            splat_w=torch.from_numpy(w),
            norm=torch.from_numpy(np.maximum(norm, 1e-12)[:, None]))


def splat_and_sample(per_vertex: torch.Tensor, cache: GridCache,
                     face_idx: np.ndarray, bary: np.ndarray) -> torch.Tensor:
    """Bake a per-vertex field to the UV grid, then bilinear-sample it at the
    given surface points.  Linear in the features, so gradients flow."""
    res = cache.resolution
    contrib = per_vertex[cache.corner_vertex]                  # (F*3, C)
    grid = per_vertex.new_zeros((res * res, per_vertex.shape[1]))
    w = cache.splat_w.to(per_vertex.dtype)
    for t in range(4):
        grid = grid.index_add(0, cache.splat_idx[:, t], w[:, t:t + 1] * contrib)
    grid = grid / cache.norm.to(per_vertex.dtype)

    uv = np.einsum("mc,mcd->md", np.asarray(bary, dtype=np.float64),
                   cache.face_uvs[np.asarray(face_idx)])
    idx, sw = _bilinear_taps(uv, res)
    sw_t = torch.from_numpy(sw).to(per_vertex.dtype)
    out = sw_t[:, 0:1] * grid[torch.from_numpy(idx[:, 0])]
    for t in range(1, 4):
        out = out + sw_t[:, t:t + 1] * grid[torch.from_numpy(idx[:, t])]
    return out


def sample_grid(grid: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup of a (res, res, C) grid at UVs in [0, 1]^2, (M, C)."""
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[0] != grid.shape[1]:
        raise ValueError("grid must be (res, res, C)")
    res = grid.shape[0]
    idx, w = _bilinear_taps(np.asarray(uv, dtype=np.float64), res)
    flat = grid.reshape(res * res, -1)
    return (w[:, :, None] * flat[idx]).sum(axis=1)


def uv_baseline_features(atlas: UVAtlas, grid: np.ndarray, face_idx, bary) -> np.ndarray:
    """POP-style lookup: interpolate UV inside the face, then bilinear-sample
    the grid.  Errors if any point maps outside the atlas square."""
    face_idx = np.atleast_1d(np.asarray(face_idx))
    bary = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    if face_idx.min() < 0 or face_idx.max() >= atlas.num_faces:
        raise ValueError("face index outside atlas")
    uv = atlas.uv_at(face_idx, bary)
    if (uv < 0.0).any() or (uv > 1.0).any():
        raise ValueError("surface point maps outside the atlas")
    return sample_grid(grid, uv)


def classify_shared_edges(atlas: UVAtlas, faces: np.ndarray, tol: float = 1e-9
                          ) -> tuple[list[tuple[int, int, int, int]],
                                     list[tuple[int, int, int, int]]]:
    """Split interior mesh edges into (seam, smooth) lists of
    (face_a, face_b, vert_a, vert_b).

    An edge is a seam when the two adjacent faces assign either endpoint
    UVs further apart than ``tol``.
    """
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(f)
    seams, smooth = [], []
    for (va, vb), fs in sorted(edge_faces.items()):
        if len(fs) != 2:
            continue
        fa, fb = fs
        jump = 0.0
        for v in (va, vb):
            ca = int(np.nonzero(faces[fa] == v)[0][0])
            cb = int(np.nonzero(faces[fb] == v)[0][0])
            jump = max(jump, float(np.abs(atlas.face_uvs[fa, ca]
                                          - atlas.face_uvs[fb, cb]).max()))
        (seams if jump > tol else smooth).append((fa, fb, va, vb))
    return seams, smooth


def _edge_bary(faces: np.ndarray, face: int, va: int, vb: int, t: float) -> np.ndarray:
    """Barycentric coordinates of the point (1-t)*va + t*vb inside ``face``."""
    b = np.zeros(3)
    b[int(np.nonzero(faces[face] == va)[0][0])] = 1.0 - t
    b[int(np.nonzero(faces[face] == vb)[0][0])] = t
    return b


def seam_study(body, atlas: UVAtlas, grid_resolution: int = 64,
               num_points: int = 1000, channels: int = 4, seed: int = 0) -> dict:
    """Quantify cross-edge continuity of the two feature-lookup routes.

    A random per-vertex field is evaluated at random points on shared mesh
    edges, once through each adjacent face.  The surface route interpolates
    the field barycentrically; the UV route bakes the same field to a grid
    through the (seamed) atlas and bilinear-samples it.  Returns max
    disagreements per route, split by seam/smooth edges.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EA3)))
    field = rng.normal(size=(body.num_vertices, channels))
    seams, smooth = classify_shared_edges(atlas, body.faces)
    if not seams or not smooth:
        raise ValueError("atlas must expose both seam and smooth edges")
    cache = atlas.prepare(body.faces, grid_resolution)
    field_t = torch.from_numpy(field)

    def route_jumps(edges, count):
        pick = rng.integers(0, len(edges), size=count)
        ts = rng.uniform(0.05, 0.95, size=count)
        fa = np.empty(count, dtype=np.int64)
        fb = np.empty(count, dtype=np.int64)
        ba = np.empty((count, 3))
        bb = np.empty((count, 3))
        for i, (e, t) in enumerate(zip(pick, ts)):
            f1, f2, va, vb = edges[e]
            fa[i], fb[i] = f1, f2
            ba[i] = _edge_bary(body.faces, f1, va, vb, t)
            bb[i] = _edge_bary(body.faces, f2, va, vb, t)
        from .geometry import interpolate_features
        surf = np.abs(interpolate_features(field, body.faces, fa, ba)
                      - interpolate_features(field, body.faces, fb, bb)).max()
        uv_a = splat_and_sample(field_t, cache, fa, ba).numpy()
        uv_b = splat_and_sample(field_t, cache, fb, bb).numpy()
        per_point = np.abs(uv_a - uv_b).max(axis=1)
        return float(surf), float(per_point.max()), float(per_point.mean())

    n_seam = min(num_points, max(len(seams) * 3, 100))
    surf_smooth, uv_smooth_max, _ = route_jumps(smooth, num_points)
    surf_seam, uv_seam_max, uv_seam_mean = route_jumps(seams, n_seam)
    return {
        "points_smooth": num_points,
        "points_seam": n_seam,
        "seam_edges": len(seams),
        "smooth_edges": len(smooth),
        "surface_max_jump": max(surf_smooth, surf_seam),
        "uv_smooth_max_jump": uv_smooth_max,
        "uv_seam_max_jump": uv_seam_max,
        "uv_seam_mean_jump": uv_seam_mean,
        "grid_resolution": grid_resolution,
    }


def humanoid_atlas(config: HumanoidConfig | None = None,
                   padding: float = 0.04) -> UVAtlas:
    """Atlas for the built-in humanoid: each body part becomes its own island
    in a 3x2 layout.  Cylindrical wrap edges and pole fans cut the surface,
    so the atlas is deliberately seamed."""
    face_uvs, parts = humanoid_face_uvs(config)
    if len(parts) > 6:
        raise ValueError("island layout supports at most 6 parts")
    out = np.empty_like(face_uvs)
    cell_w, cell_h = 1.0 / 3.0, 1.0 / 2.0
    start = 0
    for i, (_name, count) in enumerate(parts):
        ox, oy = (i % 3) * cell_w, (i // 3) * cell_h
        sx, sy = cell_w - 2 * padding, cell_h - 2 * padding
        block = face_uvs[start:start + count]
        out[start:start + count, :, 0] = ox + padding + block[:, :, 0] * sx
        out[start:start + count, :, 1] = oy + padding + block[:, :, 1] * sy
        start += count
    return UVAtlas(out)
