"""Articulated unclothed body: pose representation, linear blend skinning, and
a built-in procedural humanoid.

The humanoid is a union of closed capsule components (torso, head, limbs),
each a watertight 2-manifold, with smooth skinning-weight transitions near
the joints.  It stands in for license-encumbered statistical body models;
external rigged meshes load through :func:`pointcloth.meshio.load_rigged_mesh`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Skeleton, TemplateBody, vertex_normals

JOINT_NAMES = (
    "pelvis", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

JOINT_PARENTS = np.array([-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14])

# rest-pose joint positions for a 1.75 m body, y-up, arms along +-x
_JOINT_POS = np.array([
    [0.00, 1.00, 0.0],   # pelvis
    [0.00, 1.25, 0.0],   # chest
    [0.00, 1.44, 0.0],   # neck
    [0.00, 1.57, 0.0],   # head
    [0.16, 1.40, 0.0], [0.42, 1.40, 0.0], [0.66, 1.40, 0.0],    # left arm
    [-0.16, 1.40, 0.0], [-0.42, 1.40, 0.0], [-0.66, 1.40, 0.0],  # right arm
    [0.09, 0.95, 0.0], [0.09, 0.50, 0.0], [0.09, 0.08, 0.0],    # left leg
    [-0.09, 0.95, 0.0], [-0.09, 0.50, 0.0], [-0.09, 0.08, 0.0],  # right leg
])

_BASE_HEIGHT = 1.75


@dataclass(frozen=True)
class HumanoidConfig:
    """Procedural humanoid knobs.

    resolution scales tessellation density (vertex count grows roughly with
    its square); height is overall stature in meters; bulk scales capsule
    radii.  Documented ranges: resolution [0.3, 4], height [1.2, 2.2],
    bulk [0.6, 1.6].
    """

    resolution: float = 1.0
    height: float = 1.75
    bulk: float = 1.0

    def __post_init__(self):
        if not 0.3 <= self.resolution <= 4.0:
            raise ValueError("resolution out of range [0.3, 4]")
        if not 1.2 <= self.height <= 2.2:
            raise ValueError("height out of range [1.2, 2.2]")
        if not 0.6 <= self.bulk <= 1.6:
            raise ValueError("bulk out of range [0.6, 1.6]")


@dataclass(frozen=True)
class Pose:
    """Per-joint rotations (3x3, parent-to-child composition) plus a root
    translation in meters."""

    joint_rotations: np.ndarray   # (J, 3, 3)
    root_translation: np.ndarray  # (3,)

    @classmethod
    def identity(cls, num_joints: int) -> "Pose":
        return cls(np.broadcast_to(np.eye(3), (num_joints, 3, 3)).copy(), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis_angle: np.ndarray,
                        root_translation: np.ndarray | None = None) -> "Pose":
        """Build from (J, 3) axis-angle vectors (radians)."""
        aa = np.asarray(axis_angle, dtype=np.float64)
        mats = Rotation.from_rotvec(aa).as_matrix().reshape(len(aa), 3, 3)
        t = np.zeros(3) if root_translation is None else np.asarray(root_translation, float)
        return cls(mats, t)

    def to_json_dict(self) -> dict:
        aa = Rotation.from_matrix(self.joint_rotations).as_rotvec()
        return {"rotations": aa.tolist(), "root_translation": self.root_translation.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Pose":
        return cls.from_axis_angle(np.asarray(doc["rotations"], dtype=np.float64),
                                   np.asarray(doc["root_translation"], dtype=np.float64))

    @property
    def num_joints(self) -> int:
        return self.joint_rotations.shape[0]

    def validate(self) -> None:
        r = self.joint_rotations
        if not np.allclose(r @ r.transpose(0, 2, 1), np.eye(3), atol=1e-9):
            raise ValueError("joint rotations must be orthonormal")
        if not np.allclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise ValueError("joint rotations must have determinant +1")


@dataclass(frozen=True)
class PosedBody:
    """Skinned vertices; shares faces/topology with its template."""

    vertices: np.ndarray
    template: TemplateBody

    @property
    def faces(self) -> np.ndarray:
        return self.template.faces


def joint_world_transforms(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """Posed world transform per joint, (J, 4, 4); parent-to-child chaining."""
    J = skeleton.num_joints
    out = np.zeros((J, 4, 4))
    for j in range(J):
        local = np.eye(4)
        local[:3, :3] = pose.joint_rotations[j]
        local[:3, 3] = skeleton.offsets[j]
        if skeleton.parents[j] < 0:
            local[:3, 3] += pose.root_translation
            out[j] = local
        else:
            out[j] = out[skeleton.parents[j]] @ local
    return out


def lbs_pose(body: TemplateBody, pose: Pose) -> PosedBody:
    """Linear blend skinning.  Identity pose reproduces the template exactly."""
    if pose.num_joints != body.skeleton.num_joints:
        raise ValueError(
            f"pose has {pose.num_joints} joints, skeleton has {body.skeleton.num_joints}")
    world = joint_world_transforms(body.skeleton, pose)
    rest = body.skeleton.rest_positions()
    # skinning transform per joint: posed world transform times inverse rest
    rot = world[:, :3, :3]                              # (J, 3, 3)
    trans = world[:, :3, 3] - np.einsum("jab,jb->ja", rot, rest)
    v = body.vertices
    per_joint = np.einsum("jab,nb->jna", rot, v) + trans[:, None, :]   # (J, N, 3)
    posed = np.einsum("nj,jna->na", body.skinning, per_joint)
    return PosedBody(vertices=posed, template=body)


# ---------------------------------------------------------------------------
# procedural humanoid


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _chain_weights(t: np.ndarray, boundaries: list[float], window: float) -> np.ndarray:
    """Partition weights along a capsule axis across a joint chain.

    m joints have m-1 boundary parameters; weight hands over from joint k to
    k+1 across a smoothstep of half-width ``window`` at each boundary.
    Rows sum to 1 with all entries >= 0.
    """
    m = len(boundaries) + 1
    steps = [_smoothstep((t - (b - window)) / (2.0 * window)) for b in boundaries]
    w = np.zeros((len(t), m))
    w[:, 0] = 1.0 - steps[0]
    for k in range(1, m - 1):
        w[:, k] = steps[k - 1] - steps[k]
    w[:, m - 1] = steps[m - 2]
    return w


def _orthobasis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    aux = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(aux, d)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return u, v


@dataclass
class _CapsulePart:
    name: str
    a: np.ndarray
    b: np.ndarray
    radius: float
    n_radial: int
    n_axial: int
    n_cap: int
    chain: list[int] = field(default_factory=list)
    boundaries: list[float] = field(default_factory=list)
    window: float = 0.1

    def build(self):
        """Vertices, faces, per-face-corner (u,v) in [0,1]^2 island coords."""
        a, b, r = self.a, self.b, self.radius
        d = b - a
        length = np.linalg.norm(d)
        d = d / length
        u_ax, v_ax = _orthobasis(d)
        nr, na, nc = self.n_radial, self.n_axial, self.n_cap

        theta = 2.0 * np.pi * np.arange(nr) / nr
        ring_dirs = np.outer(np.cos(theta), u_ax) + np.outer(np.sin(theta), v_ax)

        # meridian profile from bottom pole to top pole: (center, ring radius, v)
        profile = []
        meridian = np.pi * r + length
        for i in range(1, nc):
            phi = -0.5 * np.pi + 0.5 * np.pi * i / nc
            profile.append((a + r * np.sin(phi) * d, r * np.cos(phi),
                            (r * (phi + 0.5 * np.pi)) / meridian))
        for j in range(na):
            h = length * j / (na - 1)
            profile.append((a + h * d, r, (0.5 * np.pi * r + h) / meridian))
        for i in range(1, nc):
            phi = 0.5 * np.pi * i / nc
            profile.append((b + r * np.sin(phi) * d, r * np.cos(phi),
                            (0.5 * np.pi * r + length + r * phi) / meridian))

        verts = [a - r * d]
        for center, rad, _v in profile:
            verts.extend(center + rad * ring_dirs)
        verts.append(b + r * d)
        verts = np.asarray(verts)

        def ring(idx: int, s: int) -> int:
            return 1 + idx * nr + (s % nr)

        top = len(verts) - 1
        n_rings = len(profile)
        faces, uvs = [], []
        u_of = lambda s: s / nr  # corner u, allowing s == nr at the wrap
        v0 = 0.0
        for s in range(nr):
            faces.append((0, ring(0, s + 1), ring(0, s)))
            um = 0.5 * (u_of(s) + u_of(s + 1))
            uvs.append(((um, v0), (u_of(s + 1), profile[0][2]), (u_of(s), profile[0][2])))
        for k in range(n_rings - 1):
            va, vb = profile[k][2], profile[k + 1][2]
            for s in range(nr):
                faces.append((ring(k, s), ring(k, s + 1), ring(k + 1, s + 1)))
                uvs.append(((u_of(s), va), (u_of(s + 1), va), (u_of(s + 1), vb)))
                faces.append((ring(k, s), ring(k + 1, s + 1), ring(k + 1, s)))
                uvs.append(((u_of(s), va), (u_of(s + 1), vb), (u_of(s), vb)))
        vlast = profile[-1][2]
        for s in range(nr):
            faces.append((top, ring(n_rings - 1, s), ring(n_rings - 1, s + 1)))
            um = 0.5 * (u_of(s) + u_of(s + 1))
            uvs.append(((um, 1.0), (u_of(s), vlast), (u_of(s + 1), vlast)))
        return verts, np.asarray(faces, dtype=np.int64), np.asarray(uvs, dtype=np.float64)

    def weights(self, verts: np.ndarray, num_joints: int) -> np.ndarray:
        d = self.b - self.a
        length = np.linalg.norm(d)
        d = d / length
        t = np.clip((verts - self.a) @ d / length, 0.0, 1.0)
        w = np.zeros((len(verts), num_joints))
        if len(self.chain) == 1:
            w[:, self.chain[0]] = 1.0
            return w
        cw = _chain_weights(t, self.boundaries, self.window)
        for k, j in enumerate(self.chain):
            w[:, j] = cw[:, k]
        return w


def _humanoid_parts(config: HumanoidConfig) -> list[_CapsulePart]:
    s = config.height / _BASE_HEIGHT
    bulk = config.bulk * s
    res = config.resolution
    P = _JOINT_POS * s

    def counts(nr, na, nc):
        return (max(6, round(nr * res)), max(3, round(na * res)), max(2, round(nc * res)))

    def seg(p, q, frac_lo, frac_hi):
        return p + frac_lo * (q - p), p + frac_hi * (q - p)

    def axis_param(a, b, point):
        d = b - a
        return float((point - a) @ d / (d @ d))

    parts = []
    # torso: pelvis -> just below the neck
    a, b_ = P[0] + np.array([0, -0.10 * s, 0]), P[2] + np.array([0, -0.02 * s, 0])
    nr, na, nc = counts(16, 9, 3)
    parts.append(_CapsulePart("torso", a, b_, 0.14 * bulk, nr, na, nc,
                              chain=[0, 1, 2],
                              boundaries=[axis_param(a, b_, P[1]), 0.97],
                              window=0.12))
    # head: neck -> above head joint
    a, b_ = P[2], P[3] + np.array([0, 0.09 * s, 0])
    nr, na, nc = counts(12, 5, 3)
    parts.append(_CapsulePart("head", a, b_, 0.085 * bulk, nr, na, nc,
                              chain=[2, 3], boundaries=[axis_param(a, b_, P[3]) * 0.7],
                              window=0.15))
    for side, (sh, el, wr) in (("l", (4, 5, 6)), ("r", (7, 8, 9))):
        a, b_ = seg(P[sh], P[wr], 0.0, 1.12)
        nr, na, nc = counts(10, 9, 3)
        parts.append(_CapsulePart(f"{side}_arm", a, b_, 0.05 * bulk, nr, na, nc,
                                  chain=[sh, el, wr],
                                  boundaries=[axis_param(a, b_, P[el]),
                                              axis_param(a, b_, P[wr])],
                                  window=0.08))
    for side, (hp, kn, an) in (("l", (10, 11, 12)), ("r", (13, 14, 15))):
        a = P[hp] + np.array([0, 0.03 * s, 0])
        b_ = P[an] + np.array([0, -0.05 * s, 0])
        nr, na, nc = counts(12, 10, 3)
        parts.append(_CapsulePart(f"{side}_leg", a, b_, 0.075 * bulk, nr, na, nc,
                                  chain=[hp, kn, an],
                                  boundaries=[axis_param(a, b_, P[kn]),
                                              axis_param(a, b_, P[an])],
                                  window=0.08))
    return parts


def _assemble(config: HumanoidConfig):
    parts = _humanoid_parts(config)
    s = config.height / _BASE_HEIGHT
    skeleton = Skeleton(
        names=JOINT_NAMES,
        parents=JOINT_PARENTS.copy(),
        offsets=np.array([_JOINT_POS[j] * s if p < 0 else (_JOINT_POS[j] - _JOINT_POS[p]) * s
                          for j, p in enumerate(JOINT_PARENTS)]),
    )
    all_v, all_f, all_uv, all_w = [], [], [], []
    part_face_ranges = []
    offset = 0
    for part in parts:
        v, f, uv = part.build()
        all_v.append(v)
        all_f.append(f + offset)
        all_uv.append(uv)
        all_w.append(part.weights(v, len(JOINT_NAMES)))
        part_face_ranges.append((part.name, len(f)))
        offset += len(v)
    vertices = np.vstack(all_v)
    faces = np.vstack(all_f)
    uvs = np.vstack(all_uv)
    weights = np.vstack(all_w)
    return vertices, faces, uvs, weights, skeleton, part_face_ranges


def build_humanoid(config: HumanoidConfig | None = None) -> TemplateBody:
    """Watertight capsule-limb humanoid in T-pose; 16 joints, ~1000 vertices
    at the default resolution.  Deterministic: same config, same bytes."""
    config = config or HumanoidConfig()
    vertices, faces, _uvs, weights, skeleton, _ranges = _assemble(config)
    body = TemplateBody(vertices=vertices, faces=faces,
                        vertex_normals=vertex_normals(vertices, faces),
                        skinning=weights, skeleton=skeleton)
    body.validate()
    return body


def humanoid_face_uvs(config: HumanoidConfig | None = None
                      ) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Per-face-corner island UVs, (F, 3, 2) in [0,1]^2 per part, plus the
    (part name, face count) layout.  Each capsule is unwrapped cylindrically,
    so every part carries a deliberate wrap seam."""
    config = config or HumanoidConfig()
    _v, _f, uvs, _w, _sk, ranges = _assemble(config)
    return uvs, ranges
