"""Synthetic clothed-scan generator with a known base/wrinkle decomposition.

Each outfit is a smooth pose-invariant offset field (the garment layer) plus
sinusoidal ridges whose amplitude is driven linearly by signed joint angles.
Because the drive is linear and training poses are sampled symmetrically
around zero, the wrinkle field has zero mean over the pose distribution,
so the pose-invariant part of the ground truth is exactly the base field.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import Pose, lbs_pose
from .geometry import (
    PointCloud,
    TemplateBody,
    interpolate_features,
    pack_surface_points,
    sample_surface,
    vertex_normals,
)
from .meshio import export_body, load_rigged_mesh, read_ply, write_ply


def _name_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))

# signed-angle axis per joint used both by the pose sampler and the wrinkle
# drive: limbs hinge about these in the canonical body frame
JOINT_AXES = {
    "l_shoulder": (0.0, 0.0, 1.0), "r_shoulder": (0.0, 0.0, 1.0),
    "l_elbow": (0.0, 0.0, 1.0), "r_elbow": (0.0, 0.0, 1.0),
    "l_hip": (1.0, 0.0, 0.0), "r_hip": (1.0, 0.0, 0.0),
    "l_knee": (1.0, 0.0, 0.0), "r_knee": (1.0, 0.0, 0.0),
}

REGION_PRESETS = ("jacket", "skirt", "full")


@dataclass(frozen=True)
class WrinkleSpec:
    """Sinusoidal ridge field: amplitude * sin(freq * (dir . p) + phase),
    scaled by the pose drive sum(coupling[j] * signed_angle[j])."""

    amplitude: float = 0.012
    frequency: float = 35.0
    direction: tuple[float, float, float] = (0.0, 1.0, 0.0)
    phase: float = 0.7
    joint_coupling: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("wrinkle amplitude must be >= 0")


@dataclass(frozen=True)
class OutfitSpec:
    """A synthetic garment: where it sits (region preset), how far it stands
    off the body (base amplitude, meters), and how it wrinkles with pose.

    quilt_amplitude adds a pose-invariant high-frequency ripple (quilted or
    ribbed fabric) on top of the smooth standoff; zero disables it.
    """

    name: str
    base_amplitude: float = 0.05
    region: str = "jacket"
    wrinkle: WrinkleSpec = field(default_factory=WrinkleSpec)
    seed: int = 0
    quilt_amplitude: float = 0.0
    quilt_frequency: float = 40.0
    quilt_direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    quilt_phase: float = 0.0

    def __post_init__(self):
        if self.base_amplitude < 0:
            raise ValueError("base amplitude must be >= 0")
        if self.quilt_amplitude < 0:
            raise ValueError("quilt amplitude must be >= 0")
        if self.region not in REGION_PRESETS:
            raise ValueError(f"unknown region {self.region!r}; "
                             f"expected one of {REGION_PRESETS}")

    def to_json_dict(self) -> dict:
        w = self.wrinkle
        return {"name": self.name, "base_amplitude": self.base_amplitude,
                "region": self.region, "seed": self.seed,
                "quilt_amplitude": self.quilt_amplitude,
                "quilt_frequency": self.quilt_frequency,
                "quilt_direction": list(self.quilt_direction),
                "quilt_phase": self.quilt_phase,
                "wrinkle": {"amplitude": w.amplitude, "frequency": w.frequency,
                            "direction": list(w.direction), "phase": w.phase,
                            "joint_coupling": dict(w.joint_coupling)}}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "OutfitSpec":
        w = doc["wrinkle"]
        return cls(name=doc["name"], base_amplitude=doc["base_amplitude"],
                   region=doc["region"], seed=doc.get("seed", 0),
                   quilt_amplitude=doc.get("quilt_amplitude", 0.0),
                   quilt_frequency=doc.get("quilt_frequency", 40.0),
                   quilt_direction=tuple(doc.get("quilt_direction",
                                                 (1.0, 0.0, 0.0))),
                   quilt_phase=doc.get("quilt_phase", 0.0),
                   wrinkle=WrinkleSpec(amplitude=w["amplitude"],
                                       frequency=w["frequency"],
                                       direction=tuple(w["direction"]),
                                       phase=w["phase"],
                                       joint_coupling=dict(w["joint_coupling"])))


@dataclass
class ScanCloud:
    """One synthetic observation: points+normals, the pose that produced it,
    and (synthetic only) the ground-truth base offset under each point."""

    cloud: PointCloud
    pose: Pose
    outfit: str
    gt_base_offset: np.ndarray | None = None
    gt_wrinkle_offset: np.ndarray | None = None


def jacket_spec(name: str = "jacket") -> OutfitSpec:
    return OutfitSpec(name=name, base_amplitude=0.05, region="jacket",
                      wrinkle=WrinkleSpec(joint_coupling={
                          "l_elbow": 1.0, "r_elbow": -1.0,
                          "l_shoulder": 0.5, "r_shoulder": -0.5}))


def skirt_spec(name: str = "skirt") -> OutfitSpec:
    return OutfitSpec(name=name, base_amplitude=0.06, region="skirt",
                      wrinkle=WrinkleSpec(frequency=28.0, phase=0.2,
                                          joint_coupling={
                                              "l_hip": 1.0, "r_hip": -1.0,
                                              "l_knee": 0.4, "r_knee": -0.4}))


def loose_spec(name: str = "loose") -> OutfitSpec:
    """A loose quilted jacket: large standoff with a high-frequency quilting
    ripple plus strong pose-driven wrinkles.  The decomposition-study outfit:
    its static field is rich enough that fitting it jointly with the wrinkles
    through one head is measurably harder than learning them separately."""
    return OutfitSpec(name=name, base_amplitude=0.05, region="jacket",
                      quilt_amplitude=0.015, quilt_frequency=40.0,
                      quilt_direction=(1.0, 0.0, 0.0), quilt_phase=0.3,
                      wrinkle=WrinkleSpec(amplitude=0.024, frequency=35.0,
                                          direction=(0.0, 1.0, 0.0), phase=0.7,
                                          joint_coupling={"l_elbow": 1.0,
                                                          "r_elbow": -1.0,
                                                          "l_shoulder": 0.6,
                                                          "r_shoulder": -0.6}))


def _region_weights(body: TemplateBody, region: str) -> np.ndarray:
    """Smooth per-vertex coverage in [0,1] built from skinning weights."""
    names = body.skeleton.names
    col = {n: i for i, n in enumerate(names)}
    w = np.zeros(body.num_vertices)
    if region == "full":
        return np.ones(body.num_vertices)
    if region == "jacket":
        mix = {"pelvis": 0.8, "chest": 1.0, "neck": 1.0,
               "l_shoulder": 1.0, "r_shoulder": 1.0,
               "l_elbow": 0.6, "r_elbow": 0.6}
    else:  # skirt
        mix = {"pelvis": 1.0, "l_hip": 1.0, "r_hip": 1.0,
               "l_knee": 0.5, "r_knee": 0.5}
    for joint, coeff in mix.items():
        if joint in col:
            w += coeff * body.skinning[:, col[joint]]
    return np.clip(w, 0.0, 1.0)


def base_offset_values(body: TemplateBody, spec: OutfitSpec) -> np.ndarray:
    """Pose-invariant per-vertex standoff (meters, >= 0), smoothly varying."""
    region = _region_weights(body, spec.region)
    y = body.vertices[:, 1]
    sway = 0.6 + 0.4 * np.sin(2.0 * np.pi * y / 0.8 + 1.0)
    values = spec.base_amplitude * sway
    if spec.quilt_amplitude > 0.0:
        direction = np.asarray(spec.quilt_direction, dtype=np.float64)
        u = body.vertices @ direction
        values = values + spec.quilt_amplitude * np.sin(
            spec.quilt_frequency * u + spec.quilt_phase)
    return np.clip(values, 0.0, None) * region


def signed_joint_angles(skeleton_names: tuple[str, ...], pose: Pose) -> dict[str, float]:
    """Rotation angle of each hinged joint about its canonical axis."""
    from scipy.spatial.transform import Rotation
    rotvec = Rotation.from_matrix(pose.joint_rotations).as_rotvec()
    out = {}
    for name, axis in JOINT_AXES.items():
        if name in skeleton_names:
            j = skeleton_names.index(name)
            out[name] = float(rotvec[j] @ np.asarray(axis))
    return out


def wrinkle_drive(body: TemplateBody, spec: OutfitSpec, pose: Pose) -> float:
    angles = signed_joint_angles(body.skeleton.names, pose)
    return sum(c * angles.get(j, 0.0) for j, c in spec.wrinkle.joint_coupling.items())


def wrinkle_offset_values(body: TemplateBody, spec: OutfitSpec, pose: Pose) -> np.ndarray:
    """Pose-dependent per-vertex offset; identically zero at drive zero."""
    w = spec.wrinkle
    ridge = np.sin(w.frequency * (body.vertices @ np.asarray(w.direction)) + w.phase)
    region = _region_weights(body, spec.region)
    return w.amplitude * ridge * region * wrinkle_drive(body, spec, pose)


def displaced_vertices(body: TemplateBody, spec: OutfitSpec, pose: Pose
                       ) -> tuple[np.ndarray, np.ndarray]:
    """(clothed posed vertices, bare posed vertices).

    The clothed surface stands off the posed body along posed vertex normals
    by base + wrinkle, so loose layers swing with the pose.
    """
    posed = lbs_pose(body, pose).vertices
    n = vertex_normals(posed, body.faces)
    h = base_offset_values(body, spec) + wrinkle_offset_values(body, spec, pose)
    return posed + h[:, None] * n, posed


def generate_scan(body: TemplateBody, spec: OutfitSpec, pose: Pose,
                  count: int, seed: int, jitter: float = 0.0) -> ScanCloud:
    """Sample the displaced surface; normals come from the displaced mesh."""
    clothed, _posed = displaced_vertices(body, spec, pose)
    points = sample_surface(body, count, seed)
    fi, ba = pack_surface_points(points)
    pos = interpolate_features(clothed, body.faces, fi, ba)
    n = interpolate_features(vertex_normals(clothed, body.faces), body.faces, fi, ba)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    base = interpolate_features(
        base_offset_values(body, spec)[:, None], body.faces, fi, ba)[:, 0]
    wr = interpolate_features(
        wrinkle_offset_values(body, spec, pose)[:, None], body.faces, fi, ba)[:, 0]
    if jitter > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x31771E)))
        pos = pos + rng.normal(0.0, jitter, size=pos.shape)
    return ScanCloud(cloud=PointCloud(pos, n), pose=pose, outfit=spec.name,
                     gt_base_offset=base, gt_wrinkle_offset=wr)


def sample_poses(body: TemplateBody, count: int, seed: int,
                 max_angle: float = 0.5) -> list[Pose]:
    """Bounded random hinge poses, symmetric about zero per joint."""
    names = body.skeleton.names
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBEA7)))
    poses = []
    for _ in range(count):
        aa = np.zeros((body.skeleton.num_joints, 3))
        for joint, axis in JOINT_AXES.items():
            if joint in names:
                theta = rng.uniform(-max_angle, max_angle)
                aa[names.index(joint)] = theta * np.asarray(axis)
        poses.append(Pose.from_axis_angle(aa))
    return poses


# ---------------------------------------------------------------------------
# dataset files


def _scan_paths(out_dir: Path, outfit: str, index: int) -> tuple[Path, Path]:
    stem = f"scans/{outfit}_{index:04d}"
    return out_dir / f"{stem}.ply", out_dir / f"{stem}.json"


def save_scan(scan: ScanCloud, ply_path, sidecar_path) -> None:
    write_ply(ply_path, scan.cloud)
    doc = {"outfit": scan.outfit, "pose": scan.pose.to_json_dict(),
           "gt_base_offset": None if scan.gt_base_offset is None
           else scan.gt_base_offset.tolist(),
           "gt_wrinkle_offset": None if scan.gt_wrinkle_offset is None
           else scan.gt_wrinkle_offset.tolist()}
    Path(sidecar_path).write_text(json.dumps(doc))


def load_scan(ply_path, sidecar_path) -> ScanCloud:
    cloud = read_ply(ply_path)
    doc = json.loads(Path(sidecar_path).read_text())
    base = doc.get("gt_base_offset")
    wr = doc.get("gt_wrinkle_offset")
    return ScanCloud(cloud=cloud, pose=Pose.from_json_dict(doc["pose"]),
                     outfit=doc["outfit"],
                     gt_base_offset=None if base is None else np.asarray(base),
                     gt_wrinkle_offset=None if wr is None else np.asarray(wr))


def generate_dataset(body: TemplateBody, specs: list[OutfitSpec], out_dir,
                     pose_count: int = 100, split: float = 0.8,
                     points_per_scan: int = 4096, seed: int = 0,
                     max_angle: float = 0.5,
                     body_params: dict | None = None) -> dict:
    """Write scans + sidecars + manifest; returns the manifest dict.

    Poses are shared across outfits; the train/test split is a disjoint
    seeded shuffle of pose indices.
    """
    if pose_count < 2:
        raise ValueError("need at least 2 poses to split")
    out_dir = Path(out_dir)
    (out_dir / "scans").mkdir(parents=True, exist_ok=True)
    export_body(body, out_dir / "body.obj", out_dir / "body.rig.json")

    poses = sample_poses(body, pose_count, seed, max_angle)
    order = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117))) \
        .permutation(pose_count)
    n_train = int(round(split * pose_count))
    split_of = {int(p): ("train" if rank < n_train else "test")
                for rank, p in enumerate(order)}

    scans = []
    for spec in specs:
        for i, pose in enumerate(poses):
            scan = generate_scan(body, spec, pose, points_per_scan,
                                 seed=int(np.random.SeedSequence(
                                     (seed, 0x5CA9, spec.seed,
                                      _name_hash(spec.name), i))
                                     .generate_state(1)[0]))
            ply, sidecar = _scan_paths(out_dir, spec.name, i)
            save_scan(scan, ply, sidecar)
            scans.append({"outfit": spec.name, "pose_index": i,
                          "split": split_of[i],
                          "ply": str(ply.relative_to(out_dir)),
                          "sidecar": str(sidecar.relative_to(out_dir))})
    manifest = {
        "body": {"mesh": "body.obj", "rig": "body.rig.json"},
        "body_params": body_params,
        "outfits": {s.name: s.to_json_dict() for s in specs},
        "points_per_scan": points_per_scan,
        "pose_count": pose_count,
        "seed": seed,
        "scans": scans,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


@dataclass
class Dataset:
    """A loaded manifest: the body, outfit specs, and scan records."""

    root: Path
    body: TemplateBody
    outfits: dict[str, OutfitSpec]
    scans: list[dict]
    body_params: dict | None = None

    def scan_records(self, split: str | None = None,
                     outfit: str | None = None) -> list[dict]:
        out = [s for s in self.scans
               if (split is None or s["split"] == split)
               and (outfit is None or s["outfit"] == outfit)]
        return out

    def load(self, record: dict) -> ScanCloud:
        return load_scan(self.root / record["ply"], self.root / record["sidecar"])


def load_dataset(manifest_path) -> Dataset:
    """Open a generated dataset; accepts the manifest path or its directory."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    body = load_rigged_mesh(root / doc["body"]["mesh"], root / doc["body"]["rig"])
    outfits = {k: OutfitSpec.from_json_dict(v) for k, v in doc["outfits"].items()}
    return Dataset(root=root, body=body, outfits=outfits, scans=doc["scans"],
                   body_params=doc.get("body_params"))
