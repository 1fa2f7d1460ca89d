"""Clothed-body deformation model.

Forward pipeline per surface point: interpolate per-vertex garment and pose
features barycentrically at the point, decode a pose-invariant garment
template displacement r_g and a pose-dependent wrinkle displacement r_p
(plus a normal) in the local tangent frame, then map r_g + r_p to world space
through the frame anchored on the posed unclothed body.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .body import Pose, lbs_pose
from .geometry import (
    LocalFrame,
    PointCloud,
    SurfacePoint,
    TemplateBody,
    continuous_frames,
    interpolate_features,
    pack_surface_points,
    sample_surface,
    vertex_normals,
    vertex_tangent_refs,
)
from .meshio import load_checkpoint, save_checkpoint
from .nets import (
    EncoderConfig,
    HierarchicalPointEncoder,
    ParameterStore,
    PointwiseDecoder,
    build_encoder_tables,
    create_garment_code,
    outfit_code_name,
    pose_input_features,
)

PAPER_SCALE_COUNTS = (2048, 1024, 512, 256, 128, 64)
DESK_SCALE_COUNTS = (512, 256, 128, 64, 32, 16)


def default_abstraction_counts(num_vertices: int) -> tuple[int, ...]:
    """Abstraction pyramid sized to the template: the classic six-level
    (2048..64) for capture-scale bodies, (512..16) at desk scale, halved
    further for small test meshes."""
    if num_vertices >= 6890:
        return PAPER_SCALE_COUNTS
    counts = list(DESK_SCALE_COUNTS)
    while counts[0] > max(8, num_vertices // 2):
        counts = [c // 2 for c in counts]
        if counts[-1] < 1:
            raise ValueError(f"template too small for a 6-level encoder "
                             f"({num_vertices} vertices); pass explicit configs")
    return tuple(counts)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and ablation switches.

    merge_decoders collapses the garment/pose decoder pair into a single
    6-output head (no explicit template; r_g is emitted as zero).
    uv_features swaps barycentric feature lookup for the seamed UV-grid
    baseline route (requires an atlas).  garment_to_pose_decoder=False cuts
    the garment features out of the pose decoder's input.
    """

    code_width: int = 64
    include_pose_residual: bool = True
    garment_to_pose_decoder: bool = True
    merge_decoders: bool = False
    uv_features: bool = False
    uv_grid_resolution: int = 64
    decoder_widths: tuple[int, ...] = (256, 256, 256, 256)
    pose_encoder: EncoderConfig | None = None
    garment_encoder: EncoderConfig | None = None
    dtype: str = "float32"

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        for key in ("pose_encoder", "garment_encoder"):
            if doc[key] is not None:
                doc[key] = asdict(getattr(self, key))
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        for key in ("pose_encoder", "garment_encoder"):
            if doc.get(key) is not None:
                enc = dict(doc[key])
                for tpl in ("abstraction_counts", "sa_widths", "fp_widths"):
                    enc[tpl] = tuple(enc[tpl])
                doc[key] = EncoderConfig(**enc)
        doc["decoder_widths"] = tuple(doc.get("decoder_widths", (256, 256, 256, 256)))
        return cls(**doc)


@dataclass(frozen=True)
class DeformationSample:
    """One decoded surface point.

    Invariants: x_world == frame.rotation @ (r_g + r_p) + p_u exactly as
    written here, and n_world is the normalized frame-mapped local normal.
    """

    sp: SurfacePoint
    p_t: np.ndarray
    p_u: np.ndarray
    frame: LocalFrame
    r_g: np.ndarray
    r_p: np.ndarray
    normal_local: np.ndarray
    x_world: np.ndarray
    n_world: np.ndarray


@dataclass
class TrainingOutputs:
    """Differentiable tensors for one (pose, point-set) forward."""

    x_world: torch.Tensor      # (M, 3)
    n_world: torch.Tensor      # (M, 3) unit
    r_total: torch.Tensor      # (M, 3) local displacement
    r_pose: torch.Tensor | None  # (M, 3) wrinkle part; None when merged
    code: torch.Tensor         # (N, code_width)
    frame_rot: torch.Tensor    # (M, 3, 3) constant local frames


def _default_encoder_configs(config: ModelConfig, num_vertices: int
                             ) -> tuple[EncoderConfig, EncoderConfig]:
    pose_in = 6 if config.include_pose_residual else 3
    pose_cfg = config.pose_encoder
    garment_cfg = config.garment_encoder
    if pose_cfg is None or garment_cfg is None:
        counts = default_abstraction_counts(num_vertices)
        k = min(16, counts[-2] if len(counts) > 1 else num_vertices)
        if pose_cfg is None:
            pose_cfg = EncoderConfig(input_width=pose_in, abstraction_counts=counts,
                                     k=k, sa_widths=(32, 32, 64, 64, 128, 128),
                                     fp_widths=(128, 128, 96, 96, 64, 64))
        if garment_cfg is None:
            garment_cfg = EncoderConfig(input_width=config.code_width,
                                        abstraction_counts=counts, k=k,
                                        sa_widths=(24, 24, 32, 32, 48, 48),
                                        fp_widths=(48, 48, 48, 48, 48, 64))
    if pose_cfg.input_width != pose_in:
        raise ValueError(f"pose encoder input width {pose_cfg.input_width} does not "
                         f"match featurization width {pose_in}")
    if garment_cfg.input_width != config.code_width:
        raise ValueError("garment encoder input width must equal code width")
    return pose_cfg, garment_cfg


class ClothModel:
    """Template body + encoders + decoders + per-outfit garment codes."""

    def __init__(self, body: TemplateBody, config: ModelConfig | None = None,
                 seed: int = 0, atlas=None):
        self.body = body
        self.config = config or ModelConfig()
        self.seed = seed
        self.dtype = {"float32": torch.float32, "float64": torch.float64}[self.config.dtype]
        self.pose_config, self.garment_config = _default_encoder_configs(
            self.config, body.num_vertices)
        self.atlas = atlas
        if self.config.uv_features and atlas is None:
            raise ValueError("uv_features requires an atlas")

        self.store = ParameterStore(self.dtype)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1A7E)))
        self.pose_encoder = HierarchicalPointEncoder("pose_encoder", self.pose_config)
        self.garment_encoder = HierarchicalPointEncoder("garment_encoder",
                                                        self.garment_config)
        self.pose_encoder.register(self.store, rng)
        self.garment_encoder.register(self.store, rng)
        c_p, c_g = self.pose_config.output_width, self.garment_config.output_width
        if self.config.merge_decoders:
            self.merged_decoder = PointwiseDecoder(
                "decoder.merged", c_g + c_p + 3, 6, self.config.decoder_widths)
            self.merged_decoder.register(self.store, rng)
            self.garment_decoder = self.pose_decoder = None
        else:
            self.merged_decoder = None
            self.garment_decoder = PointwiseDecoder(
                "decoder.garment", c_g + 3, 3, self.config.decoder_widths)
            pose_in = c_p + 3 + (c_g if self.config.garment_to_pose_decoder else 0)
            self.pose_decoder = PointwiseDecoder(
                "decoder.pose", pose_in, 6, self.config.decoder_widths)
            self.garment_decoder.register(self.store, rng)
            self.pose_decoder.register(self.store, rng)
        self.outfits: list[str] = []
        self._rebuild_template_caches()

    # -- template caches ----------------------------------------------------

    def _template_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.body.vertices.tobytes())
        h.update(self.body.faces.tobytes())
        return h.hexdigest()

    def _rebuild_template_caches(self) -> None:
        body = self.body
        self.pose_tables = build_encoder_tables(body.vertices, self.pose_config)
        self.garment_tables = build_encoder_tables(body.vertices, self.garment_config)
        self.tangent_refs = vertex_tangent_refs(body.faces, body.num_vertices)
        self._digest = self._template_digest()
        self._grid_cache = None

    def _check_template(self) -> None:
        if self._template_digest() != self._digest:
            self._rebuild_template_caches()

    # -- outfits ------------------------------------------------------------

    def add_outfit(self, outfit: str) -> None:
        """Create the learnable garment code for a new outfit id."""
        if outfit in self.outfits:
            return
        rng = np.random.default_rng(
            np.random.SeedSequence((self.seed, 0xC0DE, zlib.crc32(outfit.encode()))))
        create_garment_code(self.store, rng, outfit, self.body.num_vertices,
                            self.config.code_width)
        self.outfits.append(outfit)

    def _code(self, outfit: str) -> torch.Tensor:
        if outfit not in self.outfits:
            raise ValueError(f"unknown outfit {outfit!r}")
        return self.store[outfit_code_name(outfit)]

    # -- feature fields (per-vertex, torch) ----------------------------------

    def garment_features(self, outfit: str) -> torch.Tensor:
        """Per-vertex garment features (N, C_g); pose never enters."""
        return self.garment_encoder.forward(self.store, self.garment_tables,
                                            self._code(outfit))

    def pose_features(self, posed_vertices: np.ndarray) -> torch.Tensor:
        feats = pose_input_features(self.body.vertices, posed_vertices,
                                    self.config.include_pose_residual)
        return self.pose_encoder.forward(
            self.store, self.pose_tables,
            torch.from_numpy(feats).to(self.dtype))

    # -- surface lookup -----------------------------------------------------

    def _lookup(self, per_vertex: torch.Tensor, face_idx: np.ndarray,
                bary: np.ndarray) -> torch.Tensor:
        """Feature value at each surface point, (M, C).

        Default route: barycentric interpolation with vertex-index-sorted
        accumulation (cross-face continuous).  uv_features route: splat the
        field to a seamed UV grid and bilinear-sample it there instead.
        """
        if self.config.uv_features:
            from .uvgrid import splat_and_sample
            if self._grid_cache is None:
                self._grid_cache = self.atlas.prepare(
                    self.body.faces, self.config.uv_grid_resolution)
            return splat_and_sample(per_vertex, self._grid_cache, face_idx, bary)
        idx = self.body.faces[face_idx]                     # (M, 3)
        order = np.argsort(idx, axis=1)
        idx_s = torch.from_numpy(np.take_along_axis(idx, order, axis=1))
        bary_s = torch.from_numpy(
            np.take_along_axis(bary, order, axis=1)).to(per_vertex.dtype)
        out = bary_s[:, 0:1] * per_vertex[idx_s[:, 0]]
        out = out + bary_s[:, 1:2] * per_vertex[idx_s[:, 1]]
        out = out + bary_s[:, 2:3] * per_vertex[idx_s[:, 2]]
        return out

    def _decode(self, phi_g_pts: torch.Tensor, phi_p_pts: torch.Tensor,
                p_t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None,
                                            torch.Tensor]:
        """(r_g, r_p, local normal) from per-point features.

        Merged ablation returns (zeros, None, n) with the whole displacement
        in r_total = r_g + r_p handled by the caller via r_g + wrinkle.
        """
        if self.config.merge_decoders:
            out = self.merged_decoder.forward(
                self.store, torch.cat([phi_g_pts, phi_p_pts, p_t], dim=1))
            return out[:, :3], None, out[:, 3:]
        r_g = self.garment_decoder.forward(
            self.store, torch.cat([phi_g_pts, p_t], dim=1))
        pose_in = [phi_g_pts, phi_p_pts] if self.config.garment_to_pose_decoder \
            else [phi_p_pts]
        out = self.pose_decoder.forward(
            self.store, torch.cat(pose_in + [p_t], dim=1))
        return r_g, out[:, :3], out[:, 3:]

    # -- forward ------------------------------------------------------------

    def _frames(self, posed_vertices: np.ndarray, face_idx: np.ndarray,
                bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        normals = vertex_normals(posed_vertices, self.body.faces)
        return continuous_frames(posed_vertices, self.body.faces, face_idx, bary,
                                 self.tangent_refs, posed_normals=normals)

    def training_forward(self, pose: Pose, outfit: str, face_idx: np.ndarray,
                         bary: np.ndarray, phi_g: torch.Tensor | None = None
                         ) -> TrainingOutputs:
        """Differentiable forward for packed surface points.

        phi_g may be passed in to share one garment-encoder evaluation across
        a batch of poses of the same outfit (gradients still flow into it).
        """
        self._check_template()
        code = self._code(outfit)
        if phi_g is None:
            phi_g = self.garment_features(outfit)
        posed = lbs_pose(self.body, pose).vertices
        phi_p = self.pose_features(posed)
        p_t_np = interpolate_features(self.body.vertices, self.body.faces,
                                      face_idx, bary)
        rot_np, origin_np = self._frames(posed, face_idx, bary)
        p_t = torch.from_numpy(p_t_np).to(self.dtype)
        rot = torch.from_numpy(rot_np).to(self.dtype)
        origin = torch.from_numpy(origin_np).to(self.dtype)

        phi_g_pts = self._lookup(phi_g, face_idx, bary)
        phi_p_pts = self._lookup(phi_p, face_idx, bary)
        r_g, r_p, n_local = self._decode(phi_g_pts, phi_p_pts, p_t)
        r_total = r_g if r_p is None else r_g + r_p
        x = torch.einsum("mij,mj->mi", rot, r_total) + origin
        n_world = torch.einsum("mij,mj->mi", rot, n_local)
        n_world = n_world / n_world.norm(dim=1, keepdim=True).clamp_min(1e-8)
        return TrainingOutputs(x_world=x, n_world=n_world, r_total=r_total,
                               r_pose=r_p, code=code, frame_rot=rot)

    def forward(self, pose: Pose, outfit: str,
                points: list[SurfacePoint]) -> list[DeformationSample]:
        """Decode each surface point under the given pose; full provenance."""
        face_idx, bary = pack_surface_points(points)
        arrays = self.forward_arrays(pose, outfit, face_idx, bary)
        samples = []
        for i, sp in enumerate(points):
            r_g, r_p = arrays["r_g"][i], arrays["r_p"][i]
            rot, p_u = arrays["rot"][i], arrays["p_u"][i]
            x_world = rot @ (r_g + r_p) + p_u
            n_local = arrays["normal_local"][i]
            n_world = rot @ n_local
            length = np.linalg.norm(n_world)
            # degenerate decode (e.g. untrained zero head): body normal
            n_world = n_world / length if length > 1e-12 else rot[:, 2].copy()
            samples.append(DeformationSample(
                sp=sp, p_t=arrays["p_t"][i], p_u=p_u,
                frame=LocalFrame(rotation=rot, origin=p_u),
                r_g=r_g, r_p=r_p, normal_local=n_local,
                x_world=x_world, n_world=n_world))
        return samples

    def forward_arrays(self, pose: Pose, outfit: str, face_idx: np.ndarray,
                       bary: np.ndarray) -> dict[str, np.ndarray]:
        """Vectorized inference returning float64 numpy arrays (no grads)."""
        self._check_template()
        if pose.num_joints != self.body.skeleton.num_joints:
            raise ValueError("pose joint count does not match the body")
        with torch.no_grad():
            phi_g = self.garment_features(outfit)
            posed = lbs_pose(self.body, pose).vertices
            phi_p = self.pose_features(posed)
            p_t = interpolate_features(self.body.vertices, self.body.faces,
                                       face_idx, bary)
            rot, p_u = self._frames(posed, face_idx, bary)
            r_g, r_p, n_local = self._decode(
                self._lookup(phi_g, face_idx, bary),
                self._lookup(phi_p, face_idx, bary),
                torch.from_numpy(p_t).to(self.dtype))
            r_g = r_g.double().numpy()
            r_p = np.zeros_like(r_g) if r_p is None else r_p.double().numpy()
            n_local = n_local.double().numpy()
        return {"p_t": p_t, "p_u": p_u, "rot": rot, "r_g": r_g, "r_p": r_p,
                "normal_local": n_local}

    # -- inference products ---------------------------------------------------

    def template_preview(self, outfit: str,
                         points: list[SurfacePoint]) -> PointCloud:
        """The explicit garment template: body surface plus r_g only, at the
        identity pose.  Takes no pose argument, and cannot depend on one."""
        face_idx, bary = pack_surface_points(points)
        return self.template_preview_packed(outfit, face_idx, bary)

    def template_preview_packed(self, outfit: str, face_idx: np.ndarray,
                                bary: np.ndarray) -> PointCloud:
        self._check_template()
        identity = Pose.identity(self.body.skeleton.num_joints)
        arrays = self.forward_arrays(identity, outfit, face_idx, bary)
        pos = np.einsum("mij,mj->mi", arrays["rot"], arrays["r_g"]) + arrays["p_u"]
        normals = arrays["rot"][:, :, 2]  # body surface normal at each point
        return PointCloud(pos, normals)

    def animate(self, poses: list[Pose], outfit: str, count: int = 8192,
                seed: int = 0) -> list[PointCloud]:
        """One cloud per pose over a fixed surface point set, so emitted
        points correspond across frames."""
        points = sample_surface(self.body, count, seed)
        face_idx, bary = pack_surface_points(points)
        clouds = []
        for pose in poses:
            a = self.forward_arrays(pose, outfit, face_idx, bary)
            r = a["r_g"] + a["r_p"]
            x = np.einsum("mij,mj->mi", a["rot"], r) + a["p_u"]
            n = np.einsum("mij,mj->mi", a["rot"], a["normal_local"])
            norms = np.linalg.norm(n, axis=1, keepdims=True)
            bad = norms[:, 0] < 1e-12
            if bad.any():
                # degenerate decodes fall back to the body normal
                n[bad] = a["rot"][bad, :, 2]
                norms[bad] = 1.0
            clouds.append(PointCloud(x, n / norms))
        return clouds

    # -- checkpointing --------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "kind": "cloth-model",
            "config": self.config.to_json_dict(),
            "seed": self.seed,
            "outfits": list(self.outfits),
            "template_digest": self._digest,
            "num_vertices": self.body.num_vertices,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.store.state_arrays(), meta)

    @classmethod
    def load(cls, path, body: TemplateBody, atlas=None) -> "ClothModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "cloth-model":
            raise ValueError(f"{path}: not a model checkpoint")
        config = ModelConfig.from_json_dict(meta["config"])
        model = cls(body, config, seed=int(meta["seed"]), atlas=atlas)
        if meta["template_digest"] != model._digest:
            raise ValueError("checkpoint was trained on a different template body")
        for outfit in meta["outfits"]:
            model.add_outfit(outfit)
        model.store.load_arrays(arrays)
        return model
