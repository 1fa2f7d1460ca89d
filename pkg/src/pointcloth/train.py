"""Training loop, evaluation metrics, and export helpers.

Everything downstream of the model is deterministic per (seed, config,
dataset): scan subsampling, surface resampling, and batch shuffling all draw
from seed sequences keyed on the epoch/step indices, and the optimizer runs
on CPU tensors with a fixed parameter order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .body import Pose
from .geometry import (
    PointCloud,
    TemplateBody,
    interpolate_features,
    pack_surface_points,
    sample_surface,
)
from .losses import (
    CHAMFER_REPORT_SCALE,
    NORMAL_REPORT_SCALE,
    LossWeights,
    chamfer_loss,
    data_loss,
    total_loss,
)
from .meshio import write_obj, write_ply
from .model import ClothModel, ModelConfig
from .synthdata import Dataset, ScanCloud, base_offset_values


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule plus the ablation switches.

    merge_decoders folds the two displacement heads into one (no explicit
    template); uv_feature_baseline swaps surface feature lookup for the
    seamed UV-grid route; garment_to_pose_decoder=False starves the wrinkle
    head of garment features; template_data_term additionally fits the bare
    template branch to the scans (off by default: it drags wrinkles into the
    template).
    """

    epochs: int = 400
    batch_size: int = 4
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    points_per_step: int = 2048
    scan_budget: int = 4096
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    merge_decoders: bool = False
    uv_feature_baseline: bool = False
    garment_to_pose_decoder: bool = True
    template_data_term: bool = False
    code_width: int = 64
    uv_grid_resolution: int = 64
    decoder_widths: tuple[int, ...] = (256, 256, 256, 256)

    def __post_init__(self):
        object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not self.decoder_widths or any(w < 1 for w in self.decoder_widths):
            raise ValueError("decoder widths must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.points_per_step < 1 or self.scan_budget < 1:
            raise ValueError("point budgets must be positive")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Laptop-scale schedule: same recipe, fewer epochs."""
        base = cls(epochs=60)
        return replace(base, **overrides) if overrides else base

    def to_json_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__
               if k != "weights"}
        w = self.weights
        doc["weights"] = {k: getattr(w, k) for k in w.__dataclass_fields__}
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "weights" in doc:
            doc["weights"] = LossWeights(**doc["weights"])
        if "decoder_widths" in doc:
            doc["decoder_widths"] = tuple(doc["decoder_widths"])
        return cls(**doc)


def build_model(body: TemplateBody, config: TrainConfig, atlas=None) -> ClothModel:
    """Model wired per the config's ablation switches."""
    mc = ModelConfig(code_width=config.code_width,
                     merge_decoders=config.merge_decoders,
                     uv_features=config.uv_feature_baseline,
                     garment_to_pose_decoder=config.garment_to_pose_decoder,
                     uv_grid_resolution=config.uv_grid_resolution,
                     decoder_widths=config.decoder_widths)
    return ClothModel(body, mc, seed=config.seed, atlas=atlas)


def _derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _subsample(scan: ScanCloud, budget: int, seed_key: tuple) -> tuple[np.ndarray, np.ndarray]:
    pos, nrm = scan.cloud.positions, scan.cloud.normals
    if len(pos) <= budget:
        return pos, nrm
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    pick = rng.choice(len(pos), size=budget, replace=False)
    return pos[pick], nrm[pick]


@dataclass
class TrainResult:
    history: list[dict]
    initial_val: float
    final_val: float
    checkpoint_path: Path | None = None
    log_path: Path | None = None


_HISTORY_FIELDS = ("epoch", "chamfer", "normal", "rgl_displacement",
                   "rgl_wrinkle", "rgl_code", "template_chamfer", "total",
                   "val_total", "val_chamfer")


def _write_history_csv(path, history: list[dict]) -> None:
    lines = [",".join(_HISTORY_FIELDS)]
    for row in history:
        lines.append(",".join(f"{row[k]:.10g}" if k != "epoch" else str(row[k])
                              for k in _HISTORY_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def _validation_items(model: ClothModel, dataset: Dataset, config: TrainConfig
                      ) -> list[tuple[ScanCloud, np.ndarray, np.ndarray,
                                      np.ndarray, np.ndarray]]:
    """Fixed (scan, surface points, scan subset) tuples, chosen once."""
    records = dataset.scan_records(split="test") or dataset.scan_records(split="train")
    records = sorted(records, key=lambda r: (r["outfit"], r["pose_index"]))
    records = records[:max(config.batch_size, 1)]
    items = []
    for k, rec in enumerate(records):
        scan = dataset.load(rec)
        pts = sample_surface(model.body, config.points_per_step,
                             _derive_seed(config.seed, 0xA11D, k))
        fi, ba = pack_surface_points(pts)
        sp, sn = _subsample(scan, config.scan_budget, (config.seed, 0xA11E, k))
        items.append((scan, fi, ba, sp, sn))
    return items


def _validation_loss(model: ClothModel, items, config: TrainConfig
                     ) -> tuple[float, float]:
    """Full loss on the fixed batch, normal term always on for comparability."""
    totals, chamfers = [], []
    with torch.no_grad():
        for scan, fi, ba, sp, sn in items:
            out = model.training_forward(scan.pose, scan.outfit, fi, ba)
            loss, report = total_loss(
                out.x_world, out.n_world,
                torch.from_numpy(sp).to(model.dtype),
                torch.from_numpy(sn).to(model.dtype),
                out.r_total, out.r_pose, out.code, config.weights,
                epoch=config.epochs, total_epochs=config.epochs)
            totals.append(float(loss))
            chamfers.append(report.chamfer)
    return float(np.mean(totals)), float(np.mean(chamfers))


def train(model: ClothModel, dataset: Dataset, config: TrainConfig,
          out_dir=None) -> TrainResult:
    """Fit the model to the dataset's training split.

    Writes model.ckpt and losses.csv under out_dir when given.  A NaN loss
    aborts with a diagnostic snapshot rather than continuing to burn time.
    """
    records = sorted(dataset.scan_records(split="train"),
                     key=lambda r: (r["outfit"], r["pose_index"]))
    if not records:
        raise ValueError("dataset has no training scans")
    for outfit in sorted(dataset.outfits):
        model.add_outfit(outfit)
    scans = [dataset.load(r) for r in records]

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_config.json").write_text(
            json.dumps(config.to_json_dict(), indent=1))

    opt = torch.optim.Adam(model.store.tensors(), lr=config.learning_rate,
                           betas=(config.adam_beta1, config.adam_beta2),
                           eps=config.adam_eps)
    val_items = _validation_items(model, dataset, config)
    initial_val, _ = _validation_loss(model, val_items, config)

    history: list[dict] = []
    for epoch in range(config.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, 0x0D0E, epoch))
        ).permutation(len(scans))
        sums = {k: 0.0 for k in _HISTORY_FIELDS if k not in
                ("epoch", "val_total", "val_chamfer")}
        batches = 0
        for step, lo in enumerate(range(0, len(order), config.batch_size)):
            chunk = order[lo:lo + config.batch_size]
            opt.zero_grad()
            phi_g_cache: dict[str, torch.Tensor] = {}
            losses = []
            step_report = {k: 0.0 for k in sums}
            for j, ri in enumerate(chunk):
                scan = scans[int(ri)]
                if scan.outfit not in phi_g_cache:
                    phi_g_cache[scan.outfit] = model.garment_features(scan.outfit)
                pts = sample_surface(model.body, config.points_per_step,
                                     _derive_seed(config.seed, 0x50F7,
                                                  epoch, step, j))
                fi, ba = pack_surface_points(pts)
                sp, sn = _subsample(scan, config.scan_budget,
                                    (config.seed, 0x5B5A, epoch, int(ri)))
                out = model.training_forward(scan.pose, scan.outfit, fi, ba,
                                             phi_g=phi_g_cache[scan.outfit])
                scan_xyz = torch.from_numpy(sp).to(model.dtype)
                scan_nrm = torch.from_numpy(sn).to(model.dtype)
                loss, report = total_loss(out.x_world, out.n_world,
                                          scan_xyz, scan_nrm,
                                          out.r_total, out.r_pose, out.code,
                                          config.weights, epoch, config.epochs)
                tmpl_ch = 0.0
                if config.template_data_term and out.r_pose is not None:
                    x_tmpl = out.x_world - torch.einsum(
                        "mij,mj->mi", out.frame_rot, out.r_pose)
                    tmpl = chamfer_loss(x_tmpl, scan_xyz)
                    loss = loss + config.weights.chamfer_weight * tmpl
                    tmpl_ch = float(tmpl.detach())
                losses.append(loss)
                for k in ("chamfer", "normal", "rgl_displacement",
                          "rgl_wrinkle", "rgl_code", "total"):
                    step_report[k] += getattr(report, k) / len(chunk)
                step_report["template_chamfer"] += tmpl_ch / len(chunk)
            batch_loss = torch.stack(losses).mean()
            if not math.isfinite(float(batch_loss.detach())):
                snapshot = None
                if out_dir is not None:
                    snapshot = out_dir / "diagnostic_nan.ckpt"
                    model.save(snapshot, extra_meta={"nan_epoch": epoch,
                                                     "nan_step": step})
                    (out_dir / "diagnostic_nan.json").write_text(json.dumps(
                        {"epoch": epoch, "step": step, "report": step_report}))
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {step}"
                    + (f"; snapshot at {snapshot}" if snapshot else ""))
            batch_loss.backward()
            opt.step()
            for k in sums:
                sums[k] += step_report[k]
            batches += 1

        val_total, val_chamfer = _validation_loss(model, val_items, config)
        row = {"epoch": epoch, "val_total": val_total, "val_chamfer": val_chamfer}
        row.update({k: sums[k] / batches for k in sums})
        history.append(row)

    final_val = history[-1]["val_total"]
    ckpt_path = log_path = None
    if out_dir is not None:
        ckpt_path = out_dir / "model.ckpt"
        model.save(ckpt_path, extra_meta={
            "initial_val": initial_val, "final_val": final_val})
        log_path = out_dir / "losses.csv"
        _write_history_csv(log_path, history)
    return TrainResult(history=history, initial_val=initial_val,
                       final_val=final_val, checkpoint_path=ckpt_path,
                       log_path=log_path)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    """Held-out metrics in the reporting units: Chamfer x 1e-4 m^2, normal
    discrepancy x 1e-1."""

    per_outfit: dict[str, dict[str, float]]
    mean_chamfer: float
    max_chamfer: float
    mean_normal: float
    max_normal: float
    points: int
    split: str

    def __post_init__(self):
        vals = [self.mean_chamfer, self.max_chamfer,
                self.mean_normal, self.max_normal]
        vals += [v for d in self.per_outfit.values() for v in d.values()]
        if any(v < -1e-12 for v in vals):
            raise ValueError("metrics must be non-negative")

    def to_json_dict(self) -> dict:
        return {"per_outfit": self.per_outfit,
                "mean_chamfer": self.mean_chamfer,
                "max_chamfer": self.max_chamfer,
                "mean_normal": self.mean_normal,
                "max_normal": self.max_normal,
                "points": self.points, "split": self.split}


def predict_cloud(model: ClothModel, pose, outfit: str, count: int,
                  seed: int) -> PointCloud:
    """Sample the clothed surface prediction as a point cloud with normals."""
    return model.animate([pose], outfit, count=count, seed=seed)[0]


def evaluate(model: ClothModel, dataset: Dataset, points: int = 8192,
             split: str = "test", seed: int = 0) -> EvalReport:
    """Chamfer and normal discrepancy against every scan in the split,
    averaged per outfit, then summarized as mean/max across outfits."""
    outfit_metrics: dict[str, dict[str, float]] = {}
    for outfit in sorted(dataset.outfits):
        records = dataset.scan_records(split=split, outfit=outfit)
        if not records:
            raise ValueError(f"no {split!r} scans for outfit {outfit!r}")
        cds, nmls = [], []
        for rec in sorted(records, key=lambda r: r["pose_index"]):
            scan = dataset.load(rec)
            pred = predict_cloud(model, scan.pose, outfit, points,
                                 _derive_seed(seed, 0xE7A1, rec["pose_index"]))
            cd, nml = data_loss(pred, scan)
            cds.append(cd)
            nmls.append(nml)
        outfit_metrics[outfit] = {
            "chamfer": float(np.mean(cds)) * CHAMFER_REPORT_SCALE,
            "normal": float(np.mean(nmls)) * NORMAL_REPORT_SCALE,
        }
    cd_vals = [m["chamfer"] for m in outfit_metrics.values()]
    nml_vals = [m["normal"] for m in outfit_metrics.values()]
    return EvalReport(per_outfit=outfit_metrics,
                      mean_chamfer=float(np.mean(cd_vals)),
                      max_chamfer=float(np.max(cd_vals)),
                      mean_normal=float(np.mean(nml_vals)),
                      max_normal=float(np.max(nml_vals)),
                      points=points, split=split)


# ---------------------------------------------------------------------------
# decomposition diagnostics


def template_alignment(model: ClothModel, dataset: Dataset, outfit: str,
                       points: int = 2000, seed: int = 0) -> float:
    """Cosine similarity between the learned template's standoff along the
    body normal and the generator's base offset field, sampled at the rest
    pose.  Returns 0.0 for an all-zero template."""
    body = dataset.body
    if outfit not in dataset.outfits:
        raise ValueError(f"outfit {outfit!r} not in the dataset manifest")
    pts = sample_surface(body, points, seed)
    face_idx, bary = pack_surface_points(pts)
    rest = Pose.identity(body.skeleton.num_joints)
    arrays = model.forward_arrays(rest, outfit, face_idx, bary)
    world_g = np.einsum("mij,mj->mi", arrays["rot"], arrays["r_g"])
    standoff = (world_g * arrays["rot"][:, :, 2]).sum(axis=1)
    target = interpolate_features(
        base_offset_values(body, dataset.outfits[outfit])[:, None],
        body.faces, face_idx, bary)[:, 0]
    denom = float(np.linalg.norm(standoff) * np.linalg.norm(target))
    if denom == 0.0:
        return 0.0
    return float(standoff @ target / denom)


def wrinkle_to_template_ratio(model: ClothModel, dataset: Dataset, outfit: str,
                              split: str = "train", max_scans: int = 10,
                              points: int = 2000, seed: int = 0) -> float:
    """mean ||r_pose|| / mean ||r_template|| over poses of the given split.
    A small value means the wrinkle branch carries only the pose-dependent
    residue.  Returns inf when the template is identically zero."""
    records = dataset.scan_records(split=split, outfit=outfit)
    if not records:
        raise ValueError(f"no {split!r} scans for outfit {outfit!r}")
    records = sorted(records, key=lambda r: r["pose_index"])[:max_scans]
    pts = sample_surface(dataset.body, points, seed)
    face_idx, bary = pack_surface_points(pts)
    mean_pose, mean_template = [], []
    for rec in records:
        scan = dataset.load(rec)
        arrays = model.forward_arrays(scan.pose, outfit, face_idx, bary)
        mean_pose.append(np.linalg.norm(arrays["r_p"], axis=1).mean())
        mean_template.append(np.linalg.norm(arrays["r_g"], axis=1).mean())
    template = float(np.mean(mean_template))
    if template == 0.0:
        return math.inf
    return float(np.mean(mean_pose)) / template


# ---------------------------------------------------------------------------
# exports


def export_cloud(cloud: PointCloud, path) -> None:
    if len(cloud) == 0:
        raise ValueError(f"refusing to write empty cloud to {path}")
    write_ply(path, cloud)


def export_mesh(vertices: np.ndarray, faces: np.ndarray, path,
                normals: np.ndarray | None = None) -> None:
    write_obj(path, vertices, faces, normals)


def export_template(model: ClothModel, outfit: str, path,
                    count: int = 8192, seed: int = 0) -> None:
    """Write the explicit garment template (identity pose, no wrinkles)."""
    points = sample_surface(model.body, count, seed)
    export_cloud(model.template_preview(outfit, points), path)
