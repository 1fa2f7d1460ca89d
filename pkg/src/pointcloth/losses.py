"""Training losses: squared-distance Chamfer, nearest-neighbor normal
comparison, and the displacement/code regularizers, with their schedule.

The Chamfer here is the dense differentiable route used in training; metric
evaluation goes through geometry.chamfer (kd-tree).  Tests hold the two
routes to the same values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import NearestNeighborIndex, chamfer as kd_chamfer, PointCloud

CHAMFER_REPORT_SCALE = 1e4  # squared meters -> the conventional 1e-4 m^2 unit
NORMAL_REPORT_SCALE = 10.0


@dataclass(frozen=True)
class LossWeights:
    """Weights and schedule for the composite training loss.

    The normal term joins after ``normal_start_fraction`` of the epoch budget
    (0.625 keeps the 250-of-400 proportion at any budget).  The displacement
    regularizer is mean ||r||^2 plus ``wrinkle_penalty`` times mean ||r_p||^2
    (what pushes pose-independent offsets into the garment channel) plus
    ``code_penalty`` times the mean squared garment-code row norm.
    """

    chamfer_weight: float = 2.0e4
    normal_weight: float = 0.1
    regularization_weight: float = 2.0e3
    wrinkle_penalty: float = 1.0
    code_penalty: float = 5.0e-4
    normal_start_fraction: float = 0.625

    def __post_init__(self):
        for name in ("chamfer_weight", "normal_weight", "regularization_weight",
                     "wrinkle_penalty", "code_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.normal_start_fraction <= 1.0:
            raise ValueError("normal_start_fraction must be within [0, 1]")

    def normal_active(self, epoch: int, total_epochs: int) -> bool:
        """True when the normal loss participates at this (0-based) epoch."""
        return epoch >= int(self.normal_start_fraction * total_epochs)


@dataclass(frozen=True)
class LossReport:
    """Unweighted term values (floats) alongside the weighted total."""

    chamfer: float
    normal: float
    rgl_displacement: float
    rgl_wrinkle: float
    rgl_code: float
    total: float
    normal_included: bool

    CSV_FIELDS = ("chamfer", "normal", "rgl_displacement", "rgl_wrinkle",
                  "rgl_code", "total", "normal_included")

    def csv_row(self) -> list:
        return [f"{self.chamfer:.10e}", f"{self.normal:.10e}",
                f"{self.rgl_displacement:.10e}", f"{self.rgl_wrinkle:.10e}",
                f"{self.rgl_code:.10e}", f"{self.total:.10e}",
                int(self.normal_included)]


def _pairwise_sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """(M, S) matrix of squared distances, clamped against negative round-off."""
    aa = (a * a).sum(dim=1, keepdim=True)
    bb = (b * b).sum(dim=1, keepdim=True)
    d = aa + bb.T - 2.0 * (a @ b.T)
    return d.clamp_min(0.0)


def chamfer_loss(pred: torch.Tensor, scan: torch.Tensor) -> torch.Tensor:
    """Differentiable symmetric squared Chamfer between (M,3) and (S,3)."""
    if pred.shape[0] == 0 or scan.shape[0] == 0:
        raise ValueError("empty cloud")
    d = _pairwise_sq_dists(pred, scan)
    return d.min(dim=1).values.mean() + d.min(dim=0).values.mean()


def normal_loss(pred_xyz: torch.Tensor, pred_normals: torch.Tensor,
                scan_xyz: torch.Tensor, scan_normals: torch.Tensor) -> torch.Tensor:
    """Mean L1 difference between each predicted normal and the normal of its
    nearest scan point.  Opposite unit normals score 2.0."""
    if pred_xyz.shape[0] == 0 or scan_xyz.shape[0] == 0:
        raise ValueError("empty cloud")
    with torch.no_grad():
        nearest = _pairwise_sq_dists(pred_xyz, scan_xyz).argmin(dim=1)
    return (pred_normals - scan_normals[nearest]).abs().sum(dim=1).mean()


def displacement_regularizers(r_total: torch.Tensor, r_pose: torch.Tensor | None,
                              code: torch.Tensor | None
                              ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(mean ||r||^2, mean ||r_p||^2, mean garment-code row ||.||^2)."""
    zero = r_total.new_zeros(())
    base = (r_total * r_total).sum(dim=1).mean()
    wrinkle = zero if r_pose is None else (r_pose * r_pose).sum(dim=1).mean()
    code_term = zero if code is None else (code * code).sum(dim=1).mean()
    return base, wrinkle, code_term


def data_loss(pred, scan) -> tuple[float, float]:
    """Metric-grade data terms over decoded samples vs. a scan cloud.

    This is the kd-tree evaluation route (float64 numpy), deliberately
    separate from the dense torch training route above; tests pin the two
    to each other.  Accepts DeformationSample sequences or PointClouds.
    """
    if isinstance(pred, PointCloud):
        pred_xyz, pred_n = pred.positions, pred.normals
    else:
        pred_xyz = np.array([s.x_world for s in pred])
        pred_n = np.array([s.n_world for s in pred])
    cloud = scan.cloud if hasattr(scan, "cloud") else scan
    if cloud.normals is None:
        raise ValueError("scan has no normals")
    if pred_n is None:
        raise ValueError("predictions have no normals")
    ch = kd_chamfer(PointCloud(pred_xyz), cloud)
    nearest, _ = NearestNeighborIndex(cloud.positions).query_many(pred_xyz)
    nl = float(np.abs(pred_n - cloud.normals[nearest]).sum(axis=1).mean())
    return ch, nl


def regularization(samples, code: np.ndarray | None) -> tuple[float, float, float]:
    """(mean ||r||^2, mean ||r_p||^2, mean code row ||.||^2) over samples."""
    r = np.array([s.r_g + s.r_p for s in samples])
    rp = np.array([s.r_p for s in samples])
    base = float((r * r).sum(axis=1).mean())
    wrinkle = float((rp * rp).sum(axis=1).mean())
    code_term = 0.0 if code is None else float((code * code).sum(axis=1).mean())
    return base, wrinkle, code_term


def total_loss(pred_xyz: torch.Tensor, pred_normals: torch.Tensor,
               scan_xyz: torch.Tensor, scan_normals: torch.Tensor,
               r_total: torch.Tensor, r_pose: torch.Tensor | None,
               code: torch.Tensor | None, weights: LossWeights,
               epoch: int, total_epochs: int) -> tuple[torch.Tensor, LossReport]:
    """Composite weighted loss; returns the backpropable scalar and a report."""
    ch = chamfer_loss(pred_xyz, scan_xyz)
    include_normal = weights.normal_active(epoch, total_epochs)
    if include_normal:
        nl = normal_loss(pred_xyz, pred_normals, scan_xyz, scan_normals)
    else:
        nl = pred_xyz.new_zeros(())
    base, wrinkle, code_term = displacement_regularizers(r_total, r_pose, code)
    rgl = base + weights.wrinkle_penalty * wrinkle + weights.code_penalty * code_term
    total = (weights.chamfer_weight * ch
             + weights.normal_weight * nl
             + weights.regularization_weight * rgl)
    report = LossReport(chamfer=float(ch.detach()), normal=float(nl.detach()),
                        rgl_displacement=float(base.detach()),
                        rgl_wrinkle=float(wrinkle.detach()),
                        rgl_code=float(code_term.detach()),
                        total=float(total.detach()),
                        normal_included=include_normal)
    return total, report
