"""Differentiable building blocks: a named parameter store, hierarchical
point-set encoders (set abstraction + feature propagation over static
neighborhood tables), pointwise MLP decoders, and per-outfit garment codes.

torch supplies tensors, matmul and reverse-mode gradients; all structure,
table construction and initialization live here.  Every random draw comes
from a numpy Generator so checkpoints are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import farthest_point_sample

EPS_INTERP = 1e-8  # inverse-squared-distance interpolation stabilizer


@dataclass(frozen=True)
class EncoderConfig:
    """Hierarchical encoder shape.

    abstraction_counts: points kept per level, strictly decreasing.
    sa_widths: per-level set-abstraction MLP width (two linear+relu layers).
    fp_widths: per-stage feature-propagation width, deepest stage first;
    the final entry is the per-vertex output feature width.
    """

    input_width: int
    abstraction_counts: tuple[int, ...] = (512, 256, 128, 64, 32, 16)
    k: int = 16
    sa_widths: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    fp_widths: tuple[int, ...] = (128, 128, 96, 96, 64, 64)

    def __post_init__(self):
        counts = self.abstraction_counts
        if len(counts) == 0:
            raise ValueError("need at least one abstraction level")
        if any(c < 1 for c in counts):
            raise ValueError("abstraction counts must be >= 1")
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise ValueError("abstraction counts must be strictly decreasing")
        if len(self.sa_widths) != len(counts) or len(self.fp_widths) != len(counts):
            raise ValueError("need one sa width and one fp width per level")
        if self.input_width < 1 or any(w < 1 for w in self.sa_widths + self.fp_widths):
            raise ValueError("layer widths must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def levels(self) -> int:
        return len(self.abstraction_counts)

    @property
    def output_width(self) -> int:
        return self.fp_widths[-1]


@dataclass
class EncoderTables:
    """Static geometry tables for one encoder over a fixed point set.

    center_idx[i]: level-(i+1) centers as indices into the original points.
    group_idx[i]: (counts[i], k) neighbor positions within the previous level.
    interp_idx[i] / interp_w[i]: 3-NN positions within level i+1 and their
    normalized inverse-squared-distance weights, one row per level-i point.
    """

    center_idx: list[np.ndarray]
    group_idx: list[np.ndarray]
    interp_idx: list[np.ndarray]
    interp_w: list[np.ndarray]


def _knn_positions(queries: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """k nearest pool positions per query; ties resolved to the lowest index."""
    d = np.sum((queries[:, None, :] - pool[None, :, :]) ** 2, axis=2)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def build_encoder_tables(points: np.ndarray, config: EncoderConfig) -> EncoderTables:
    """Precompute FPS centers, grouping and interpolation tables.

    The same farthest-point ordering serves every level (counts are
    decreasing, so each deeper center set is a prefix of the previous one),
    which is what makes a one-time computation sound.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    counts = config.abstraction_counts
    if counts[0] > n:
        raise ValueError(f"first abstraction count {counts[0]} exceeds {n} points")
    fps_order = farthest_point_sample(points, counts[0])

    center_idx, group_idx, interp_idx, interp_w = [], [], [], []
    prev_global = np.arange(n)
    for level, count in enumerate(counts):
        centers = fps_order[:count]
        pool = points[prev_global]
        if config.k > len(prev_global):
            raise ValueError(f"k={config.k} exceeds level-{level} pool of {len(prev_global)}")
        group = _knn_positions(points[centers], pool, config.k)
        m = min(3, count)
        back = _knn_positions(pool, points[centers], m)
        d = np.sum((pool[:, None, :] - points[centers][back]) ** 2, axis=2)
        recip = 1.0 / (d + EPS_INTERP)
        center_idx.append(centers)
        group_idx.append(group)
        interp_idx.append(back)
        interp_w.append(recip / recip.sum(axis=1, keepdims=True))
        prev_global = centers
    return EncoderTables(center_idx, group_idx, interp_idx, interp_w)


class ParameterStore:
    """Named trainable tensors plus their gradient buffers.

    Creation order is recorded so optimizer state and checkpoints enumerate
    parameters identically on every run with the same seed.
    """

    def __init__(self, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self._params: dict[str, torch.Tensor] = {}

    def create(self, name: str, array: np.ndarray) -> torch.Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = torch.from_numpy(np.ascontiguousarray(array)).to(self.dtype)
        t.requires_grad_(True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[torch.Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.grad is not None:
                t.grad.detach_()
                t.grad.zero_()

    def gradient(self, name: str) -> np.ndarray:
        t = self._params[name]
        if t.grad is None:
            return np.zeros(t.shape, dtype=self._np_dtype())
        return t.grad.detach().cpu().numpy().copy()

    def _np_dtype(self):
        return {torch.float32: np.float32, torch.float64: np.float64}[self.dtype]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Detached copies of every parameter, for checkpointing."""
        return {k: v.detach().cpu().numpy().copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        with torch.no_grad():
            for k, v in self._params.items():
                arr = np.asarray(arrays[k])
                if tuple(arr.shape) != tuple(v.shape):
                    raise ValueError(f"shape mismatch for {k!r}: "
                                     f"{arr.shape} vs {tuple(v.shape)}")
                v.copy_(torch.from_numpy(np.ascontiguousarray(arr)).to(self.dtype))


def fan_in_uniform(rng: np.random.Generator, out_width: int, in_width: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_width)
    return rng.uniform(-bound, bound, size=(out_width, in_width))


def _register_linear(store: ParameterStore, rng: np.random.Generator,
                     name: str, in_width: int, out_width: int) -> None:
    store.create(f"{name}.w", fan_in_uniform(rng, out_width, in_width))
    store.create(f"{name}.b", np.zeros(out_width))


# When set (see gradcheck.capture_preactivations), every linear layer appends
# (name, detached output) here as it runs, so diagnostics can inspect the
# values feeding each rectifier without changing any computation.
_PREACT_TAP: list[tuple[str, torch.Tensor]] | None = None


def _linear(store: ParameterStore, name: str, x: torch.Tensor) -> torch.Tensor:
    z = x @ store[f"{name}.w"].T + store[f"{name}.b"]
    if _PREACT_TAP is not None:
        _PREACT_TAP.append((name, z.detach()))
    return z


class HierarchicalPointEncoder:
    """Set abstraction pyramid + feature propagation back to every point.

    Geometry (which points group with which) is frozen in the tables; only
    feature values flow through the network, so an all-zero input with zero
    biases produces all-zero output features.
    """

    def __init__(self, name: str, config: EncoderConfig):
        self.name = name
        self.config = config

    def register(self, store: ParameterStore, rng: np.random.Generator) -> None:
        c = self.config
        width = c.input_width
        for i, w in enumerate(c.sa_widths):
            _register_linear(store, rng, f"{self.name}.sa{i}.l0", width, w)
            _register_linear(store, rng, f"{self.name}.sa{i}.l1", w, w)
            width = w
        skip_widths = (c.input_width,) + c.sa_widths[:-1]
        deep = c.sa_widths[-1]
        for j, w in enumerate(c.fp_widths):
            level = c.levels - 1 - j  # propagate deepest first
            _register_linear(store, rng, f"{self.name}.fp{level}.l0",
                             deep + skip_widths[level], w)
            _register_linear(store, rng, f"{self.name}.fp{level}.l1", w, w)
            deep = w

    def forward(self, store: ParameterStore, tables: EncoderTables,
                features: torch.Tensor) -> torch.Tensor:
        """(N, input_width) -> (N, output_width), N matching the tables."""
        c = self.config
        if features.shape[1] != c.input_width:
            raise ValueError(f"expected {c.input_width} input features, "
                             f"got {features.shape[1]}")
        if features.shape[0] != len(tables.interp_idx[0]):
            raise ValueError(f"feature count {features.shape[0]} does not match "
                             f"table size {len(tables.interp_idx[0])}")
        per_level = [features]
        h = features
        for i in range(c.levels):
            grouped = h[torch.as_tensor(tables.group_idx[i])]      # (n_i, k, C)
            g = torch.relu(_linear(store, f"{self.name}.sa{i}.l0", grouped))
            g = torch.relu(_linear(store, f"{self.name}.sa{i}.l1", g))
            h = g.max(dim=1).values                                # pool over k
            per_level.append(h)
        deep = per_level[-1]
        for level in range(c.levels - 1, -1, -1):
            idx = torch.as_tensor(tables.interp_idx[level])
            w = torch.as_tensor(tables.interp_w[level], dtype=deep.dtype)
            up = (deep[idx] * w.unsqueeze(-1)).sum(dim=1)
            cat = torch.cat([up, per_level[level]], dim=1)
            j = torch.relu(_linear(store, f"{self.name}.fp{level}.l0", cat))
            deep = torch.relu(_linear(store, f"{self.name}.fp{level}.l1", j))
        return deep


class PointwiseDecoder:
    """Shared MLP applied per point: [features, position] -> out_width.

    Hidden widths default to four 256-wide rectified layers with one skip
    connection reintroducing the raw input at the third layer.
    """

    def __init__(self, name: str, in_width: int, out_width: int,
                 widths: tuple[int, ...] = (256, 256, 256, 256), skip_at: int = 2):
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError("decoder needs at least two positive hidden widths")
        if not 0 < skip_at < len(widths):
            raise ValueError("skip index out of range")
        self.name = name
        self.in_width = in_width
        self.out_width = out_width
        self.widths = tuple(widths)
        self.skip_at = skip_at

    def register(self, store: ParameterStore, rng: np.random.Generator) -> None:
        prev = self.in_width
        for i, w in enumerate(self.widths):
            if i == self.skip_at:
                prev += self.in_width
            _register_linear(store, rng, f"{self.name}.l{i}", prev, w)
            prev = w
        _register_linear(store, rng, f"{self.name}.out", prev, self.out_width)

    def forward(self, store: ParameterStore, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_width:
            raise ValueError(f"expected {self.in_width} inputs, got {x.shape[-1]}")
        h = x
        for i in range(len(self.widths)):
            if i == self.skip_at:
                h = torch.cat([h, x], dim=-1)
            h = torch.relu(_linear(store, f"{self.name}.l{i}", h))
        return _linear(store, f"{self.name}.out", h)


GARMENT_CODE_WIDTH = 64
GARMENT_CODE_STD = 0.01


def outfit_code_name(outfit: str) -> str:
    return f"garment_code.{outfit}"


def create_garment_code(store: ParameterStore, rng: np.random.Generator,
                        outfit: str, num_vertices: int,
                        width: int = GARMENT_CODE_WIDTH) -> torch.Tensor:
    """Per-outfit learnable latent, Normal(0, 0.01^2), one row per vertex."""
    return store.create(outfit_code_name(outfit),
                        rng.normal(0.0, GARMENT_CODE_STD, size=(num_vertices, width)))


def pose_input_features(template: np.ndarray, posed: np.ndarray,
                        include_residual: bool = True) -> np.ndarray:
    """Pose encoder input: posed coordinates, optionally with the posed-minus-
    template residual appended (gives direct access to pose displacement)."""
    if posed.shape != template.shape:
        raise ValueError("posed/template vertex counts differ")
    if include_residual:
        return np.concatenate([posed, posed - template], axis=1)
    return posed.copy()
