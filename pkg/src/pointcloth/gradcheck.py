"""Gradient-check helpers: pre-activation capture, kink-margin reports and
bias hardening that puts a probe model in general position.

Central finite differences at a fixed step are only trustworthy for a
rectified network while no probed step flips an activation.  A freshly
initialized model is a bad probe point: zero biases leave many rectifier
inputs almost exactly at zero, so even a 1e-4 step crosses kinks and the
difference quotient stops matching the (correct) analytic derivative.
These helpers measure how close every rectifier input sits to zero and
shift hidden biases until each one clears a requested margin, which keeps
the check honest without loosening its tolerance.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator

import numpy as np
import torch

from . import nets
from .nets import ParameterStore

Forward = Callable[[], object]


@contextmanager
def capture_preactivations() -> Iterator[list[tuple[str, torch.Tensor]]]:
    """Collect (layer name, pre-activation) pairs from every linear layer
    that runs inside the block; the innermost capture wins under nesting."""
    tap: list[tuple[str, torch.Tensor]] = []
    before = nets._PREACT_TAP
    nets._PREACT_TAP = tap
    try:
        yield tap
    finally:
        nets._PREACT_TAP = before


def _rectified(name: str) -> bool:
    """Hidden layers feed a rectifier; `.out` heads stay linear."""
    return not name.endswith(".out")


def relu_margin_report(forward: Forward) -> dict[str, float]:
    """Run `forward` once; per rectified layer, the smallest |pre-activation|."""
    with capture_preactivations() as tap, torch.no_grad():
        forward()
    report: dict[str, float] = {}
    for name, z in tap:
        if not _rectified(name):
            continue
        margin = float(z.abs().min().item())
        report[name] = min(margin, report.get(name, margin))
    return report


def pooling_gap_report(forward: Forward) -> dict[str, float]:
    """Run `forward` once; per max-pooled layer, the smallest gap between the
    winning and runner-up rectified values in any pooled group.

    Groups whose winner is zero are skipped: every candidate is clamped, so
    a small parameter step cannot change the pooled value.  A runner-up can
    only overtake a live winner after first crossing its own rectifier kink,
    which the margin report already guards, so gaps measured here only need
    to clear the same scale of perturbation.
    """
    with capture_preactivations() as tap, torch.no_grad():
        forward()
    report: dict[str, float] = {}
    for name, z in tap:
        if z.dim() != 3 or z.shape[1] < 2 or not _rectified(name):
            continue
        pooled = torch.relu(z)
        top2 = pooled.topk(2, dim=1).values
        gap = top2[:, 0, :] - top2[:, 1, :]
        live = top2[:, 0, :] > 0
        if live.any():
            margin = float(gap[live].min().item())
            report[name] = min(margin, report.get(name, margin))
    return report


def _bias_shift(values: np.ndarray, clearance: float) -> float:
    """Smallest bias shift giving every value at least `clearance` distance
    from zero: recenter zero inside an interior gap at least twice that
    wide, or push the whole channel to one side of zero."""
    v = np.sort(values)
    candidates = [clearance - v[0], -clearance - v[-1]]
    for i in np.nonzero(np.diff(v) >= 2.0 * clearance)[0]:
        candidates.append(-0.5 * (v[i] + v[i + 1]))
    return float(min(candidates, key=abs))


def harden_relu_margins(store: ParameterStore, forward: Forward,
                        floor: float = 5e-3, clearance: float | None = None,
                        max_sweeps: int = 8) -> dict[str, float]:
    """Shift hidden biases until every rectifier input is at least `floor`
    from zero, then return the final margin report.

    Each sweep reruns `forward`, because moving one layer's mask changes
    what deeper layers see; shifts target `clearance` (default 2x the
    floor) so later sweeps rarely disturb a channel twice.  Raises
    RuntimeError when margins still violate the floor after `max_sweeps`
    sweeps; a different initialization seed usually resolves that.
    """
    want = 2.0 * floor if clearance is None else clearance
    for _ in range(max_sweeps):
        with capture_preactivations() as tap, torch.no_grad():
            forward()
        shifted = False
        seen: set[str] = set()
        for name, z in tap:
            if not _rectified(name) or name in seen:
                continue
            seen.add(name)
            flat = z.detach().cpu().numpy().reshape(-1, z.shape[-1])
            bias = store[f"{name}.b"]
            with torch.no_grad():
                for ch in range(flat.shape[1]):
                    col = flat[:, ch]
                    if np.abs(col).min() >= floor:
                        continue
                    bias[ch] += _bias_shift(col, want)
                    shifted = True
        if not shifted:
            return relu_margin_report(forward)
    report = relu_margin_report(forward)
    bad = {k: round(v, 6) for k, v in report.items() if v < floor}
    if bad:
        raise RuntimeError(f"rectifier margins below {floor} after "
                           f"{max_sweeps} sweeps: {bad}")
    return report
