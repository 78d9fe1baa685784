"""Coupled convex optimization of cost volumes and inverse consistency.

The optimizer alternates a similarity step, which re-picks per-voxel
candidate displacements under a quadratic pull toward the current smooth
field, with a smoothing step. The coupling weight grows over iterations and
the smoothed iterates are averaged with equal weights, which is what keeps
the regularization globally balanced. A separate fixed-point iteration
symmetrizes a forward/backward field pair so their composition approaches
the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import CostVolume, _tie_break_order, argmin_disp
from .grid import DisplacementField, _box_filter, _grid_coords, _sample_trilinear

__all__ = ["ConvexSchedule", "coupled_convex", "inverse_consistent"]


@dataclass
class ConvexSchedule:
    """Iteration schedule for the coupled convex optimizer.

    coupling_weights: one positive weight per iteration, nondecreasing; the
        k-th similarity step minimizes cost(v, d) + w_k * |d - z(v)|^2.
    smooth_kernel / smooth_passes: box smoothing applied after each
        similarity step.
    scale_by_cost_mean: when set, weights are multiplied by the mean of the
        cost volume so the coupling strength tracks the feature magnitude.
    """

    coupling_weights: tuple[float, ...] = (1.0, 3.0, 10.0)
    smooth_kernel: int = 3
    smooth_passes: int = 2
    scale_by_cost_mean: bool = True

    def __post_init__(self):
        weights = tuple(float(w) for w in self.coupling_weights)
        if len(weights) == 0:
            raise ValueError("schedule needs at least one coupling weight")
        if any(w <= 0 or not np.isfinite(w) for w in weights):
            raise ValueError(f"coupling weights must be positive, got {weights}")
        if any(b < a for a, b in zip(weights, weights[1:])):
            raise ValueError(f"coupling weights must be nondecreasing, got {weights}")
        if self.smooth_kernel % 2 == 0 or self.smooth_kernel < 1:
            raise ValueError(f"smooth_kernel must be odd, got {self.smooth_kernel}")
        if self.smooth_passes < 1:
            raise ValueError(f"smooth_passes must be >= 1, got {self.smooth_passes}")
        self.coupling_weights = weights

    @property
    def iterations(self) -> int:
        return len(self.coupling_weights)


def _coupled_argmin(cv: CostVolume, z: np.ndarray, lam: float, order: np.ndarray) -> np.ndarray:
    """argmin_d cost(v, d) + lam * |d - z(v)|^2, swept in tie-break order."""
    zh, zw, zd = z[..., 0], z[..., 1], z[..., 2]
    best_score = np.full(cv.dims, np.inf, dtype=np.float64)
    best_idx = np.zeros(cv.dims, dtype=np.intp)
    for k in order:
        d = cv.candidates[k]
        penalty = (d[0] - zh) ** 2 + (d[1] - zw) ** 2 + (d[2] - zd) ** 2
        score = cv.costs[..., k].astype(np.float64) + lam * penalty
        better = score < best_score
        best_score[better] = score[better]
        best_idx[better] = k
    return cv.candidates[best_idx].astype(np.float64)


def coupled_convex(cv: CostVolume, sched: ConvexSchedule) -> DisplacementField:
    """Optimize a cost volume into a smooth displacement field.

    Starting from the per-voxel argmin, each iteration picks candidates under
    the coupling penalty, box-smooths the picks, and the mean of the smoothed
    iterates is returned.
    """
    if sched.iterations < 1:
        raise ValueError("empty convex schedule")
    scale = 1.0
    if sched.scale_by_cost_mean:
        scale = float(cv.costs.mean(dtype=np.float64))
        if scale == 0.0:
            scale = 1.0
    order = _tie_break_order(cv.candidates)
    z = argmin_disp(cv).vectors
    total = np.zeros_like(z)
    for lam in sched.coupling_weights:
        y = _coupled_argmin(cv, z, lam * scale, order)
        z = _box_filter(y, sched.smooth_kernel, sched.smooth_passes)
        total += z
    return DisplacementField(total / sched.iterations, cv.spacing)


def inverse_consistent(
    fwd: DisplacementField, bwd: DisplacementField, iters: int
) -> tuple[DisplacementField, DisplacementField]:
    """Symmetrize a forward/backward field pair.

    Each iteration replaces the pair using the averaging update

        fwd'(v) = (fwd(v) - bwd sampled at v + fwd(v)) / 2
        bwd'(v) = (bwd(v) - fwd sampled at v + bwd(v)) / 2

    computed from the pre-iteration pair. Exact inverses are a fixed point;
    on smooth fields the mean norm of compose(bwd, fwd) does not increase.
    """
    if fwd.dims != bwd.dims:
        raise ValueError(f"field dims differ: {fwd.dims} vs {bwd.dims}")
    if int(iters) != iters or iters < 1:
        raise ValueError(f"iters must be a positive integer, got {iters}")
    bh, bw, bd = _grid_coords(fwd.dims)
    f = fwd.vectors
    b = bwd.vectors
    for _ in range(int(iters)):
        b_at_f = _sample_trilinear(b, bh + f[..., 0], bw + f[..., 1], bd + f[..., 2])
        f_at_b = _sample_trilinear(f, bh + b[..., 0], bw + b[..., 1], bd + b[..., 2])
        f, b = 0.5 * (f - b_at_f), 0.5 * (b - f_at_b)
    return (
        DisplacementField(f, fwd.spacing),
        DisplacementField(b, bwd.spacing),
    )
