"""Dense correlation: SSD cost volumes over a discrete displacement window.

cost(v, d) compares the fixed features at v with the moving features at
v + d for every integer displacement d with components in [-R, R]. The
cost table plus a per-voxel argmin give the initial displacement capture
that the convex optimization then regularizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DisplacementField, FeatureVolume

__all__ = ["CostVolume", "displacement_candidates", "cost_volume", "argmin_disp"]


def displacement_candidates(radius: int) -> np.ndarray:
    """All (2R+1)^3 integer displacements in lexicographic order, (K, 3)."""
    if int(radius) != radius or radius < 0:
        raise ValueError(f"search radius must be a non-negative integer, got {radius}")
    r = np.arange(-int(radius), int(radius) + 1)
    dh, dw, dd = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([dh.ravel(), dw.ravel(), dd.ravel()], axis=1)


def _tie_break_order(candidates: np.ndarray) -> np.ndarray:
    """Candidate indices sorted by squared norm, then lexicographically.

    Sweeping costs in this order with a strict less-than update realizes the
    smallest-norm-then-lexicographic tie-break rule.
    """
    norms = (candidates**2).sum(axis=1)
    return np.lexsort(
        (candidates[:, 2], candidates[:, 1], candidates[:, 0], norms)
    )


@dataclass(eq=False)
class CostVolume:
    """SSD costs per voxel and displacement candidate.

    costs has shape (H, W, D, K) in float32 with the candidate axis
    innermost; candidates is the (K, 3) lexicographic displacement table
    centered on zero.
    """

    costs: np.ndarray
    radius: int
    candidates: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        k = (2 * self.radius + 1) ** 3
        if self.costs.ndim != 4 or self.costs.shape[3] != k:
            raise ValueError(
                f"costs shape {self.costs.shape} inconsistent with radius {self.radius}"
            )
        if self.candidates.shape != (k, 3):
            raise ValueError(f"candidate table must be ({k}, 3)")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.costs.shape[:3]


def _shifted_view(data: np.ndarray, d) -> np.ndarray:
    """Channel-first features sampled at v + d with border replication."""
    _, H, W, D = data.shape
    ih = np.clip(np.arange(H) + d[0], 0, H - 1)
    iw = np.clip(np.arange(W) + d[1], 0, W - 1)
    id_ = np.clip(np.arange(D) + d[2], 0, D - 1)
    return data[:, ih[:, None, None], iw[None, :, None], id_[None, None, :]]


def cost_volume(f_fixed: FeatureVolume, f_moving: FeatureVolume, radius: int) -> CostVolume:
    """Build the SSD cost volume between two feature volumes.

    cost(v, d) = sum_c (f_fixed(v, c) - f_moving(v + d, c))^2 with border
    replication for out-of-grid v + d. Accumulation runs over channels in
    float64 and the result is stored as float32.
    """
    if f_fixed.dims != f_moving.dims:
        raise ValueError(f"feature dims differ: {f_fixed.dims} vs {f_moving.dims}")
    if f_fixed.channels != f_moving.channels:
        raise ValueError(
            f"channel counts differ: {f_fixed.channels} vs {f_moving.channels}"
        )
    candidates = displacement_candidates(radius)
    H, W, D = f_fixed.dims
    costs = np.empty((H, W, D, len(candidates)), dtype=np.float32)
    fixed = f_fixed.data
    moving = f_moving.data
    for k, d in enumerate(candidates):
        shifted = _shifted_view(moving, d)
        acc = np.zeros((H, W, D), dtype=np.float64)
        for c in range(fixed.shape[0]):
            diff = fixed[c] - shifted[c]
            acc += diff * diff
        costs[..., k] = acc.astype(np.float32)
    return CostVolume(costs, int(radius), candidates, f_fixed.spacing)


def argmin_disp(cv: CostVolume) -> DisplacementField:
    """Per-voxel displacement with minimal cost.

    Ties resolve to the candidate with the smallest Euclidean norm and then
    the lexicographically smallest components, so equal costs select the
    zero displacement.
    """
    order = _tie_break_order(cv.candidates)
    best_cost = np.full(cv.dims, np.inf, dtype=np.float64)
    best_idx = np.zeros(cv.dims, dtype=np.intp)
    for k in order:
        cost_k = cv.costs[..., k].astype(np.float64)
        better = cost_k < best_cost
        best_cost[better] = cost_k[better]
        best_idx[better] = k
    vectors = cv.candidates[best_idx].astype(np.float64)
    return DisplacementField(vectors, cv.spacing)
