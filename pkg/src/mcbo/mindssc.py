"""Modality-independent features from local self-similarity context.

Each voxel is described by 12 channels, one per unordered pair of mutually
perpendicular offsets drawn from the dilated 6-neighborhood. A channel holds
exp(-D / V) where D is the box-patch SSD between the image patches at the
two offsets and V is the clamped per-voxel mean of the 12 distances. The
result is invariant to affine intensity changes, which is what makes images
of different modalities comparable under SSD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .grid import FeatureVolume, Volume3

__all__ = ["MindConfig", "pair_offsets", "extract"]

# Lower clamp on the per-voxel variance relative to its global mean, and the
# matching upper clamp; both scale with intensity so the descriptor stays
# affine-invariant.
_VAR_CLAMP_LO = 1e-3
_VAR_CLAMP_HI = 1e3

_UNIT_OFFSETS = (
    (-1, 0, 0),
    (0, -1, 0),
    (0, 0, -1),
    (0, 0, 1),
    (0, 1, 0),
    (1, 0, 0),
)


@dataclass
class MindConfig:
    """Free parameters of the self-similarity descriptor.

    dilation: distance in voxels from a voxel to its six neighbors.
    patch_radius: half-width of the cubic patch used for patch distances.
    epsilon: absolute floor for the variance clamp.
    """

    dilation: int = 2
    patch_radius: int = 1
    epsilon: float = 1e-6

    def __post_init__(self):
        if int(self.dilation) != self.dilation or self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer, got {self.dilation}")
        if int(self.patch_radius) != self.patch_radius or self.patch_radius < 0:
            raise ValueError(f"patch_radius must be >= 0, got {self.patch_radius}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        self.dilation = int(self.dilation)
        self.patch_radius = int(self.patch_radius)
        self.epsilon = float(self.epsilon)


def pair_offsets(dilation: int) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """The 12 perpendicular neighbor-offset pairs, in fixed lexicographic order.

    The six offsets are the axis unit vectors scaled by `dilation`; the pairs
    are all (r_i, r_j) with i < j in lexicographic offset order whose dot
    product is zero. This ordering defines the channel layout of extract().
    """
    offsets = [tuple(dilation * c for c in off) for off in _UNIT_OFFSETS]
    pairs = []
    for i, a in enumerate(offsets):
        for b in offsets[i + 1 :]:
            if sum(x * y for x, y in zip(a, b)) == 0:
                pairs.append((a, b))
    return pairs


def _shift_replicate(data: np.ndarray, offset) -> np.ndarray:
    """data sampled at v + offset with out-of-grid indices clamped."""
    H, W, D = data.shape
    ih = np.clip(np.arange(H) + offset[0], 0, H - 1)
    iw = np.clip(np.arange(W) + offset[1], 0, W - 1)
    id_ = np.clip(np.arange(D) + offset[2], 0, D - 1)
    return data[np.ix_(ih, iw, id_)]


def extract(vol: Volume3, cfg: MindConfig | None = None) -> FeatureVolume:
    """Extract the 12-channel self-similarity descriptor of a volume.

    For each offset pair (r_i, r_j), the squared difference image

        e(u) = (I(u + r_i) - I(u + r_j))^2

    is formed with border-replicated shifts and box-summed over the
    (2 patch_radius + 1)^3 patch, again with replicated borders, giving the
    patch distance D_c(v). V(v) is the mean of the 12 distances, clamped to
    [max(epsilon, 1e-3 m), max(1e3 m, lower)] where m is the global mean of
    V. Channels are exp(-D_c / V), so every value lies in (0, 1] and a
    constant image maps to all-ones features.
    """
    cfg = cfg or MindConfig()
    img = vol.data
    pairs = pair_offsets(cfg.dilation)
    side = 2 * cfg.patch_radius + 1

    dists = np.empty((len(pairs),) + img.shape, dtype=np.float64)
    for c, (ra, rb) in enumerate(pairs):
        diff = _shift_replicate(img, ra) - _shift_replicate(img, rb)
        sq = diff * diff
        if side == 1:
            dists[c] = sq
        else:
            dists[c] = uniform_filter(sq, size=side, mode="nearest") * float(side**3)

    variance = dists.mean(axis=0)
    global_mean = float(variance.mean())
    lo = max(cfg.epsilon, _VAR_CLAMP_LO * global_mean)
    hi = max(_VAR_CLAMP_HI * global_mean, lo)
    variance = np.clip(variance, lo, hi)

    features = np.exp(-dists / variance)
    return FeatureVolume(features, vol.spacing)
