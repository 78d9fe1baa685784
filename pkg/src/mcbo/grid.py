"""Core 3D grid containers and geometric primitives.

Volumes, displacement fields and multichannel feature grids are indexed
(h, w, d). Displacement vectors carry components (dh, dw, dd) expressed in
voxel units of the grid they live on; physical spacing enters only when
errors are reported in millimeters. Every sampling and filtering operation
uses border replication, so no synthetic zeros leak into the data near the
grid boundary.

All operations are pure: inputs are never mutated and identical inputs give
bitwise identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

__all__ = [
    "Volume3",
    "DisplacementField",
    "FeatureVolume",
    "zero_field",
    "trilinear_sample",
    "sample_field",
    "warp",
    "avg_pool",
    "upsample_field",
    "compose",
    "smooth_box",
]


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive reals, got {spacing}")
    return spacing


@dataclass(eq=False)
class Volume3:
    """Scalar 3D image on an (H, W, D) voxel grid.

    Attributes:
        data: float array of shape (H, W, D); converted to float64 and
            validated finite on construction.
        spacing: (sh, sw, sd) millimeters per voxel, each > 0.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {self.data.shape}")
        if self.data.size == 0:
            raise ValueError("volume has an empty dimension")
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains NaN or Inf values")
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(eq=False)
class DisplacementField:
    """Per-voxel displacement vectors on an (H, W, D) grid.

    Attributes:
        vectors: float array of shape (H, W, D, 3) holding (dh, dw, dd)
            components in voxel units of this field's own grid.
        spacing: (sh, sw, sd) millimeters per voxel of the grid.
    """

    vectors: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 4 or self.vectors.shape[3] != 3:
            raise ValueError(
                f"expected an (H, W, D, 3) array, got shape {self.vectors.shape}"
            )
        if self.vectors.size == 0:
            raise ValueError("field has an empty dimension")
        if not np.isfinite(self.vectors).all():
            raise ValueError("field contains NaN or Inf components")
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.vectors.shape[:3]


@dataclass(eq=False)
class FeatureVolume:
    """C scalar channels sharing one (H, W, D) grid, stored as (C, H, W, D)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError(f"expected a (C, H, W, D) array, got shape {self.data.shape}")
        if self.data.size == 0:
            raise ValueError("feature volume has an empty dimension")
        if not np.isfinite(self.data).all():
            raise ValueError("feature volume contains NaN or Inf values")
        self.spacing = _check_spacing(self.spacing)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def zero_field(dims, spacing=(1.0, 1.0, 1.0)) -> DisplacementField:
    """Identity deformation: all displacement vectors zero."""
    h, w, d = dims
    return DisplacementField(np.zeros((h, w, d, 3)), spacing)


def _grid_coords(dims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel index arrays (float64) for each axis, each shaped (H, W, D)."""
    h, w, d = dims
    return np.meshgrid(
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        np.arange(d, dtype=np.float64),
        indexing="ij",
    )


def _sample_trilinear(data: np.ndarray, ph, pw, pd) -> np.ndarray:
    """Trilinear interpolation of `data` with border replication.

    data is (H, W, D) or (H, W, D, C); ph/pw/pd are equally shaped coordinate
    arrays. Coordinates outside [0, dim - 1] are clamped to the border.
    Returns an array shaped like ph, with a trailing C axis when present.
    """
    H, W, D = data.shape[:3]
    squeeze = data.ndim == 3
    flat_data = data.reshape(H * W * D, -1)

    ph = np.clip(ph, 0.0, float(H - 1))
    pw = np.clip(pw, 0.0, float(W - 1))
    pd = np.clip(pd, 0.0, float(D - 1))
    h0 = ph.astype(np.intp)
    w0 = pw.astype(np.intp)
    d0 = pd.astype(np.intp)
    h1 = np.minimum(h0 + 1, H - 1)
    w1 = np.minimum(w0 + 1, W - 1)
    d1 = np.minimum(d0 + 1, D - 1)
    fh = ph - h0
    fw = pw - w0
    fd = pd - d0

    def corner(hi, wi, di, weight):
        flat = (hi * W + wi) * D + di
        return weight.reshape(-1, 1) * flat_data[flat.reshape(-1)]

    gh, gw2 = 1.0 - fh, 1.0 - fw
    gd = 1.0 - fd
    out = corner(h0, w0, d0, gh * gw2 * gd)
    out += corner(h0, w0, d1, gh * gw2 * fd)
    out += corner(h0, w1, d0, gh * fw * gd)
    out += corner(h0, w1, d1, gh * fw * fd)
    out += corner(h1, w0, d0, fh * gw2 * gd)
    out += corner(h1, w0, d1, fh * gw2 * fd)
    out += corner(h1, w1, d0, fh * fw * gd)
    out += corner(h1, w1, d1, fh * fw * fd)

    out = out.reshape(np.shape(ph) + (flat_data.shape[1],))
    return out[..., 0] if squeeze else out


def trilinear_sample(vol: Volume3, p) -> float:
    """Sample a volume at a continuous voxel coordinate.

    Coordinates outside the grid are clamped to the border. On-lattice points
    return the stored voxel value exactly.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"expected a 3-point, got shape {p.shape}")
    if not np.isfinite(p).all():
        raise ValueError(f"sample point must be finite, got {p}")
    val = _sample_trilinear(vol.data, p[:1], p[1:2], p[2:3])
    return float(val[0])


def sample_field(field: DisplacementField, points: np.ndarray) -> np.ndarray:
    """Trilinearly sample displacement vectors at (N, 3) continuous points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("sample points must be finite")
    return _sample_trilinear(field.vectors, points[:, 0], points[:, 1], points[:, 2])


def warp(vol: Volume3, field: DisplacementField) -> Volume3:
    """Resample a volume through a displacement field.

    out(v) = vol sampled trilinearly at v + field(v). A zero field returns
    the input values unchanged.
    """
    if field.dims != vol.dims:
        raise ValueError(f"field dims {field.dims} do not match volume dims {vol.dims}")
    bh, bw, bd = _grid_coords(vol.dims)
    out = _sample_trilinear(
        vol.data,
        bh + field.vectors[..., 0],
        bw + field.vectors[..., 1],
        bd + field.vectors[..., 2],
    )
    return Volume3(out, vol.spacing)


def _block_mean(a: np.ndarray, n: int, axes) -> np.ndarray:
    """Mean over non-overlapping blocks of width n along the given axes.

    Partial border blocks are averaged over their actual extent.
    """
    out = a
    for ax in axes:
        starts = np.arange(0, out.shape[ax], n)
        sizes = np.diff(np.append(starts, out.shape[ax])).astype(np.float64)
        out = np.add.reduceat(out, starts, axis=ax)
        shape = [1] * out.ndim
        shape[ax] = len(starts)
        out = out / sizes.reshape(shape)
    return out


def avg_pool(obj, n: int):
    """Average-pool a Volume3, FeatureVolume or DisplacementField by factor n.

    Blocks of n x n x n voxels are averaged; output dims are ceil(dim / n)
    with border blocks averaged over their actual extent, and output spacing
    is the input spacing times n. Displacement vectors are additionally
    divided by n so they stay expressed in voxel units of the pooled grid.
    n = 1 returns an identical copy.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"pooling factor must be a positive integer, got {n}")
    n = int(n)
    scaled = tuple(s * n for s in obj.spacing)
    if isinstance(obj, Volume3):
        if n == 1:
            return Volume3(obj.data.copy(), obj.spacing)
        return Volume3(_block_mean(obj.data, n, axes=(0, 1, 2)), scaled)
    if isinstance(obj, FeatureVolume):
        if n == 1:
            return FeatureVolume(obj.data.copy(), obj.spacing)
        return FeatureVolume(_block_mean(obj.data, n, axes=(1, 2, 3)), scaled)
    if isinstance(obj, DisplacementField):
        if n == 1:
            return DisplacementField(obj.vectors.copy(), obj.spacing)
        pooled = _block_mean(obj.vectors, n, axes=(0, 1, 2)) / n
        return DisplacementField(pooled, scaled)
    raise TypeError(f"cannot pool object of type {type(obj).__name__}")


def upsample_field(field: DisplacementField, target_dims, factor: float) -> DisplacementField:
    """Resample a field onto a finer grid and rescale vectors to its units.

    factor is the coarse-grid voxel size divided by the fine-grid voxel size
    (the pooling factor that produced the coarse grid). Vectors are sampled
    trilinearly at block-center-aligned coordinates and multiplied by factor
    so magnitudes are expressed in fine-grid voxel units.
    """
    factor = float(factor)
    if not np.isfinite(factor) or factor <= 0:
        raise ValueError(f"upsampling factor must be positive, got {factor}")
    th, tw, td = (int(t) for t in target_dims)
    ch = (np.arange(th, dtype=np.float64) + 0.5) / factor - 0.5
    cw = (np.arange(tw, dtype=np.float64) + 0.5) / factor - 0.5
    cd = (np.arange(td, dtype=np.float64) + 0.5) / factor - 0.5
    ph, pw, pd = np.meshgrid(ch, cw, cd, indexing="ij")
    vectors = _sample_trilinear(field.vectors, ph, pw, pd) * factor
    spacing = tuple(s / factor for s in field.spacing)
    return DisplacementField(vectors, spacing)


def compose(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Chain two fields: out(v) = inner(v) + outer sampled at v + inner(v)."""
    if outer.dims != inner.dims:
        raise ValueError(f"field dims differ: {outer.dims} vs {inner.dims}")
    bh, bw, bd = _grid_coords(inner.dims)
    sampled = _sample_trilinear(
        outer.vectors,
        bh + inner.vectors[..., 0],
        bw + inner.vectors[..., 1],
        bd + inner.vectors[..., 2],
    )
    return DisplacementField(inner.vectors + sampled, inner.spacing)


def _box_filter(arr: np.ndarray, kernel: int, passes: int, axes=(0, 1, 2)) -> np.ndarray:
    """Separable box filter with border replication; kernel = 1 is a copy."""
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"box kernel must be an odd positive integer, got {kernel}")
    if int(passes) != passes or passes < 1:
        raise ValueError(f"passes must be a positive integer, got {passes}")
    if kernel == 1:
        return arr.copy()
    out = arr
    for _ in range(int(passes)):
        for ax in axes:
            out = uniform_filter1d(out, size=int(kernel), axis=ax, mode="nearest")
    return out


def smooth_box(field: DisplacementField, kernel: int, passes: int = 1) -> DisplacementField:
    """Box-smooth each displacement component.

    A width-`kernel` box filter runs along each axis, `passes` times per
    axis, with border replication. kernel = 1 is the identity.
    """
    return DisplacementField(_box_filter(field.vectors, kernel, passes), field.spacing)
