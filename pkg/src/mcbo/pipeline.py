"""Full registration pipeline: pyramids, per-level fields, weighted fusion.

A pair of volumes is registered by extracting self-similarity features,
average-pooling them into a pyramid, running dense correlation + coupled
convex optimization + inverse consistency per level, splitting the
full-resolution level into octants to bound the cost-volume size, refining
the spliced first-level field with Adam instance optimization, and finally
summing the upsampled per-level fields with weights adding up to one.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .convex import ConvexSchedule, coupled_convex, inverse_consistent
from .correlation import cost_volume
from .grid import DisplacementField, FeatureVolume, Volume3, avg_pool, upsample_field
from .instance_opt import InstOptConfig, instance_optimize
from .mindssc import MindConfig, extract

__all__ = [
    "ConfigError",
    "LevelConfig",
    "PipelineConfig",
    "OctantLayout",
    "preset",
    "PRESET_NAMES",
    "validate_config",
    "split_octants",
    "splice_octants",
    "run_level",
    "multilevel_fuse",
    "register",
]

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


@dataclass
class LevelConfig:
    """One pyramid level: pooling factor, search radius, schedule, weight."""

    pool_factor: int
    search_radius: int
    convex_schedule: ConvexSchedule = dc_field(default_factory=ConvexSchedule)
    weight: float = 1.0


@dataclass
class PipelineConfig:
    """Settings for a full register() run.

    levels are ordered with the pool_factor-1 level first when present;
    split_level1 and instopt apply to that level only.
    """

    levels: tuple[LevelConfig, ...]
    inverse_consistency_iters: int = 10
    instopt: InstOptConfig | None = None
    split_level1: bool = True
    preset_name: str | None = None
    mind: MindConfig = dc_field(default_factory=MindConfig)


def validate_config(cfg: PipelineConfig) -> None:
    """Raise ConfigError on any inconsistency; called before any computation."""
    if not cfg.levels:
        raise ConfigError("config has no levels")
    for i, lc in enumerate(cfg.levels):
        if int(lc.pool_factor) != lc.pool_factor or lc.pool_factor < 1:
            raise ConfigError(f"level {i}: pool_factor must be a positive integer")
        if int(lc.search_radius) != lc.search_radius or lc.search_radius < 1:
            raise ConfigError(f"level {i}: search_radius must be a positive integer")
        if not (0.0 <= lc.weight <= 1.0):
            raise ConfigError(f"level {i}: weight {lc.weight} outside [0, 1]")
    full_res = [i for i, lc in enumerate(cfg.levels) if lc.pool_factor == 1]
    if len(full_res) > 1:
        raise ConfigError("at most one level may have pool_factor 1")
    if full_res and full_res[0] != 0:
        raise ConfigError("the pool_factor-1 level must come first")
    total = sum(lc.weight for lc in cfg.levels)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"level weights must sum to 1, got {total!r}")
    if int(cfg.inverse_consistency_iters) != cfg.inverse_consistency_iters or (
        cfg.inverse_consistency_iters < 1
    ):
        raise ConfigError("inverse_consistency_iters must be a positive integer")


PRESET_NAMES = ("remind2reg", "clem")


def preset(name: str) -> PipelineConfig:
    """Built-in configurations for the two supported tasks.

    remind2reg: pooling 1, 2, 4, 6 with fusion weights 0.10, 0.27, 0.27,
    0.36 and instance optimization (15 iterations, kernel 5) on the first
    level. clem: pooling 1, 2, 4 with equal weights.
    """
    def levels(specs):
        return tuple(
            LevelConfig(n, radius, ConvexSchedule(), weight) for n, radius, weight in specs
        )

    if name == "remind2reg":
        return PipelineConfig(
            levels=levels([(1, 2, 0.10), (2, 3, 0.27), (4, 4, 0.27), (6, 4, 0.36)]),
            inverse_consistency_iters=10,
            instopt=InstOptConfig(iterations=15, smooth_kernel=5),
            split_level1=True,
            preset_name="remind2reg",
        )
    if name == "clem":
        third = 1.0 / 3.0
        return PipelineConfig(
            levels=levels([(1, 2, third), (2, 3, third), (4, 4, third)]),
            inverse_consistency_iters=10,
            instopt=InstOptConfig(iterations=15, smooth_kernel=5),
            split_level1=True,
            preset_name="clem",
        )
    raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


@dataclass(eq=False)
class OctantLayout:
    """Offsets and extents of the eight blocks of a floor-halved grid."""

    dims: tuple[int, int, int]
    offsets: tuple[tuple[int, int, int], ...]
    extents: tuple[tuple[int, int, int], ...]


def split_octants(fv: FeatureVolume) -> tuple[list[FeatureVolume], OctantLayout]:
    """Split a feature volume into eight disjoint blocks covering the grid.

    Axes are cut at floor(dim / 2); odd dimensions put the extra voxel in
    the upper block. Every dim must be at least 2.
    """
    H, W, D = fv.dims
    if min(H, W, D) < 2:
        raise ValueError(f"all dims must be >= 2 to split, got {(H, W, D)}")
    cuts = (H // 2, W // 2, D // 2)
    bounds = [((0, cuts[a]), (cuts[a], (H, W, D)[a])) for a in range(3)]
    blocks, offsets, extents = [], [], []
    for hb in bounds[0]:
        for wb in bounds[1]:
            for db in bounds[2]:
                block = fv.data[:, hb[0] : hb[1], wb[0] : wb[1], db[0] : db[1]]
                blocks.append(FeatureVolume(block.copy(), fv.spacing))
                offsets.append((hb[0], wb[0], db[0]))
                extents.append((hb[1] - hb[0], wb[1] - wb[0], db[1] - db[0]))
    return blocks, OctantLayout((H, W, D), tuple(offsets), tuple(extents))


def splice_octants(blocks, layout: OctantLayout):
    """Reassemble eight blocks at their recorded offsets, without blending.

    Accepts the eight DisplacementFields of the per-octant registrations or
    the FeatureVolumes produced by split_octants; the round trip through
    split and splice is bitwise lossless. Seams between blocks are left to
    the instance optimizer.
    """
    if len(blocks) != len(layout.offsets):
        raise ValueError(f"expected {len(layout.offsets)} blocks, got {len(blocks)}")
    H, W, D = layout.dims
    first = blocks[0]
    if isinstance(first, DisplacementField):
        out = np.empty((H, W, D, 3), dtype=np.float64)
        for blk, off, ext in zip(blocks, layout.offsets, layout.extents):
            if blk.dims != ext:
                raise ValueError(f"block dims {blk.dims} do not match layout extent {ext}")
            out[off[0] : off[0] + ext[0], off[1] : off[1] + ext[1], off[2] : off[2] + ext[2]] = (
                blk.vectors
            )
        return DisplacementField(out, first.spacing)
    if isinstance(first, FeatureVolume):
        out = np.empty((first.channels, H, W, D), dtype=np.float64)
        for blk, off, ext in zip(blocks, layout.offsets, layout.extents):
            if blk.dims != ext:
                raise ValueError(f"block dims {blk.dims} do not match layout extent {ext}")
            out[:, off[0] : off[0] + ext[0], off[1] : off[1] + ext[1], off[2] : off[2] + ext[2]] = (
                blk.data
            )
        return FeatureVolume(out, first.spacing)
    raise TypeError(f"cannot splice blocks of type {type(first).__name__}")


def _three_step(f_fixed: FeatureVolume, f_moving: FeatureVolume, lc: LevelConfig, ic_iters: int):
    """Correlation, coupled convex optimization and inverse consistency."""
    fwd = coupled_convex(cost_volume(f_fixed, f_moving, lc.search_radius), lc.convex_schedule)
    bwd = coupled_convex(cost_volume(f_moving, f_fixed, lc.search_radius), lc.convex_schedule)
    fwd, _ = inverse_consistent(fwd, bwd, ic_iters)
    return fwd


def run_level(
    f_fixed: FeatureVolume, f_moving: FeatureVolume, lc: LevelConfig, ic_iters: int
) -> DisplacementField:
    """Registration at one pyramid level, returned on the pooled grid."""
    if f_fixed.dims != f_moving.dims:
        raise ValueError(f"feature dims differ: {f_fixed.dims} vs {f_moving.dims}")
    pooled_fixed = avg_pool(f_fixed, lc.pool_factor)
    pooled_moving = avg_pool(f_moving, lc.pool_factor)
    return _three_step(pooled_fixed, pooled_moving, lc, ic_iters)


def _run_level1_split(
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    lc: LevelConfig,
    ic_iters: int,
    workers: int,
) -> DisplacementField:
    """Octant-split first level: per-block three-step runs, then splicing."""
    fixed_blocks, layout = split_octants(f_fixed)
    moving_blocks, _ = split_octants(f_moving)

    def solve(pair):
        fb, mb = pair
        return _three_step(fb, mb, lc, ic_iters)

    pairs = list(zip(fixed_blocks, moving_blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(pool.map(solve, pairs))
    else:
        fields = [solve(p) for p in pairs]
    return splice_octants(fields, layout)


def multilevel_fuse(fields, cfg: PipelineConfig, full_dims) -> DisplacementField:
    """Weighted sum of per-level fields upsampled to the full grid.

    Each field is upsampled by its level's pool factor (converting vectors
    to full-resolution voxel units) and scaled by the level weight; the
    weights are validated to sum to one at config time, so the sum is a
    convex combination.
    """
    if len(fields) != len(cfg.levels):
        raise ValueError(f"got {len(fields)} fields for {len(cfg.levels)} levels")
    full_dims = tuple(int(x) for x in full_dims)
    total = np.zeros(full_dims + (3,), dtype=np.float64)
    spacing = None
    for f, lc in zip(fields, cfg.levels):
        up = upsample_field(f, full_dims, float(lc.pool_factor))
        total += lc.weight * up.vectors
        spacing = up.spacing if spacing is None else spacing
    return DisplacementField(total, spacing)


def register(
    fixed: Volume3,
    moving: Volume3,
    cfg: PipelineConfig,
    *,
    workers: int = 1,
    timings: list | None = None,
) -> DisplacementField:
    """Register a moving volume onto a fixed volume.

    Returns the full-resolution displacement field mapping fixed-grid voxels
    into moving-image coordinates, i.e. warp(moving, field) aligns with
    fixed. Deterministic: identical inputs give bitwise identical fields for
    any worker count.

    Args:
        fixed, moving: volumes on the same grid.
        cfg: validated pipeline configuration (presets via preset()).
        workers: octant-level parallelism for the split first level.
        timings: optional list collecting (stage, seconds) tuples.
    """
    validate_config(cfg)
    if fixed.dims != moving.dims:
        raise ValueError(f"volume dims differ: {fixed.dims} vs {moving.dims}")

    def record(stage, t0):
        elapsed = time.perf_counter() - t0
        logger.info("%s: %.2f s", stage, elapsed)
        if timings is not None:
            timings.append((stage, elapsed))

    t0 = time.perf_counter()
    f_fixed = extract(fixed, cfg.mind)
    f_moving = extract(moving, cfg.mind)
    record("features", t0)

    level_fields = []
    for lc in cfg.levels:
        t0 = time.perf_counter()
        if lc.pool_factor == 1 and cfg.split_level1:
            field = _run_level1_split(
                f_fixed, f_moving, lc, cfg.inverse_consistency_iters, workers
            )
        else:
            field = run_level(f_fixed, f_moving, lc, cfg.inverse_consistency_iters)
        record(f"level_n{lc.pool_factor} (radius {lc.search_radius})", t0)
        if lc.pool_factor == 1 and cfg.instopt is not None:
            t0 = time.perf_counter()
            field = instance_optimize(f_fixed, f_moving, field, cfg.instopt)
            record("instance_opt", t0)
        level_fields.append(field)

    t0 = time.perf_counter()
    fused = multilevel_fuse(level_fields, cfg, fixed.dims)
    record("fuse", t0)
    return fused
