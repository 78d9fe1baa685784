"""Batch command-line front end.

Verbs:
  register     run the pipeline on one fixed + one or two moving volumes
  eval         landmark TRE of a stored displacement field
  synth        generate a deterministic synthetic fixture set
  dump-preset  print a built-in configuration as editable key = value text

Exit codes: 0 success, 2 I/O or format error, 3 configuration error,
4 numerical failure. Volumes and fields are MetaImage; configs are flat
"key = value" text with '#' comments; landmarks are CSV per evaluation.py.
The --threads flag falls back to the MCBO_THREADS environment variable and
then to the hardware thread count; results are identical for any value.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .convex import ConvexSchedule
from .evaluation import (
    LandmarkSet,
    jacobian_stats,
    load_landmarks,
    save_landmarks,
    synth_deform,
    synth_volume,
    tre,
)
from .fusion import ModalityFieldSet, max_fuse
from .grid import sample_field, warp
from .instance_opt import InstOptConfig, NumericalError
from .metaio import FormatError, read_field, read_volume, write_field, write_volume
from .mindssc import MindConfig
from .pipeline import (
    ConfigError,
    LevelConfig,
    PipelineConfig,
    PRESET_NAMES,
    preset,
    register,
    validate_config,
)

__all__ = ["main", "entry", "parse_config", "dump_config"]

logger = logging.getLogger(__name__)

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# Config text format


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: PipelineConfig) -> str:
    """Serialize a pipeline config as flat key = value text."""
    sched = cfg.levels[0].convex_schedule
    lines = ["# mcbo pipeline configuration"]
    if cfg.preset_name:
        lines.append(f"# preset: {cfg.preset_name}")
    lines += [
        "levels = " + ",".join(str(lc.pool_factor) for lc in cfg.levels),
        "weights = " + ",".join(repr(lc.weight) for lc in cfg.levels),
        "search_radii = " + ",".join(str(lc.search_radius) for lc in cfg.levels),
        f"split_level1 = {_fmt(cfg.split_level1)}",
        f"inverse_consistency_iters = {cfg.inverse_consistency_iters}",
        "convex_lambdas = " + ",".join(repr(w) for w in sched.coupling_weights),
        f"convex_scale_by_cost = {_fmt(sched.scale_by_cost_mean)}",
        f"convex_smooth_kernel = {sched.smooth_kernel}",
        f"convex_smooth_passes = {sched.smooth_passes}",
        f"mind_dilation = {cfg.mind.dilation}",
        f"mind_patch_radius = {cfg.mind.patch_radius}",
        f"mind_epsilon = {_fmt(cfg.mind.epsilon)}",
        f"instopt_enabled = {_fmt(cfg.instopt is not None)}",
    ]
    io_cfg = cfg.instopt if cfg.instopt is not None else InstOptConfig()
    lines += [
        f"instopt_iterations = {io_cfg.iterations}",
        f"instopt_smooth_kernel = {io_cfg.smooth_kernel}",
        f"instopt_smooth_every_step = {_fmt(io_cfg.smooth_every_step)}",
        f"instopt_learning_rate = {_fmt(io_cfg.learning_rate)}",
        f"instopt_reg_weight = {_fmt(io_cfg.reg_weight)}",
        f"instopt_adam_beta1 = {_fmt(io_cfg.adam_beta1)}",
        f"instopt_adam_beta2 = {_fmt(io_cfg.adam_beta2)}",
        f"instopt_adam_eps = {_fmt(io_cfg.adam_eps)}",
    ]
    return "\n".join(lines) + "\n"


_CONFIG_KEYS = {
    "preset",
    "levels",
    "weights",
    "search_radii",
    "split_level1",
    "inverse_consistency_iters",
    "convex_lambdas",
    "convex_scale_by_cost",
    "convex_smooth_kernel",
    "convex_smooth_passes",
    "mind_dilation",
    "mind_patch_radius",
    "mind_epsilon",
    "instopt_enabled",
    "instopt_iterations",
    "instopt_smooth_kernel",
    "instopt_smooth_every_step",
    "instopt_learning_rate",
    "instopt_reg_weight",
    "instopt_adam_beta1",
    "instopt_adam_beta2",
    "instopt_adam_eps",
}


def _parse_bool(key, value) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_kv(text: str) -> dict[str, str]:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        entries[key] = value
    return entries


def parse_config(text: str) -> PipelineConfig:
    """Parse key = value configuration text into a validated PipelineConfig.

    A 'preset = <name>' line supplies base values; other keys override it.
    Without one, omitted keys fall back to the remind2reg defaults.
    """
    entries = _parse_kv(text)
    base = preset(entries.pop("preset")) if "preset" in entries else preset("remind2reg")

    try:
        pool_factors = (
            [int(x) for x in entries["levels"].split(",")]
            if "levels" in entries
            else [lc.pool_factor for lc in base.levels]
        )
        weights = (
            [float(x) for x in entries["weights"].split(",")]
            if "weights" in entries
            else [lc.weight for lc in base.levels]
        )
        radii = (
            [int(x) for x in entries["search_radii"].split(",")]
            if "search_radii" in entries
            else [lc.search_radius for lc in base.levels]
        )
        base_sched = base.levels[0].convex_schedule
        sched = ConvexSchedule(
            coupling_weights=tuple(
                float(x) for x in entries["convex_lambdas"].split(",")
            )
            if "convex_lambdas" in entries
            else base_sched.coupling_weights,
            smooth_kernel=int(entries.get("convex_smooth_kernel", base_sched.smooth_kernel)),
            smooth_passes=int(entries.get("convex_smooth_passes", base_sched.smooth_passes)),
            scale_by_cost_mean=_parse_bool(
                "convex_scale_by_cost", entries["convex_scale_by_cost"]
            )
            if "convex_scale_by_cost" in entries
            else base_sched.scale_by_cost_mean,
        )
        mind = MindConfig(
            dilation=int(entries.get("mind_dilation", base.mind.dilation)),
            patch_radius=int(entries.get("mind_patch_radius", base.mind.patch_radius)),
            epsilon=float(entries.get("mind_epsilon", base.mind.epsilon)),
        )
        base_io = base.instopt if base.instopt is not None else InstOptConfig()
        enabled = (
            _parse_bool("instopt_enabled", entries["instopt_enabled"])
            if "instopt_enabled" in entries
            else base.instopt is not None
        )
        instopt = None
        if enabled:
            instopt = InstOptConfig(
                iterations=int(entries.get("instopt_iterations", base_io.iterations)),
                smooth_kernel=int(
                    entries.get("instopt_smooth_kernel", base_io.smooth_kernel)
                ),
                smooth_every_step=_parse_bool(
                    "instopt_smooth_every_step", entries["instopt_smooth_every_step"]
                )
                if "instopt_smooth_every_step" in entries
                else base_io.smooth_every_step,
                learning_rate=float(
                    entries.get("instopt_learning_rate", base_io.learning_rate)
                ),
                reg_weight=float(entries.get("instopt_reg_weight", base_io.reg_weight)),
                adam_beta1=float(entries.get("instopt_adam_beta1", base_io.adam_beta1)),
                adam_beta2=float(entries.get("instopt_adam_beta2", base_io.adam_beta2)),
                adam_eps=float(entries.get("instopt_adam_eps", base_io.adam_eps)),
            )
        split = (
            _parse_bool("split_level1", entries["split_level1"])
            if "split_level1" in entries
            else base.split_level1
        )
        ic_iters = int(
            entries.get("inverse_consistency_iters", base.inverse_consistency_iters)
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"malformed config value: {exc}") from exc

    if not (len(pool_factors) == len(weights) == len(radii)):
        raise ConfigError(
            f"levels ({len(pool_factors)}), weights ({len(weights)}) and "
            f"search_radii ({len(radii)}) must have the same length"
        )
    cfg = PipelineConfig(
        levels=tuple(
            LevelConfig(n, r, sched, w) for n, r, w in zip(pool_factors, radii, weights)
        ),
        inverse_consistency_iters=ic_iters,
        instopt=instopt,
        split_level1=split,
        preset_name=None,
        mind=mind,
    )
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Subcommands


def _resolve_config(args) -> PipelineConfig:
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FormatError(f"cannot read config {args.config}: {exc}") from exc
        return parse_config(text)
    cfg = preset(args.preset)
    validate_config(cfg)
    return cfg


def _resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("MCBO_THREADS")
        if env is not None:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigError(f"MCBO_THREADS must be an integer, got {env!r}") from exc
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _field_stats(field) -> dict[str, float]:
    norms = np.sqrt((field.vectors**2).sum(axis=-1))
    jac_min, jac_frac = jacobian_stats(field)
    return {
        "mean_norm_voxels": float(norms.mean()),
        "max_norm_voxels": float(norms.max()),
        "jacobian_min": jac_min,
        "jacobian_nonpositive_fraction": jac_frac,
    }


def cmd_register(args) -> int:
    cfg = _resolve_config(args)
    threads = _resolve_threads(args.threads)
    if not 1 <= len(args.moving) <= 2:
        raise ConfigError(f"expected 1 or 2 --moving volumes, got {len(args.moving)}")
    if args.out_warped and len(args.out_warped) != len(args.moving):
        raise ConfigError("--out-warped must be given once per --moving volume")

    fixed = read_volume(args.fixed)
    movings = [read_volume(path) for path in args.moving]
    for path, vol in zip(args.moving, movings):
        if vol.dims != fixed.dims:
            raise FormatError(
                f"{path}: dims {vol.dims} do not match fixed {fixed.dims}; "
                "resample inputs to a common grid first"
            )
        if vol.spacing != fixed.spacing:
            raise FormatError(
                f"{path}: spacing {vol.spacing} does not match fixed {fixed.spacing}"
            )

    timings: list[tuple[str, float]] = []
    fields = []
    for i, mov in enumerate(movings):
        stage_timings: list[tuple[str, float]] = []
        logger.info("registering moving volume %d: %s", i, args.moving[i])
        fields.append(register(fixed, mov, cfg, workers=threads, timings=stage_timings))
        timings += [(f"moving{i}/{stage}", sec) for stage, sec in stage_timings]

    if len(fields) == 2:
        labels = [os.path.basename(p) for p in args.moving]
        final = max_fuse(ModalityFieldSet(fields, labels))
    else:
        final = fields[0]

    write_field(args.out_field, final)
    warped_paths = args.out_warped or [
        _default_warped_path(args.out_field, i) for i in range(len(movings))
    ]
    for mov, path in zip(movings, warped_paths):
        write_volume(path, warp(mov, final))

    report_path = args.report or args.out_field + ".report.txt"
    stats = _field_stats(final)
    lines = ["# mcbo registration report", f"fixed = {args.fixed}"]
    lines += [f"moving_{i} = {p}" for i, p in enumerate(args.moving)]
    lines += [f"warped_{i} = {p}" for i, p in enumerate(warped_paths)]
    lines += [
        f"out_field = {args.out_field}",
        f"fused = {len(fields) == 2}",
        f"threads = {threads}",
        f"seed = {args.seed}",
        "",
        "[field]",
    ]
    lines += [f"{k} = {v!r}" for k, v in stats.items()]
    lines += ["", "[timings]"]
    lines += [f"{stage} = {sec:.3f}" for stage, sec in timings]
    lines += ["", "[config]", dump_config(cfg).rstrip("\n")]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    print(f"field written to {args.out_field}")
    print(
        f"mean |displacement| = {stats['mean_norm_voxels']:.3f} voxels, "
        f"jacobian min = {stats['jacobian_min']:.3f}"
    )
    return 0


def _default_warped_path(out_field: str, index: int) -> str:
    stem, ext = os.path.splitext(out_field)
    if ext not in (".mha", ".mhd"):
        stem, ext = out_field, ".mha"
    return f"{stem}_warped{index}{ext}"


def cmd_eval(args) -> int:
    field = read_field(args.field)
    lms = load_landmarks(args.landmarks, spacing=field.spacing)
    result = tre(lms, field)
    for i, err in enumerate(result.per_pair_mm):
        print(f"pair {i}: {err:.3f} mm")
    print(f"TRE(mm): {result.mean_mm:.3f} ± {result.std_mm:.3f}")
    report_path = args.report or args.field + ".tre.txt"
    lines = [
        "# mcbo evaluation report",
        f"field = {args.field}",
        f"landmarks = {args.landmarks}",
        f"pairs = {len(lms)}",
        f"tre_mean_mm = {result.mean_mm!r}",
        f"tre_std_mm = {result.std_mm!r}",
    ]
    lines += [f"pair_{i}_mm = {err!r}" for i, err in enumerate(result.per_pair_mm)]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_synth(args) -> int:
    dims = tuple(int(x) for x in args.dims.split(","))
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ConfigError(f"--dims must be three positive integers, got {args.dims}")
    if args.magnitude < 0:
        raise ConfigError(f"--magnitude must be >= 0, got {args.magnitude}")
    os.makedirs(args.out_dir, exist_ok=True)

    moving = synth_volume(dims, seed=args.seed)
    truth = synth_deform(dims, args.magnitude, smoothness=args.smoothness, seed=args.seed)
    fixed = warp(moving, truth)

    margin = float(np.ceil(args.magnitude)) + 1.0
    rng = np.random.default_rng([args.seed, 2])
    n = args.landmarks
    lo = np.full(3, margin)
    hi = np.array(dims, dtype=np.float64) - 1.0 - margin
    if (hi <= lo).any():
        raise ConfigError(
            f"--dims {dims} too small for landmarks at magnitude {args.magnitude}"
        )
    p_fixed = rng.uniform(lo, hi, size=(n, 3))
    p_moving = p_fixed + sample_field(truth, p_fixed)
    lms = LandmarkSet(p_fixed, p_moving)

    paths = {
        "fixed": os.path.join(args.out_dir, "fixed.mha"),
        "moving": os.path.join(args.out_dir, "moving.mha"),
        "field": os.path.join(args.out_dir, "field.mha"),
        "landmarks": os.path.join(args.out_dir, "landmarks.csv"),
    }
    write_volume(paths["fixed"], fixed)
    write_volume(paths["moving"], moving)
    write_field(paths["field"], truth)
    save_landmarks(paths["landmarks"], lms)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_dump_preset(args) -> int:
    text = dump_config(preset(args.name))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and entry points


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcbo", description="Deformable multimodal 3D image registration."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="register moving volume(s) onto a fixed volume")
    src = p_reg.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESET_NAMES, help="built-in configuration")
    src.add_argument("--config", help="path to a key = value configuration file")
    p_reg.add_argument("--fixed", required=True, help="fixed volume (.mha/.mhd)")
    p_reg.add_argument(
        "--moving",
        action="append",
        required=True,
        help="moving volume; repeat for a second modality (enables max fusion)",
    )
    p_reg.add_argument("--out-field", required=True, help="output displacement field")
    p_reg.add_argument(
        "--out-warped",
        action="append",
        help="output path per moving volume (default: derived from --out-field)",
    )
    p_reg.add_argument("--report", help="report path (default: <out-field>.report.txt)")
    p_reg.add_argument("--threads", type=int, help="worker threads (env MCBO_THREADS)")
    p_reg.add_argument("--seed", type=int, default=0, help="echoed into the report")
    p_reg.set_defaults(func=cmd_register)

    p_eval = sub.add_parser("eval", help="landmark TRE of a displacement field")
    p_eval.add_argument("--field", required=True, help="displacement field (.mha/.mhd)")
    p_eval.add_argument("--landmarks", required=True, help="landmark CSV")
    p_eval.add_argument("--report", help="report path (default: <field>.tre.txt)")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic fixture set")
    p_synth.add_argument("--dims", default="64,64,64", help="H,W,D (default 64,64,64)")
    p_synth.add_argument("--magnitude", type=float, default=4.0, help="max |deformation|")
    p_synth.add_argument("--smoothness", type=int, default=7, help="smoothing kernel")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--landmarks", type=int, default=20, help="landmark pair count")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_dump = sub.add_parser("dump-preset", help="print a preset as config text")
    p_dump.add_argument("name", choices=PRESET_NAMES)
    p_dump.add_argument("--out", help="write to file instead of stdout")
    p_dump.set_defaults(func=cmd_dump_preset)
    return parser


def main(argv=None) -> int:
    """Run the CLI; returns the process exit code."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    entry()
