"""Command-line front end: evolve, evaluate, fractalize, stats, replay."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .evolution import WORKERS_ENV
from .geometry import (
    GeometryError,
    compose_step,
    fractalize,
    hausdorff_dimension,
    load_design,
    save_design,
)
from .physics import ActuationMode


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --levels value {text!r}: {exc}") from exc


def _load_config(args, require_file: bool = False) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    elif require_file:
        raise ConfigError("--config is required")
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if getattr(args, "condition", None) is not None:
        overrides["condition"] = args.condition
    if getattr(args, "levels", None) is not None:
        overrides["scale_levels"] = _parse_levels(args.levels)
    if getattr(args, "duration", None) is not None:
        overrides["eval_duration"] = args.duration
    if getattr(args, "amplitude", None) is not None:
        mat = {**cfg.to_dict()["material"], "volumetric_amplitude": args.amplitude}
        overrides["material"] = mat
    if not overrides:
        return cfg
    return ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})


def _cmd_evolve(args) -> int:
    from .harness import run_batch, run_evolution

    cfg = _load_config(args, require_file=True)
    out = Path(args.out)
    if cfg.trials > 1:
        dirs = run_batch(cfg, out, workers=args.workers, quiet=args.quiet)
        print(f"completed {len(dirs)} trials under {out}")
    else:
        state = run_evolution(cfg, out, workers=args.workers, quiet=args.quiet)
        print(f"completed {state.generation} generations; "
              f"champion fitness {state.champion.record.fitness:.6g} "
              f"(run directory {out})")
    return 0


def _cmd_evaluate(args) -> int:
    from .harness import evaluate_design_file

    cfg = _load_config(args)
    mode = ActuationMode(args.mode) if args.mode else None
    record, trajectories = evaluate_design_file(
        args.design, cfg, args.out, mode=mode,
        write_meshes=args.mesh, sample_dt=args.sample_dt)
    for level, d in zip(cfg.scale_levels, record.displacements):
        print(f"level {level}: d = {d!r} body lengths")
    print(f"fitness = {record.fitness!r}")
    print(f"hausdorff = {record.hausdorff!r}")
    print(f"voxel_count = {record.voxel_count}")
    if record.flags:
        print(f"flags = {','.join(record.flags)}")
    for level, path in trajectories.items():
        print(f"trajectory level {level}: {path}")
    return 0


def _cmd_fractalize(args) -> int:
    cube, stored_mode = load_design(args.design)
    kwargs = {}
    if args.budget is not None:
        kwargs["voxel_budget"] = args.budget
    if args.basal:
        # iteration semantics: substitute the given basal design into every
        # voxel of an already-composed structure, one level at a time
        basal, _ = load_design(args.basal)
        composed = cube
        for _ in range(args.level):
            composed = compose_step(composed, basal, **kwargs)
        reference = basal
    else:
        composed = fractalize(cube, args.level, **kwargs)
        reference = cube
    save_design(composed, args.out, actuation_mode=stored_mode)
    print(f"basal voxels = {reference.voxel_count}, "
          f"workspace extent = {reference.extent}")
    print(f"hausdorff = "
          f"{hausdorff_dimension(reference.voxel_count, max(reference.extent, 2))!r}")
    print(f"level {args.level}: extent {composed.extent}, "
          f"{composed.voxel_count} voxels -> {args.out}")
    return 0


def _cmd_stats(args) -> int:
    from .harness import stats_report

    report = stats_report(args.group_a, args.group_b, args.out, seed=args.seed or 0)
    print(f"group a median: {report['group_a']['median']!r}")
    print(f"group b median: {report['group_b']['median']!r}")
    print(f"U = {report['u_statistic']!r}, p = {report['p_value']!r} "
          f"({'exact' if report['exact'] else 'approximate'})")
    print(f"higher-median group: {report['direction']}")
    return 0


def _cmd_replay(args) -> int:
    from .harness import replay_champion

    result = replay_champion(args.run, args.out, generation=args.generation,
                             sample_dt=args.sample_dt)
    print(f"snapshot: {result['snapshot']}")
    print(f"logged fitness:   {result['logged_fitness']!r}")
    print(f"replayed fitness: {result['replayed_fitness']!r}")
    print(f"exact match: {result['exact_match']}")
    return 0 if result["exact_match"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fractalvox",
        description="Voxel soft robots: fractal composition, simulation, and "
                    "evolutionary design search.",
        epilog=f"Worker processes for fitness evaluation come from "
               f"${WORKERS_ENV} (default 1) unless --workers is given.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run an evolutionary experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=[m.value for m in ActuationMode])
    p.add_argument("--condition", choices=["fractal", "control"])
    p.add_argument("--levels", help="comma-separated composition levels, e.g. 0,1,2")
    p.add_argument("--workers", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("evaluate", help="score a saved design file")
    p.add_argument("design", help="design snapshot JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=[m.value for m in ActuationMode])
    p.add_argument("--levels")
    p.add_argument("--duration", type=float)
    p.add_argument("--amplitude", type=float,
                   help="volumetric actuation amplitude override (0 disables)")
    p.add_argument("--mesh", action="store_true", help="export per-frame OBJ meshes")
    p.add_argument("--sample-dt", type=float, default=0.01)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("fractalize", help="compose a design with copies of itself")
    p.add_argument("design")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--basal",
                   help="substitute this basal design instead of the input "
                        "itself (continues an existing composition)")
    p.set_defaults(func=_cmd_fractalize)

    p = sub.add_parser("stats", help="compare two groups of runs")
    p.add_argument("--group-a", nargs="+", required=True)
    p.add_argument("--group-b", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("replay", help="re-evaluate a logged champion")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--generation", type=int)
    p.add_argument("--sample-dt", type=float, default=0.01)
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GeometryError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
