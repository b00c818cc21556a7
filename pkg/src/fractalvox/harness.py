"""Run-directory orchestration: logs, checkpoints, batches, and reports.

Every number written here is recomputable from the run directory alone, and
fitness CSVs are byte-identical for identical config + seed regardless of
worker count or interruption/resume.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .cppn import decode
from .evolution import (
    EvolutionState,
    Champion,
    FitnessRecord,
    Individual,
    _Ops,
    control_structures,
    evolve,
    genome_doc,
    genome_from_doc,
    genome_hash,
)
from .geometry import (
    EmptyPhenotype,
    Polycube,
    body_length,
    fractal_level,
    fractalize,
    hausdorff_dimension,
    load_design,
    save_design,
)
from .physics import ActuationMode, build_sim, center_of_mass, elastic_energy, kinetic_energy, mesh_obj, run
from .stats import bootstrap_mean_ci, wilcoxon_rank_sum

FITNESS_CSV = "fitness.csv"
CURVE_CSV = "champion_curve.csv"
CHECKPOINT = "checkpoint.json"
MANIFEST = "manifest.json"
CHAMPION_DIR = "champions"


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in header))
    path.write_text("\n".join(lines) + "\n")


def _fitness_header(cfg: ExperimentConfig) -> list[str]:
    header = ["generation", "id", "parent_id", "age", "voxel_count", "hausdorff"]
    header += [f"d_{k}" for k in cfg.scale_levels]
    header += ["fitness", "fitness_blpm", "flags"]
    return header


def _record_doc(rec: FitnessRecord) -> dict:
    return dataclasses.asdict(rec)


def _record_from_doc(doc: dict) -> FitnessRecord:
    return FitnessRecord(
        displacements=tuple(doc["displacements"]),
        fitness=doc["fitness"],
        hausdorff=doc["hausdorff"],
        voxel_count=doc["voxel_count"],
        age=doc["age"],
        generation=doc["generation"],
        flags=tuple(doc["flags"]),
    )


def _state_doc(state: EvolutionState) -> dict:
    return {
        "generation": state.generation,
        "next_id": state.next_id,
        "population": [
            {"id": ind.id, "parent_id": ind.parent_id,
             "genome": genome_doc(ind.genome), "record": _record_doc(ind.record)}
            for ind in state.population
        ],
        "champion": None if state.champion is None else {
            "id": state.champion.id,
            "generation": state.champion.generation,
            "record": _record_doc(state.champion.record),
            "genome": state.champion.genome_doc,
            "genome_hash": state.champion.genome_hash,
        },
        "rng_state": _jsonable(state.rng_state),
        "history": state.history,
    }


def _state_from_doc(doc: dict) -> EvolutionState:
    population = [
        Individual(id=p["id"], parent_id=p["parent_id"],
                   genome=genome_from_doc(p["genome"]),
                   record=_record_from_doc(p["record"]))
        for p in doc["population"]
    ]
    champ = doc["champion"]
    champion = None if champ is None else Champion(
        id=champ["id"], generation=champ["generation"],
        record=_record_from_doc(champ["record"]),
        genome_doc=champ["genome"], genome_hash=champ["genome_hash"])
    return EvolutionState(
        generation=doc["generation"],
        next_id=doc["next_id"],
        population=population,
        champion=champion,
        rng_state=doc["rng_state"],
        history=doc["history"],
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _champion_curve_rows(history: list[dict]) -> list[dict]:
    """Champion-so-far per generation, recomputed from the population log."""
    by_gen: dict[int, list[dict]] = {}
    for row in history:
        by_gen.setdefault(row["generation"], []).append(row)
    rows = []
    best = None
    for gen in sorted(by_gen):
        top = max(by_gen[gen], key=lambda r: r["fitness"])
        if best is None or top["fitness"] > best["fitness"]:
            best = top
        rows.append({
            "generation": gen,
            "fitness": best["fitness"],
            "fitness_blpm": best["fitness_blpm"],
            "hausdorff": best["hausdorff"],
            "voxel_count": best["voxel_count"],
            "champion_id": best["id"],
        })
    return rows


CURVE_HEADER = ["generation", "fitness", "fitness_blpm", "hausdorff",
                "voxel_count", "champion_id"]


def run_evolution(cfg: ExperimentConfig, out_dir, workers: int | None = None,
                  quiet: bool = True) -> EvolutionState:
    """Execute one evolutionary run into `out_dir`, resuming from a checkpoint.

    Artifacts: manifest.json, fitness.csv, champion_curve.csv, checkpoint.json
    and one champion genome snapshot per generation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CHAMPION_DIR).mkdir(exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()

    resume = None
    ckpt_path = out / CHECKPOINT
    if ckpt_path.exists():
        doc = json.loads(ckpt_path.read_text())
        # the generation budget may grow on resume; everything else must match
        stored = {k: v for k, v in doc["config"].items() if k != "generations"}
        wanted = {k: v for k, v in cfg.to_dict().items() if k != "generations"}
        if stored != wanted:
            raise ConfigError(
                f"{out}: existing checkpoint was produced by a different config")
        if doc["state"]["generation"] >= cfg.generations:
            return _state_from_doc(doc["state"])
        resume = _state_from_doc(doc["state"])

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "code_version": __version__,
        "started": started,
        "finished": None,
        "artifacts": {
            "fitness": FITNESS_CSV,
            "champion_curve": CURVE_CSV,
            "checkpoint": CHECKPOINT,
            "champions": CHAMPION_DIR,
        },
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")

    header = _fitness_header(cfg)

    def checkpoint(state: EvolutionState) -> None:
        _write_csv(out / FITNESS_CSV, header, state.history)
        _write_csv(out / CURVE_CSV, CURVE_HEADER, _champion_curve_rows(state.history))
        snap = {
            "generation": state.generation,
            "id": state.champion.id,
            "fitness": state.champion.record.fitness,
            "genome_hash": state.champion.genome_hash,
            "genome": state.champion.genome_doc,
            "record": _record_doc(state.champion.record),
        }
        (out / CHAMPION_DIR / f"gen_{state.generation:04d}.json").write_text(
            json.dumps(snap, sort_keys=True, indent=2) + "\n")
        ckpt_path.write_text(json.dumps(
            {"config": cfg.to_dict(), "state": _state_doc(state)}) + "\n")
        if not quiet:
            print(f"generation {state.generation}: "
                  f"champion fitness {state.champion.record.fitness:.6g}")

    state = evolve(cfg, on_generation=checkpoint, resume=resume, workers=workers)
    manifest["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return state


def run_batch(cfg: ExperimentConfig, out_dir, workers: int | None = None,
              quiet: bool = True) -> list[Path]:
    """Run `cfg.trials` independent trials (seed, seed+1, ...) plus a combined curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trial_dirs = []
    for t in range(cfg.trials):
        seed = cfg.seed + t
        trial_cfg = ExperimentConfig.from_dict(
            {**cfg.to_dict(), "seed": seed, "trials": 1})
        tdir = out / f"trial_{t:02d}_seed{seed}"
        run_evolution(trial_cfg, tdir, workers=workers, quiet=quiet)
        trial_dirs.append(tdir)
    if len(trial_dirs) > 1:
        rows = combined_curve_rows(trial_dirs, seed=cfg.seed)
        _write_csv(out / "combined_curves.csv",
                   ["generation", "mean_fitness", "ci_lo", "ci_hi", "n_trials"], rows)
    return trial_dirs


def read_csv(path) -> list[dict]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row = {}
        for key, raw in zip(header, parts):
            if key in ("generation", "id", "parent_id", "age", "voxel_count",
                       "champion_id", "n_trials"):
                row[key] = int(raw)
            elif key == "flags":
                row[key] = raw
            else:
                row[key] = float(raw)
        rows.append(row)
    return rows


def champion_curve_from_run(run_dir) -> list[dict]:
    """Champion-so-far fitness per generation, recomputed from fitness.csv."""
    return _champion_curve_rows(read_csv(Path(run_dir) / FITNESS_CSV))


def combined_curve_rows(run_dirs, seed: int = 0) -> list[dict]:
    curves = [champion_curve_from_run(d) for d in run_dirs]
    depth = min(len(c) for c in curves)
    rng = np.random.default_rng(seed)
    rows = []
    for g in range(depth):
        values = [c[g]["fitness"] for c in curves]
        lo, hi = bootstrap_mean_ci(values, rng)
        rows.append({"generation": curves[0][g]["generation"],
                     "mean_fitness": float(np.mean(values)),
                     "ci_lo": lo, "ci_hi": hi, "n_trials": len(values)})
    return rows


def stats_report(group_a_dirs, group_b_dirs, out_dir, seed: int = 0) -> dict:
    """Compare two groups of runs on final champion fitness (rank-sum test)."""
    for name, group in (("a", group_a_dirs), ("b", group_b_dirs)):
        if len(group) < 3:
            raise ValueError(f"group {name} needs at least 3 runs, got {len(group)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def finals(dirs):
        return [champion_curve_from_run(d)[-1]["fitness"] for d in dirs]

    sample_a = finals(group_a_dirs)
    sample_b = finals(group_b_dirs)
    test = wilcoxon_rank_sum(sample_a, sample_b)
    report = {
        "group_a": {"runs": [str(d) for d in group_a_dirs], "final_fitness": sample_a,
                    "median": float(np.median(sample_a))},
        "group_b": {"runs": [str(d) for d in group_b_dirs], "final_fitness": sample_b,
                    "median": float(np.median(sample_b))},
        "u_statistic": test.u_statistic,
        "p_value": test.p_value,
        "exact": test.exact,
        "direction": ("a" if np.median(sample_a) > np.median(sample_b)
                      else "b" if np.median(sample_b) > np.median(sample_a) else "tie"),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    for label, dirs in (("a", group_a_dirs), ("b", group_b_dirs)):
        rows = combined_curve_rows(dirs, seed=seed)
        _write_csv(out / f"curves_{label}.csv",
                   ["generation", "mean_fitness", "ci_lo", "ci_hi", "n_trials"], rows)
        # per-trial champion structure trajectories (fitness and roughness)
        for k, d in enumerate(dirs):
            rows_h = [{"generation": r["generation"], "hausdorff": r["hausdorff"]}
                      for r in champion_curve_from_run(d)]
            _write_csv(out / f"hausdorff_{label}_{k:02d}.csv",
                       ["generation", "hausdorff"], rows_h)
    lines = [
        "rank-sum comparison of final champion fitness",
        f"group a (n={len(sample_a)}): median {report['group_a']['median']:.6g}",
        f"group b (n={len(sample_b)}): median {report['group_b']['median']:.6g}",
        f"U = {test.u_statistic}, two-sided p = {test.p_value:.6g}"
        f" ({'exact' if test.exact else 'normal approximation'})",
        f"higher-median group: {report['direction']}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    return report


TRAJECTORY_HEADER = ["t", "com_x", "com_y", "com_z", "kinetic_energy", "elastic_energy"]


def write_trajectory(cube: Polycube, mode: ActuationMode, cfg: ExperimentConfig,
                     out_csv, duration: float, sample_dt: float = 0.01,
                     mesh_dir=None, mesh_fps: float = 25.0) -> None:
    """Simulate a composed structure and dump its center-of-mass trajectory."""
    sim = build_sim(cube, mode, material=cfg.material, solver=cfg.solver,
                    gravity=cfg.gravity)
    com0 = center_of_mass(sim)
    rows = [{"t": 0.0, "com_x": float(com0[0]), "com_y": float(com0[1]),
             "com_z": float(com0[2]), "kinetic_energy": kinetic_energy(sim),
             "elastic_energy": elastic_energy(sim)}]
    frame_interval = 1.0 / mesh_fps if mesh_dir is not None else None
    result = run(sim, duration, sample_interval=sample_dt,
                 frame_interval=frame_interval)
    for k in range(len(result.sample_t)):
        rows.append({"t": float(result.sample_t[k]),
                     "com_x": float(result.sample_com[k, 0]),
                     "com_y": float(result.sample_com[k, 1]),
                     "com_z": float(result.sample_com[k, 2]),
                     "kinetic_energy": float(result.sample_ke[k]),
                     "elastic_energy": float(result.sample_ee[k])})
    _write_csv(Path(out_csv), TRAJECTORY_HEADER, rows)
    if mesh_dir is not None:
        mdir = Path(mesh_dir)
        mdir.mkdir(parents=True, exist_ok=True)
        for k in range(len(result.frame_pos)):
            (mdir / f"frame_{k:05d}.obj").write_text(
                mesh_obj(result.frame_pos[k], result.frame_quat[k], sim))


def evaluate_design_file(design_path, cfg: ExperimentConfig, out_dir,
                         mode: ActuationMode | None = None,
                         write_meshes: bool = False,
                         sample_dt: float = 0.01):
    """Score a saved design at the configured levels; write trajectories.

    Returns (record, dict of trajectory csv paths).
    """
    from .evolution import evaluate_design

    cube, stored_mode = load_design(design_path)
    if mode is None:
        if stored_mode is None:
            raise ConfigError(
                f"{design_path} stores no actuation mode; pass one explicitly")
        mode = ActuationMode(stored_mode)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "mode": mode.value,
                                      "workspace_extent": max(cube.extent, 2)})
    record = evaluate_design(cube, cfg, age=0, generation=0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectories = {}
    for level in cfg.scale_levels:
        try:
            composed = fractalize(cube, level, voxel_budget=cfg.voxel_budget)
        except Exception:
            continue
        csv_path = out / f"trajectory_level{level}.csv"
        mesh_dir = out / f"meshes_level{level}" if write_meshes else None
        write_trajectory(composed, mode, cfg, csv_path, cfg.eval_duration,
                         sample_dt=sample_dt, mesh_dir=mesh_dir)
        trajectories[level] = csv_path
    (out / "evaluation.json").write_text(json.dumps({
        "design": str(design_path),
        "mode": mode.value,
        "record": _record_doc(record),
    }, indent=2) + "\n")
    return record, trajectories


def replay_champion(run_dir, out_dir, generation: int | None = None,
                    sample_dt: float = 0.01) -> dict:
    """Re-evaluate a logged champion and verify it reproduces its fitness."""
    run_path = Path(run_dir)
    manifest = json.loads((run_path / MANIFEST).read_text())
    cfg = ExperimentConfig.from_dict(manifest["config"])
    snaps = sorted((run_path / CHAMPION_DIR).glob("gen_*.json"))
    if not snaps:
        raise FileNotFoundError(f"no champion snapshots under {run_path}")
    if generation is None:
        snap_path = snaps[-1]
    else:
        snap_path = run_path / CHAMPION_DIR / f"gen_{generation:04d}.json"
    snap = json.loads(snap_path.read_text())
    genome = genome_from_doc(snap["genome"])
    record = _Ops(cfg).evaluate(genome, snap["record"]["generation"])
    match = record.fitness == snap["fitness"]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectories = {}
    try:
        if cfg.condition == "control":
            basal = decode(genome.basal, cfg.workspace_extent)
            structures, _ = control_structures(basal, cfg, genome)
        else:
            basal = decode(genome, cfg.workspace_extent)
            structures = {}
            for level in cfg.scale_levels:
                structures[level] = fractalize(basal, level,
                                               voxel_budget=cfg.voxel_budget)
        save_design(basal, out / "champion_basal.json", actuation_mode=cfg.mode)
        for level, cube in structures.items():
            csv_path = out / f"trajectory_level{level}.csv"
            write_trajectory(cube, cfg.actuation_mode, cfg, csv_path,
                             cfg.eval_duration, sample_dt=sample_dt)
            trajectories[level] = str(csv_path)
    except EmptyPhenotype:
        pass
    result = {
        "snapshot": str(snap_path),
        "logged_fitness": snap["fitness"],
        "replayed_fitness": record.fitness,
        "exact_match": match,
        "trajectories": trajectories,
    }
    (out / "replay.json").write_text(json.dumps(result, indent=2) + "\n")
    return result
