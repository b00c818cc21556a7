import json
from pathlib import Path

import pytest

from fractalvox.cli import main
from fractalvox.config import ExperimentConfig
from fractalvox.geometry import load_design, menger_sponge, save_design
from fractalvox.harness import (
    FITNESS_CSV,
    champion_curve_from_run,
    read_csv,
    run_evolution,
)


def smoke_config(**overrides):
    base = dict(seed=0, population_size=4, generations=3, scale_levels=(0,),
                eval_duration=0.5)
    base.update(overrides)
    return ExperimentConfig(**base)


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(cfg.to_json())
    return path


@pytest.fixture()
def smoke_run(tmp_path):
    """A tiny but complete evolution run directory."""
    cfg = smoke_config()
    out = tmp_path / "run"
    state = run_evolution(cfg, out)
    return cfg, out, state


class TestEvolveCommand:
    def test_smoke_run_layout(self, tmp_path, smoke_run):
        cfg, out, state = smoke_run
        assert (out / "manifest.json").exists()
        assert (out / FITNESS_CSV).exists()
        assert (out / "checkpoint.json").exists()
        rows = read_csv(out / FITNESS_CSV)
        # one row per surviving individual per generation, including gen 0
        assert len(rows) == cfg.population_size * (cfg.generations + 1)
        champions = sorted((out / "champions").glob("gen_*.json"))
        assert len(champions) == cfg.generations + 1

    def test_same_seed_gives_byte_identical_csv(self, tmp_path):
        cfg = smoke_config(seed=3)
        path = write_config(tmp_path, cfg)
        assert main(["evolve", "--config", str(path), "--out",
                     str(tmp_path / "a"), "--quiet"]) == 0
        assert main(["evolve", "--config", str(path), "--out",
                     str(tmp_path / "b"), "--quiet"]) == 0
        a = (tmp_path / "a" / FITNESS_CSV).read_bytes()
        b = (tmp_path / "b" / FITNESS_CSV).read_bytes()
        assert a == b

    def test_resume_after_interruption_matches_straight_run(self, tmp_path):
        short = smoke_config(seed=7, generations=2)
        long = smoke_config(seed=7, generations=4)
        run_evolution(short, tmp_path / "resumed")
        run_evolution(long, tmp_path / "resumed")  # picks up the checkpoint
        run_evolution(long, tmp_path / "straight")
        assert ((tmp_path / "resumed" / FITNESS_CSV).read_bytes()
                == (tmp_path / "straight" / FITNESS_CSV).read_bytes())

    def test_mismatched_checkpoint_config_rejected(self, tmp_path):
        run_evolution(smoke_config(seed=1), tmp_path / "r")
        other = write_config(tmp_path, smoke_config(seed=2))
        assert main(["evolve", "--config", str(other), "--out",
                     str(tmp_path / "r"), "--quiet"]) == 1

    def test_invalid_config_exits_nonzero(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"population_size": }\n')
        assert main(["evolve", "--config", str(bad), "--out",
                     str(tmp_path / "x")]) == 1

    def test_batch_writes_combined_curves(self, tmp_path):
        cfg = smoke_config(trials=3, generations=2, population_size=3)
        path = write_config(tmp_path, cfg)
        assert main(["evolve", "--config", str(path), "--out",
                     str(tmp_path / "batch"), "--quiet"]) == 0
        trials = sorted(p.name for p in (tmp_path / "batch").iterdir()
                        if p.is_dir())
        assert trials == ["trial_00_seed0", "trial_01_seed1", "trial_02_seed2"]
        combined = read_csv(tmp_path / "batch" / "combined_curves.csv")
        assert len(combined) == cfg.generations + 1
        assert all(r["ci_lo"] <= r["mean_fitness"] <= r["ci_hi"] for r in combined)


class TestEvaluateCommand:
    def test_menger_without_actuation_stays_put(self, tmp_path, capsys):
        design = tmp_path / "sponge.json"
        save_design(menger_sponge(), design, actuation_mode="bladder")
        out = tmp_path / "eval"
        assert main(["evaluate", str(design), "--out", str(out),
                     "--levels", "0", "--duration", "1.0",
                     "--amplitude", "0.0"]) == 0
        captured = capsys.readouterr().out
        fitness = float([l for l in captured.splitlines()
                         if l.startswith("fitness")][0].split("=")[1])
        assert fitness < 1e-3
        rows = read_csv(out / "trajectory_level0.csv")
        assert rows[0]["t"] == 0.0
        assert len(rows) > 50

    def test_mode_required_when_file_has_none(self, tmp_path):
        design = tmp_path / "d.json"
        save_design(menger_sponge(), design)
        assert main(["evaluate", str(design), "--out", str(tmp_path / "o"),
                     "--levels", "0"]) == 1

    def test_mesh_export(self, tmp_path):
        design = tmp_path / "d.json"
        save_design(menger_sponge(), design, actuation_mode="bladder")
        out = tmp_path / "ev"
        assert main(["evaluate", str(design), "--out", str(out), "--levels", "0",
                     "--duration", "0.2", "--mesh"]) == 0
        meshes = list((out / "meshes_level0").glob("frame_*.obj"))
        assert meshes
        text = meshes[0].read_text()
        assert text.startswith("v ")
        assert "\nf " in text


class TestFractalizeCommand:
    def test_menger_level_one(self, tmp_path, capsys):
        design = tmp_path / "sponge.json"
        save_design(menger_sponge(), design, actuation_mode="antiphase")
        out = tmp_path / "level1.json"
        assert main(["fractalize", str(design), "--level", "1",
                     "--out", str(out)]) == 0
        cube, mode = load_design(out)
        assert cube.voxel_count == 400
        assert cube.extent == 9
        assert mode == "antiphase"
        printed = capsys.readouterr().out
        assert "2.726" in printed or "2.727" in printed

    def test_single_voxel_identity(self, tmp_path):
        from fractalvox.geometry import Polycube
        design = tmp_path / "dot.json"
        save_design(Polycube.from_voxels(1, [(0, 0, 0)]), design)
        out = tmp_path / "dot5.json"
        assert main(["fractalize", str(design), "--level", "5",
                     "--out", str(out)]) == 0
        assert load_design(out)[0].voxel_count == 1

    def test_round_trip_composition_matches_direct(self, tmp_path):
        design = tmp_path / "sponge.json"
        save_design(menger_sponge(), design)
        mid = tmp_path / "mid.json"
        final = tmp_path / "final.json"
        direct = tmp_path / "direct.json"
        assert main(["fractalize", str(design), "--level", "1", "--out", str(mid)]) == 0
        # continue the loaded composition by substituting the basal once more
        assert main(["fractalize", str(mid), "--level", "1", "--basal",
                     str(design), "--out", str(final)]) == 0
        assert main(["fractalize", str(design), "--level", "2", "--out", str(direct)]) == 0
        assert load_design(final)[0] == load_design(direct)[0]

    def test_budget_exceeded_exits_nonzero(self, tmp_path):
        design = tmp_path / "sponge.json"
        save_design(menger_sponge(), design)
        assert main(["fractalize", str(design), "--level", "3",
                     "--out", str(tmp_path / "x.json"), "--budget", "1000"]) == 1


def synthetic_run(tmp_path, name, finals):
    """Craft a minimal run directory whose champion curve ends at each value."""
    out = tmp_path / name
    out.mkdir(parents=True)
    header = "generation,id,parent_id,age,voxel_count,hausdorff,d_0,fitness,fitness_blpm,flags"
    lines = [header]
    for gen, value in enumerate(finals):
        lines.append(f"{gen},{gen},-1,0,1,0.0,{value!r},{value!r},{value * 12!r},")
    (out / FITNESS_CSV).write_text("\n".join(lines) + "\n")
    return out


class TestStatsCommand:
    def test_group_against_itself_gives_p_one(self, tmp_path, capsys):
        runs = [synthetic_run(tmp_path, f"r{k}", [0.0, float(k)]) for k in range(3)]
        args = ["stats", "--group-a"] + [str(r) for r in runs]
        args += ["--group-b"] + [str(r) for r in runs]
        args += ["--out", str(tmp_path / "cmp")]
        assert main(args) == 0
        report = json.loads((tmp_path / "cmp" / "report.json").read_text())
        assert report["p_value"] == 1.0

    def test_disjoint_groups_give_exact_p(self, tmp_path):
        a = [synthetic_run(tmp_path, f"a{k}", [0.0, v])
             for k, v in enumerate([0.1, 0.2, 0.3])]
        b = [synthetic_run(tmp_path, f"b{k}", [0.0, v])
             for k, v in enumerate([1.0, 2.0, 3.0])]
        args = (["stats", "--group-a"] + [str(r) for r in a]
                + ["--group-b"] + [str(r) for r in b]
                + ["--out", str(tmp_path / "cmp")])
        assert main(args) == 0
        report = json.loads((tmp_path / "cmp" / "report.json").read_text())
        assert report["p_value"] == pytest.approx(0.1, abs=1e-12)
        assert report["direction"] == "b"
        assert (tmp_path / "cmp" / "curves_a.csv").exists()
        assert (tmp_path / "cmp" / "hausdorff_a_00.csv").exists()

    def test_insufficient_runs_rejected(self, tmp_path):
        runs = [synthetic_run(tmp_path, f"x{k}", [0.1]) for k in range(2)]
        args = (["stats", "--group-a"] + [str(r) for r in runs]
                + ["--group-b"] + [str(r) for r in runs]
                + ["--out", str(tmp_path / "cmp")])
        assert main(args) == 1


class TestReplayCommand:
    def test_champion_replays_to_logged_fitness(self, tmp_path, smoke_run):
        cfg, out, state = smoke_run
        replay_out = tmp_path / "replay"
        assert main(["replay", "--run", str(out), "--out", str(replay_out)]) == 0
        doc = json.loads((replay_out / "replay.json").read_text())
        assert doc["exact_match"] is True
        assert doc["replayed_fitness"] == doc["logged_fitness"]

    def test_champion_curve_matches_history(self, smoke_run):
        cfg, out, state = smoke_run
        curve = champion_curve_from_run(out)
        assert curve[-1]["fitness"] == state.champion.record.fitness
        fits = [row["fitness"] for row in curve]
        assert fits == sorted(fits)
