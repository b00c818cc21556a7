"""Age-protected evolutionary search for scale-invariant locomotion.

Fitness is the worst normalized displacement across the configured
composition levels, so a design only scores well when it moves at every
size scale.  Selection keeps individuals that are not dominated in
(higher fitness, lower lineage age), shielding young lineages.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .cppn import (
    CppnGenome,
    cell_coordinates,
    decode,
    evaluate_grid,
    genome_from_json,
    genome_to_json,
    mutate,
    random_genome,
)
from .geometry import (
    BudgetExceeded,
    DisconnectedComposition,
    EmptyPhenotype,
    Polycube,
    _face_connected,
    hausdorff_dimension,
    largest_connected_component,
)
from .physics import evaluate_displacement

WORKERS_ENV = "FRACTALVOX_WORKERS"

FLAG_EMPTY = "empty"
FLAG_DISCONNECTED = "disconnected"
FLAG_DIVERGED = "diverged"
FLAG_BUDGET = "budget"
FLAG_EMPTY_PLACEMENT = "empty_placement"


@dataclass(frozen=True)
class FitnessRecord:
    """Per-design evaluation outcome across all configured size scales."""

    displacements: tuple[float, ...]
    fitness: float
    hausdorff: float
    voxel_count: int
    age: int
    generation: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.displacements and self.fitness != min(self.displacements):
            raise ValueError("fitness must equal the minimum displacement")


def _zero_record(cfg: ExperimentConfig, age: int, generation: int,
                 flags: tuple[str, ...], voxel_count: int = 0,
                 hausdorff_dim: float = 0.0) -> FitnessRecord:
    zeros = tuple(0.0 for _ in cfg.scale_levels)
    return FitnessRecord(displacements=zeros, fitness=0.0, hausdorff=hausdorff_dim,
                         voxel_count=voxel_count, age=age, generation=generation,
                         flags=flags)


# per-process memo of displacement evaluations; results are pure functions
# of the key, so cache hits cannot change any outcome
_DISPLACEMENT_CACHE: dict = {}


def _displacement(cube: Polycube, level: int, cfg: ExperimentConfig):
    key = (cube.canonical_bytes(), level, cfg.mode, cfg.eval_duration,
           cfg.gravity, cfg.voxel_budget, cfg.material, cfg.solver)
    hit = _DISPLACEMENT_CACHE.get(key)
    if hit is None:
        hit = evaluate_displacement(cube, level, cfg.actuation_mode,
                                    material=cfg.material, solver=cfg.solver,
                                    duration=cfg.eval_duration, gravity=cfg.gravity,
                                    voxel_budget=cfg.voxel_budget)
        _DISPLACEMENT_CACHE[key] = hit
    return hit


def evaluate_design(cube: Polycube, cfg: ExperimentConfig, age: int,
                    generation: int) -> FitnessRecord:
    """Simulate a basal design at every configured level and take the worst."""
    displacements = []
    flags = []
    for level in cfg.scale_levels:
        try:
            outcome = _displacement(cube, level, cfg)
        except DisconnectedComposition:
            displacements.append(0.0)
            flags.append(FLAG_DISCONNECTED)
            continue
        except BudgetExceeded:
            displacements.append(0.0)
            flags.append(FLAG_BUDGET)
            continue
        displacements.append(outcome.displacement)
        if outcome.diverged:
            flags.append(FLAG_DIVERGED)
    return FitnessRecord(
        displacements=tuple(displacements),
        fitness=min(displacements),
        hausdorff=hausdorff_dimension(cube.voxel_count, cfg.workspace_extent),
        voxel_count=cube.voxel_count,
        age=age,
        generation=generation,
        flags=tuple(dict.fromkeys(flags)),
    )


def fitness(genome: CppnGenome, cfg: ExperimentConfig,
            generation: int = 0) -> FitnessRecord:
    """Decode a genome and score it; degenerate genomes score zero, flagged."""
    try:
        cube = decode(genome, cfg.workspace_extent)
    except EmptyPhenotype:
        return _zero_record(cfg, genome.age, generation, (FLAG_EMPTY,))
    return evaluate_design(cube, cfg, genome.age, generation)


# ---------------------------------------------------------------------------
# non-fractal control: three genomes dictate the shape at the three scales

@dataclass(frozen=True)
class GenomeTriple:
    """Basal-shape genome plus one placement genome per aggregation scale."""

    basal: CppnGenome
    placement1: CppnGenome
    placement2: CppnGenome
    age: int = 0


def random_triple(rng: np.random.Generator,
                  hidden_range: tuple[int, int] = (0, 4)) -> GenomeTriple:
    return GenomeTriple(
        basal=random_genome(rng, hidden_range),
        placement1=random_genome(rng, hidden_range),
        placement2=random_genome(rng, hidden_range),
        age=0,
    )


def mutate_triple(triple: GenomeTriple, rng: np.random.Generator,
                  noise: float = 0.5) -> GenomeTriple:
    """Mutate exactly one of the three genomes, chosen uniformly."""
    slot = int(rng.integers(3))
    if slot == 0:
        return replace(triple, basal=mutate(triple.basal, rng, noise))
    if slot == 1:
        return replace(triple, placement1=mutate(triple.placement1, rng, noise))
    return replace(triple, placement2=mutate(triple.placement2, rng, noise))


def placement_cells(genome: CppnGenome, extent: int) -> set[tuple[int, int, int]]:
    """Host-grid cells selected by a placement genome (largest connected set)."""
    presence, _ = evaluate_grid(genome, cell_coordinates(extent))
    grid = (presence > 0.0).reshape((extent, extent, extent))
    if not grid.any():
        raise EmptyPhenotype("placement genome selects no cells")
    return set(largest_connected_component(grid).voxels)


def compose_placement(base: Polycube, host_cells, host_extent: int) -> Polycube:
    """Place one copy of `base` at every host cell of a `host_extent` grid.

    The copy pitch equals the base structure's extent, mirroring how fractal
    composition replaces voxels with whole copies.
    """
    pitch = base.extent
    voxels = []
    mats = []
    for hx, hy, hz in sorted(host_cells):
        for (x, y, z), mat in zip(base.voxels, base.materials):
            voxels.append((pitch * hx + x, pitch * hy + y, pitch * hz + z))
            mats.append(mat)
    if not _face_connected(set(voxels)):
        raise DisconnectedComposition("aggregate placement is disconnected")
    return Polycube(extent=pitch * host_extent, voxels=tuple(voxels),
                    materials=tuple(mats), voxel_size=base.voxel_size)


def control_structures(basal: Polycube, cfg: ExperimentConfig,
                       triple: GenomeTriple,
                       mirror_basal: bool = False):
    """Aggregate structures per level under the free-placement scheme.

    Returns (structures, failures): structures maps each buildable level to
    its polycube; failures maps every unbuildable level to a flag string.
    Once a composition step fails, all deeper levels inherit its flag.  With
    ``mirror_basal`` the placement genomes are ignored and the host grids copy
    the basal occupancy, which reproduces fractal composition exactly.
    """
    m = cfg.workspace_extent
    structures: dict[int, Polycube] = {0: basal}
    failures: dict[int, str] = {}
    current: Polycube | None = basal
    top = max(cfg.scale_levels)
    for level, genome in ((1, triple.placement1), (2, triple.placement2)):
        if level > top:
            break
        if current is None:
            failures[level] = failures[level - 1]
            continue
        try:
            if mirror_basal:
                cells = set(basal.voxels)
            else:
                cells = placement_cells(genome, m)
            # budget precedes the connectivity check, as in fractal composition
            if current.voxel_count * len(cells) > cfg.voxel_budget:
                raise BudgetExceeded(
                    f"control level {level} needs "
                    f"{current.voxel_count * len(cells)} voxels")
            nxt = compose_placement(current, cells, m)
        except EmptyPhenotype:
            failures[level] = FLAG_EMPTY_PLACEMENT
            current = None
            continue
        except DisconnectedComposition:
            failures[level] = FLAG_DISCONNECTED
            current = None
            continue
        except BudgetExceeded:
            failures[level] = FLAG_BUDGET
            current = None
            continue
        structures[level] = nxt
        current = nxt
    return structures, failures


def fitness_control(triple: GenomeTriple, cfg: ExperimentConfig,
                    generation: int = 0,
                    mirror_basal: bool = False) -> FitnessRecord:
    """Score a genome triple under the non-fractal aggregation condition."""
    try:
        basal = decode(triple.basal, cfg.workspace_extent)
    except EmptyPhenotype:
        return _zero_record(cfg, triple.age, generation, (FLAG_EMPTY,))
    structures, failures = control_structures(basal, cfg, triple, mirror_basal)
    displacements = []
    flags = []
    for level in cfg.scale_levels:
        if level in structures:
            outcome = _displacement(structures[level], 0, cfg)
            displacements.append(outcome.displacement)
            if outcome.diverged:
                flags.append(FLAG_DIVERGED)
        else:
            displacements.append(0.0)
            flags.append(failures[level])
    return FitnessRecord(
        displacements=tuple(displacements),
        fitness=min(displacements),
        hausdorff=hausdorff_dimension(basal.voxel_count, cfg.workspace_extent),
        voxel_count=basal.voxel_count,
        age=triple.age,
        generation=generation,
        flags=tuple(dict.fromkeys(flags)),
    )


# ---------------------------------------------------------------------------
# genome plumbing shared by both conditions

def _genome_age(genome) -> int:
    return genome.age


def _with_age(genome, age: int):
    return replace(genome, age=age)


def genome_doc(genome) -> dict:
    if isinstance(genome, GenomeTriple):
        return {"kind": "triple", "age": genome.age,
                "basal": json.loads(genome_to_json(genome.basal)),
                "placement1": json.loads(genome_to_json(genome.placement1)),
                "placement2": json.loads(genome_to_json(genome.placement2))}
    return {"kind": "single", "genome": json.loads(genome_to_json(genome))}


def genome_from_doc(doc: dict):
    if doc["kind"] == "triple":
        return GenomeTriple(
            basal=genome_from_json(json.dumps(doc["basal"])),
            placement1=genome_from_json(json.dumps(doc["placement1"])),
            placement2=genome_from_json(json.dumps(doc["placement2"])),
            age=int(doc["age"]),
        )
    return genome_from_json(json.dumps(doc["genome"]))


def genome_hash(genome) -> str:
    return hashlib.sha256(
        json.dumps(genome_doc(genome), sort_keys=True).encode()).hexdigest()


class _Ops:
    """Variation and evaluation strategy for one experimental condition."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.control = cfg.condition == "control"

    def random(self, rng):
        if self.control:
            return random_triple(rng, self.cfg.hidden_nodes)
        return random_genome(rng, self.cfg.hidden_nodes)

    def mutate(self, genome, rng):
        if self.control:
            return mutate_triple(genome, rng, self.cfg.mutation_noise)
        return mutate(genome, rng, self.cfg.mutation_noise)

    def evaluate(self, genome, generation):
        if self.control:
            return fitness_control(genome, self.cfg, generation)
        return fitness(genome, self.cfg, generation)


# ---------------------------------------------------------------------------
# the evolutionary loop

@dataclass
class Individual:
    id: int
    parent_id: int | None
    genome: object
    record: FitnessRecord | None = None


@dataclass
class Champion:
    id: int
    generation: int
    record: FitnessRecord
    genome_doc: dict
    genome_hash: str


@dataclass
class EvolutionState:
    generation: int
    next_id: int
    population: list[Individual]
    champion: Champion | None
    rng_state: dict
    history: list[dict]


def dominates(a: FitnessRecord, b: FitnessRecord, age_a: int, age_b: int) -> bool:
    """True when a is at least as fit and as young as b, and better in one."""
    if a.fitness < b.fitness or age_a > age_b:
        return False
    return a.fitness > b.fitness or age_a < age_b


def _history_row(generation: int, ind: Individual, cfg: ExperimentConfig) -> dict:
    rec = ind.record
    row = {
        "generation": generation,
        "id": ind.id,
        "parent_id": ind.parent_id if ind.parent_id is not None else -1,
        "age": _genome_age(ind.genome),
        "voxel_count": rec.voxel_count,
        "hausdorff": rec.hausdorff,
    }
    for level, d in zip(cfg.scale_levels, rec.displacements):
        row[f"d_{level}"] = d
    row["fitness"] = rec.fitness
    row["fitness_blpm"] = rec.fitness * 60.0 / cfg.eval_duration
    row["flags"] = "|".join(rec.flags)
    return row


def worker_count(override: int | None = None) -> int:
    if override is not None:
        return max(1, override)
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


_WORKER_CFG: ExperimentConfig | None = None


def _worker_init(cfg_json: str):
    global _WORKER_CFG
    _WORKER_CFG = ExperimentConfig.from_json(cfg_json)


def _worker_eval(task):
    genome_doc_, generation = task
    genome = genome_from_doc(genome_doc_)
    ops = _Ops(_WORKER_CFG)
    return ops.evaluate(genome, generation)


def _evaluate_pending(pending: list[Individual], generation: int,
                      ops: _Ops, pool) -> None:
    """Fill in records for unevaluated individuals, preserving list order."""
    if pool is None:
        for ind in pending:
            ind.record = ops.evaluate(ind.genome, generation)
        return
    tasks = [(genome_doc(ind.genome), generation) for ind in pending]
    for ind, record in zip(pending, pool.map(_worker_eval, tasks)):
        ind.record = record


def _reduce_population(population: list[Individual], target: int,
                       rng: np.random.Generator) -> list[Individual]:
    """Discard dominated individuals (ties at random) until `target` remain.

    When only a mutually non-dominated set is left and it is still too large,
    random members are discarded, never touching the current best.
    """
    pop = list(population)
    while len(pop) > target:
        dominated = []
        for k, ind in enumerate(pop):
            for other in pop:
                if other is ind:
                    continue
                if dominates(other.record, ind.record,
                             _genome_age(other.genome), _genome_age(ind.genome)):
                    dominated.append(k)
                    break
        if dominated:
            victim = dominated[int(rng.integers(len(dominated)))]
        else:
            best = max(range(len(pop)),
                       key=lambda k: (pop[k].record.fitness,
                                      -_genome_age(pop[k].genome), -pop[k].id))
            pool_ = [k for k in range(len(pop)) if k != best]
            victim = pool_[int(rng.integers(len(pool_)))]
        pop.pop(victim)
    return pop


def _update_champion(state: EvolutionState, generation: int) -> None:
    for ind in state.population:
        if state.champion is None or ind.record.fitness > state.champion.record.fitness:
            state.champion = Champion(
                id=ind.id,
                generation=generation,
                record=ind.record,
                genome_doc=genome_doc(ind.genome),
                genome_hash=genome_hash(ind.genome),
            )


def evolve(cfg: ExperimentConfig,
           on_generation=None,
           resume: EvolutionState | None = None,
           workers: int | None = None) -> EvolutionState:
    """Run (or resume) the search; returns the final state.

    `on_generation(state)` fires after every completed generation, including
    generation 0.  Results are deterministic for a given config and seed,
    independent of the worker count.
    """
    ops = _Ops(cfg)
    nworkers = worker_count(workers)
    pool = None
    try:
        if nworkers > 1:
            pool = ProcessPoolExecutor(max_workers=nworkers,
                                       initializer=_worker_init,
                                       initargs=(cfg.to_json(),))
        if resume is not None:
            state = resume
            rng = np.random.default_rng()
            rng.bit_generator.state = state.rng_state
        else:
            rng = np.random.default_rng(cfg.seed)
            population = []
            for k in range(cfg.population_size):
                population.append(Individual(id=k, parent_id=None,
                                             genome=ops.random(rng)))
            state = EvolutionState(generation=0, next_id=cfg.population_size,
                                   population=population, champion=None,
                                   rng_state={}, history=[])
            _evaluate_pending(state.population, 0, ops, pool)
            _update_champion(state, 0)
            state.history.extend(_history_row(0, ind, cfg)
                                 for ind in state.population)
            state.rng_state = rng.bit_generator.state
            if on_generation is not None:
                on_generation(state)

        while state.generation < cfg.generations:
            generation = state.generation + 1
            for ind in state.population:
                ind.genome = _with_age(ind.genome, _genome_age(ind.genome) + 1)
            survivors = list(state.population)
            expanded = list(state.population)
            for _ in range(cfg.population_size):
                parent = survivors[int(rng.integers(len(survivors)))]
                expanded.append(Individual(id=state.next_id, parent_id=parent.id,
                                           genome=ops.mutate(parent.genome, rng)))
                state.next_id += 1
            expanded.append(Individual(id=state.next_id, parent_id=None,
                                       genome=ops.random(rng)))
            state.next_id += 1
            pending = [ind for ind in expanded if ind.record is None]
            _evaluate_pending(pending, generation, ops, pool)
            state.population = _reduce_population(expanded, cfg.population_size, rng)
            state.generation = generation
            _update_champion(state, generation)
            state.history.extend(_history_row(generation, ind, cfg)
                                 for ind in state.population)
            state.rng_state = rng.bit_generator.state
            if on_generation is not None:
                on_generation(state)
        return state
    finally:
        if pool is not None:
            pool.shutdown()
