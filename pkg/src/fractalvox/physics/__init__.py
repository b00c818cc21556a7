"""Deterministic soft-body dynamics for voxel lattices."""

from .params import (
    ActuationMode,
    BeamConstants,
    MaterialParams,
    SolverParams,
    bond_damping_scale,
    stable_timestep,
    voxel_inertia,
    voxel_mass,
)
from .sim import (
    STANDARD_GRAVITY,
    DisplacementOutcome,
    RunResult,
    SimState,
    SimulationDiverged,
    actuation_rest_length,
    applied_forces,
    beam_force_torque,
    build_sim,
    center_of_mass,
    detect_collisions,
    detect_collisions_instrumented,
    elastic_energy,
    evaluate_displacement,
    ground_contact_and_friction,
    kinetic_energy,
    mesh_obj,
    pairs_within,
    run,
    step,
)

__all__ = [
    "ActuationMode", "BeamConstants", "MaterialParams", "SolverParams",
    "bond_damping_scale", "stable_timestep", "voxel_inertia", "voxel_mass",
    "STANDARD_GRAVITY", "DisplacementOutcome", "RunResult", "SimState",
    "SimulationDiverged", "actuation_rest_length", "applied_forces",
    "beam_force_torque", "build_sim", "center_of_mass", "detect_collisions",
    "detect_collisions_instrumented", "elastic_energy", "evaluate_displacement",
    "ground_contact_and_friction", "kinetic_energy", "mesh_obj", "pairs_within",
    "run", "step",
]
