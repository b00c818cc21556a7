"""Lattice construction, stepping, and displacement evaluation.

Each voxel becomes one point mass with an orientation; each face-adjacent
pair gets one beam.  All stepping funnels through a single jitted loop so a
trajectory is reproducible bit for bit for a given design and configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import PHASE_B, Polycube, body_length, fractalize
from . import _kernels
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

STANDARD_GRAVITY = 9.81

_AXIS_STEPS = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
_FACE_DIRS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


class SimulationDiverged(RuntimeError):
    """A state variable left the representable range (NaN/inf or runaway)."""


class SimState:
    """Mutable dynamic state of one voxel lattice.

    Owned by exactly one caller while stepping; independent instances can run
    in parallel freely.
    """

    def __init__(self, cube: Polycube, mode: ActuationMode,
                 material: MaterialParams, solver: SolverParams,
                 gravity: float):
        self.cube = cube
        self.mode = mode
        self.material = material
        self.solver = solver
        self.gravity = gravity
        self.ground_enabled = True
        self.time = 0.0
        self.step_count = 0
        self.diverged = False

        d = cube.voxel_size
        n = cube.voxel_count
        self.n = n
        index = {v: k for k, v in enumerate(cube.voxels)}
        z_min = min(v[2] for v in cube.voxels)

        self.pos = np.empty((n, 3))
        for k, (x, y, z) in enumerate(cube.voxels):
            self.pos[k, 0] = (x + 0.5) * d
            self.pos[k, 1] = (y + 0.5) * d
            self.pos[k, 2] = (z - z_min + 0.5) * d
        self.vel = np.zeros((n, 3))
        self.quat = np.zeros((n, 4))
        self.quat[:, 0] = 1.0
        self.angvel = np.zeros((n, 3))
        self.mass = np.full(n, voxel_mass(material, d))
        self.inv_mass = 1.0 / self.mass
        self.inertia = np.full(n, voxel_inertia(material, d))
        self.inv_inertia = 1.0 / self.inertia
        self.external_force = np.zeros((n, 3))
        self.phase = _assign_phases(cube, mode)

        beams = []
        neighbor_count = np.zeros(n, dtype=np.int64)
        for k, (x, y, z) in enumerate(cube.voxels):
            for axis, (dx, dy, dz) in enumerate(_AXIS_STEPS):
                other = index.get((x + dx, y + dy, z + dz))
                if other is not None:
                    beams.append((k, other, axis))
            for dx, dy, dz in _FACE_DIRS:
                if (x + dx, y + dy, z + dz) in index:
                    neighbor_count[k] += 1
        self.beam_i = np.array([b[0] for b in beams], dtype=np.int64)
        self.beam_j = np.array([b[1] for b in beams], dtype=np.int64)
        self.beam_axis = np.array([b[2] for b in beams], dtype=np.int64)
        self.beam_count = len(beams)

        self.constants = BeamConstants.derive(material, d)
        nb = self.beam_count
        self.beam_len0 = np.full(nb, self.constants.rest_length)
        self.beam_kax = np.full(nb, self.constants.axial)
        self.beam_cb = np.full(nb, self.constants.bend)
        self.beam_kt = np.full(nb, self.constants.torsion)
        beta = bond_damping_scale(material, solver, d)
        self.beam_dax = beta * self.beam_kax
        self.beam_dcb = beta * self.beam_cb
        self.beam_dkt = beta * self.beam_kt

        self.surface_idx = np.flatnonzero(neighbor_count < 6).astype(np.int64)
        keys = sorted(min(i, j) * n + max(i, j) for i, j, _ in beams)
        self.bonded_keys = np.array(keys, dtype=np.int64)
        self.key_stride = np.int64(max(n, 1))

        self.exposed_faces = []
        for k, (x, y, z) in enumerate(cube.voxels):
            for face, (dx, dy, dz) in enumerate(_FACE_DIRS):
                if (x + dx, y + dy, z + dz) not in index:
                    self.exposed_faces.append((k, face))

        self.contact_radius = 0.5 * d
        self.k_contact = solver.contact_stiffness_scale * self.constants.axial
        self.c_contact = 2.0 * solver.contact_damping_ratio * math.sqrt(
            self.k_contact * float(self.mass[0]))
        self.dt = stable_timestep(material, solver, d)

        cap = max(64, 16 * len(self.surface_idx))
        self.cand_i = np.empty(cap, dtype=np.int64)
        self.cand_j = np.empty(cap, dtype=np.int64)
        self.n_cand = 0

    # -- internal state snapshots (used to retry deterministically when the
    #    candidate-pair buffer has to grow mid-run)

    def _snapshot(self):
        return (self.pos.copy(), self.vel.copy(), self.quat.copy(),
                self.angvel.copy(), self.time, self.step_count, self.n_cand,
                self.cand_i.copy(), self.cand_j.copy(), self.diverged)

    def _restore(self, snap):
        (pos, vel, quat, angvel, time, steps, n_cand, ci, cj, div) = snap
        self.pos[:] = pos
        self.vel[:] = vel
        self.quat[:] = quat
        self.angvel[:] = angvel
        self.time = time
        self.step_count = steps
        self.n_cand = n_cand
        if len(ci) != len(self.cand_i):
            self.cand_i = ci.copy()
            self.cand_j = cj.copy()
        else:
            self.cand_i[:] = ci
            self.cand_j[:] = cj
        self.diverged = div


def _assign_phases(cube: Polycube, mode: ActuationMode) -> np.ndarray:
    n = cube.voxel_count
    phase = np.zeros(n)
    if mode == ActuationMode.ANTI_PHASE:
        for k, m in enumerate(cube.materials):
            if m == PHASE_B:
                phase[k] = math.pi
    elif mode == ActuationMode.PHASE_WAVE:
        xs = [v[0] for v in cube.voxels]
        x_min, x_max = min(xs), max(xs)
        if x_max > x_min:
            for k, (x, _, _) in enumerate(cube.voxels):
                phase[k] = -2.0 * math.pi * (x - x_min) / (x_max - x_min)
    return phase


def build_sim(cube: Polycube, mode: ActuationMode,
              material: MaterialParams | None = None,
              solver: SolverParams | None = None,
              gravity: float = STANDARD_GRAVITY) -> SimState:
    """Assemble a resting lattice on the ground plane (lowest mass at z = d/2)."""
    return SimState(cube, mode,
                    material or MaterialParams(),
                    solver or SolverParams(),
                    gravity)


def actuation_rest_length(rest_length: float, t: float, phase: float,
                          material: MaterialParams) -> float:
    """Actuated rest length of a beam whose two voxels share one phase."""
    a = material.linear_amplitude
    f = material.actuation_frequency
    return rest_length * (1.0 + a * math.sin(2.0 * math.pi * f * t + phase))


@dataclass
class RunResult:
    diverged: bool
    time: float
    sample_t: np.ndarray | None = None
    sample_com: np.ndarray | None = None
    sample_ke: np.ndarray | None = None
    sample_ee: np.ndarray | None = None
    frame_pos: np.ndarray | None = None
    frame_quat: np.ndarray | None = None


_EMPTY_F = np.empty(0)
_EMPTY_F3 = np.empty((0, 3))
_EMPTY_F43 = np.empty((0, 0, 3))
_EMPTY_F44 = np.empty((0, 0, 4))


def _kernel_args(sim: SimState):
    mat = sim.material
    sol = sim.solver
    return (sim.pos, sim.vel, sim.quat, sim.angvel,
            sim.mass, sim.inv_mass, sim.inertia, sim.inv_inertia,
            sim.phase, mat.linear_amplitude, mat.actuation_frequency,
            sim.beam_i, sim.beam_j, sim.beam_axis, sim.beam_len0,
            sim.beam_kax, sim.beam_cb, sim.beam_kt,
            sim.beam_dax, sim.beam_dcb, sim.beam_dkt,
            sim.surface_idx, sim.bonded_keys, sim.key_stride,
            sim.gravity, sim.ground_enabled, sim.contact_radius,
            sim.k_contact, sim.c_contact, mat.mu_static, mat.mu_kinetic,
            sol.slip_speed,
            sim.cube.voxel_size, sol.collision_margin, sol.collision_interval,
            sim.external_force)


def _advance(sim: SimState, nsteps: int, dt: float, sample_every: int,
             samp_t, samp_com, samp_ke, samp_ee,
             frame_every: int, frame_pos, frame_quat):
    """Run the jitted loop, growing the pair buffer deterministically on demand."""
    for _ in range(8):
        snap = sim._snapshot()
        status, done, t, n_cand, n_samples, n_frames = _kernels.run_steps(
            *_kernel_args(sim),
            dt, sim.solver.global_velocity_damping, nsteps,
            sim.step_count, sim.time,
            sim.cand_i, sim.cand_j, sim.n_cand,
            sample_every, samp_t, samp_com, samp_ke, samp_ee,
            frame_every, frame_pos, frame_quat)
        if status == _kernels.STATUS_PAIR_OVERFLOW:
            sim._restore(snap)
            cap = 4 * len(sim.cand_i)
            sim.cand_i = np.empty(cap, dtype=np.int64)
            sim.cand_j = np.empty(cap, dtype=np.int64)
            sim.n_cand = 0
            continue
        sim.n_cand = n_cand
        sim.time = t
        sim.step_count += done
        if status == _kernels.STATUS_DIVERGED:
            sim.diverged = True
        return status, n_samples, n_frames
    raise RuntimeError("collision candidate buffer kept overflowing")


def step(sim: SimState, dt: float | None = None) -> SimState:
    """Advance one timestep (default: the lattice's stability-derived dt).

    Raises SimulationDiverged when any state variable leaves the
    representable range.
    """
    status, _, _ = _advance(sim, 1, dt if dt is not None else sim.dt, 0,
                            _EMPTY_F, _EMPTY_F3, _EMPTY_F, _EMPTY_F,
                            0, _EMPTY_F43, _EMPTY_F44)
    if status == _kernels.STATUS_DIVERGED:
        raise SimulationDiverged(f"diverged at t={sim.time:.6g}s")
    return sim


def run(sim: SimState, duration: float,
        sample_interval: float | None = None,
        frame_interval: float | None = None) -> RunResult:
    """Simulate for `duration` seconds, optionally recording trajectory samples."""
    nsteps = max(1, int(round(duration / sim.dt)))
    sample_every = 0
    samp_t, samp_com, samp_ke, samp_ee = _EMPTY_F, _EMPTY_F3, _EMPTY_F, _EMPTY_F
    if sample_interval is not None:
        sample_every = max(1, int(round(sample_interval / sim.dt)))
        cap = nsteps // sample_every + 1
        samp_t = np.empty(cap)
        samp_com = np.empty((cap, 3))
        samp_ke = np.empty(cap)
        samp_ee = np.empty(cap)
    frame_every = 0
    frame_pos, frame_quat = _EMPTY_F43, _EMPTY_F44
    if frame_interval is not None:
        frame_every = max(1, int(round(frame_interval / sim.dt)))
        cap = nsteps // frame_every + 1
        frame_pos = np.empty((cap, sim.n, 3))
        frame_quat = np.empty((cap, sim.n, 4))
    status, n_samples, n_frames = _advance(
        sim, nsteps, sim.dt, sample_every, samp_t, samp_com, samp_ke, samp_ee,
        frame_every, frame_pos, frame_quat)
    return RunResult(
        diverged=(status == _kernels.STATUS_DIVERGED),
        time=sim.time,
        sample_t=samp_t[:n_samples] if sample_every else None,
        sample_com=samp_com[:n_samples] if sample_every else None,
        sample_ke=samp_ke[:n_samples] if sample_every else None,
        sample_ee=samp_ee[:n_samples] if sample_every else None,
        frame_pos=frame_pos[:n_frames] if frame_every else None,
        frame_quat=frame_quat[:n_frames] if frame_every else None,
    )


def center_of_mass(sim: SimState) -> np.ndarray:
    return (sim.mass[:, None] * sim.pos).sum(axis=0) / sim.mass.sum()


def _rotation_matrices(sim: SimState) -> np.ndarray:
    rmat = np.empty((sim.n, 3, 3))
    _kernels.rotation_matrices(sim.quat, rmat)
    return rmat


def _scales(sim: SimState) -> np.ndarray:
    out = np.empty(sim.n)
    _kernels.actuation_scales(sim.phase, sim.material.linear_amplitude,
                              sim.material.actuation_frequency, sim.time, out)
    return out


def elastic_energy(sim: SimState) -> float:
    return float(_kernels.elastic_energy(
        sim.pos, _rotation_matrices(sim), _scales(sim),
        sim.beam_i, sim.beam_j, sim.beam_axis, sim.beam_len0,
        sim.beam_kax, sim.beam_cb, sim.beam_kt))


def kinetic_energy(sim: SimState) -> float:
    return float(_kernels.kinetic_energy(sim.vel, sim.angvel, sim.mass, sim.inertia))


def beam_force_torque(sim: SimState) -> tuple[np.ndarray, np.ndarray]:
    """Current beam forces and torques only (no gravity, contact, or external)."""
    force = np.zeros((sim.n, 3))
    torque = np.zeros((sim.n, 3))
    _kernels.beam_forces(sim.pos, sim.vel, sim.angvel, _rotation_matrices(sim),
                         _scales(sim),
                         sim.beam_i, sim.beam_j, sim.beam_axis, sim.beam_len0,
                         sim.beam_kax, sim.beam_cb, sim.beam_kt,
                         sim.beam_dax, sim.beam_dcb, sim.beam_dkt,
                         force, torque)
    return force, torque


def applied_forces(sim: SimState) -> np.ndarray:
    """Everything except ground contact: gravity, external, beams, pair contacts."""
    force = np.zeros((sim.n, 3))
    force += sim.external_force
    force[:, 2] -= sim.gravity * sim.mass
    beams, _ = beam_force_torque(sim)
    force += beams
    if sim.n_cand > 0:
        _kernels.pair_contact_forces(sim.pos, sim.vel, force,
                                     sim.cand_i, sim.cand_j, sim.n_cand,
                                     sim.cube.voxel_size, sim.k_contact,
                                     sim.c_contact, sim.material.mu_kinetic,
                                     sim.solver.slip_speed)
    return force


def ground_contact_and_friction(sim: SimState) -> np.ndarray:
    """Per-mass ground reaction for the current state (normal plus friction)."""
    applied = applied_forces(sim)
    total = applied.copy()
    _kernels.ground_forces(sim.pos, sim.vel, total, sim.contact_radius,
                           sim.k_contact, sim.c_contact,
                           sim.material.mu_static, sim.material.mu_kinetic,
                           sim.solver.slip_speed)
    return total - applied


def detect_collisions(sim: SimState, threshold: float | None = None) -> list[tuple[int, int]]:
    """Non-bonded surface-mass pairs closer than `threshold` (default: voxel size)."""
    pairs, _ = detect_collisions_instrumented(sim, threshold)
    return pairs


def detect_collisions_instrumented(sim: SimState, threshold: float | None = None):
    """Like detect_collisions but also reports the broad-phase node visit count."""
    if threshold is None:
        threshold = sim.cube.voxel_size
    points = sim.pos[sim.surface_idx]
    return pairs_within(points, threshold, ids=sim.surface_idx,
                        bonded_keys=sim.bonded_keys, key_stride=int(sim.key_stride))


def pairs_within(points: np.ndarray, threshold: float, ids=None,
                 bonded_keys=None, key_stride=None):
    """Broad-phase pair query over an arbitrary point cloud.

    Returns (sorted pair list, visited node count).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
    if key_stride is None:
        key_stride = int(ids.max()) + 1 if n else 1
    if bonded_keys is None:
        bonded_keys = np.empty(0, dtype=np.int64)
    cap = max(64, 8 * n)
    while True:
        out_i = np.empty(cap, dtype=np.int64)
        out_j = np.empty(cap, dtype=np.int64)
        count, visited = _kernels.broad_phase_pairs(
            points, ids, threshold, bonded_keys, np.int64(key_stride), out_i, out_j)
        if count >= 0:
            return [(int(a), int(b)) for a, b in zip(out_i[:count], out_j[:count])], int(visited)
        cap *= 4


@dataclass(frozen=True)
class DisplacementOutcome:
    displacement: float     # body lengths over the evaluation window
    diverged: bool


def evaluate_displacement(basal: Polycube, level: int, mode: ActuationMode,
                          material: MaterialParams | None = None,
                          solver: SolverParams | None = None,
                          duration: float = 5.0,
                          gravity: float = STANDARD_GRAVITY,
                          voxel_budget: int | None = None) -> DisplacementOutcome:
    """Net horizontal travel of the composed design, in body lengths.

    The basal design is composed up to `level` internally.  A diverged
    simulation scores zero and is flagged rather than raised.
    """
    kwargs = {} if voxel_budget is None else {"voxel_budget": voxel_budget}
    composed = fractalize(basal, level, **kwargs)
    sim = build_sim(composed, mode, material, solver, gravity)
    start = center_of_mass(sim)[:2].copy()
    result = run(sim, duration)
    if result.diverged:
        return DisplacementOutcome(displacement=0.0, diverged=True)
    end = center_of_mass(sim)[:2]
    dist = float(np.hypot(end[0] - start[0], end[1] - start[1]))
    return DisplacementOutcome(displacement=dist / body_length(basal, level),
                               diverged=False)


def mesh_obj(frame_pos: np.ndarray, frame_quat: np.ndarray, sim: SimState) -> str:
    """Wavefront OBJ text with one quad per exposed voxel face."""
    d = sim.cube.voxel_size
    h = 0.5 * d
    rmat = np.empty((sim.n, 3, 3))
    _kernels.rotation_matrices(np.ascontiguousarray(frame_quat), rmat)
    lines = []
    vcount = 0
    for mass_k, face in sim.exposed_faces:
        normal = np.array(_FACE_DIRS[face], dtype=float)
        axis = face // 2
        t1 = np.zeros(3)
        t2 = np.zeros(3)
        t1[(axis + 1) % 3] = 1.0
        t2[(axis + 2) % 3] = 1.0
        r = rmat[mass_k]
        center = frame_pos[mass_k] + r @ (normal * h)
        e1 = r @ (t1 * h)
        e2 = r @ (t2 * h)
        for sa, sb in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            v = center + sa * e1 + sb * e2
            lines.append(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}")
        lines.append(f"f {vcount + 1} {vcount + 2} {vcount + 3} {vcount + 4}")
        vcount += 4
    return "\n".join(lines) + "\n"
