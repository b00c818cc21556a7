"""Material constants, solver knobs, and per-beam stiffness derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class ActuationMode(str, Enum):
    """How per-voxel actuation phases are assigned."""

    ANTI_PHASE = "antiphase"        # two materials, half a cycle apart
    PHASE_WAVE = "wave"             # full 2*pi sweep from front to back
    SINGLE_BLADDER = "bladder"      # everything in unison


@dataclass(frozen=True)
class MaterialParams:
    """Bulk material and actuation constants (SI units)."""

    density: float = 10.0                 # kg/m^3
    youngs_modulus: float = 1.0e4         # Pa
    poisson_ratio: float = 0.5
    mu_static: float = 1.0
    mu_kinetic: float = 0.5
    volumetric_amplitude: float = 0.5     # +-50% of resting volume
    actuation_frequency: float = 5.0      # Hz
    # 'peak-volume': a single voxel peaks at exactly +50% volume;
    # 'trough-volume': it bottoms out at exactly -50% volume
    amplitude_convention: str = "peak-volume"

    def __post_init__(self):
        if self.density <= 0 or self.youngs_modulus <= 0:
            raise ValueError("density and Young's modulus must be positive")
        if not 0.0 < self.poisson_ratio <= 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5]")
        if self.amplitude_convention not in ("peak-volume", "trough-volume"):
            raise ValueError(f"unknown amplitude convention {self.amplitude_convention!r}")

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def linear_amplitude(self) -> float:
        """Beam rest-length amplitude realizing the volumetric swing."""
        v = self.volumetric_amplitude
        if self.amplitude_convention == "peak-volume":
            return (1.0 + v) ** (1.0 / 3.0) - 1.0
        return 1.0 - (1.0 - v) ** (1.0 / 3.0)


@dataclass(frozen=True)
class SolverParams:
    """Integration, damping, and contact settings."""

    dt_safety: float = 0.1                # dt = dt_safety * sqrt(m_min / k_max)
    damping_ratio: float = 1.0            # bond damping at the stiffest bound mode
    global_velocity_damping: float = 0.999  # per-step velocity retention factor
    contact_stiffness_scale: float = 1.0  # ground penalty relative to axial stiffness
    contact_damping_ratio: float = 1.0
    slip_speed: float = 1.0e-6            # m/s; static/kinetic friction switch
    collision_margin: float = 1.5         # broad-phase threshold in voxel sizes
    collision_interval: int = 16          # steps between broad-phase refreshes

    def __post_init__(self):
        if self.dt_safety <= 0:
            raise ValueError("dt_safety must be positive")
        if not 0.0 < self.global_velocity_damping <= 1.0:
            raise ValueError("global velocity damping must be in (0, 1]")
        if self.collision_interval < 1:
            raise ValueError("collision interval must be >= 1")


@dataclass(frozen=True)
class BeamConstants:
    """Stiffnesses of one lattice beam, derived from material and voxel size.

    A square cross section of edge d gives area d^2, bending second moment
    d^4/12, and polar moment d^4/6.  The transverse (shear) stiffness
    12*E*I/L^3 is implied by the bending energy and recorded for reference.
    """

    rest_length: float
    axial: float          # E*A/L
    shear: float          # 12*E*I/L^3
    bend: float           # E*I/L, coefficient of the end-rotation energy
    torsion: float        # G*J/L

    @classmethod
    def derive(cls, material: MaterialParams, voxel_size: float) -> "BeamConstants":
        d = voxel_size
        e = material.youngs_modulus
        area = d * d
        second_moment = d ** 4 / 12.0
        polar_moment = d ** 4 / 6.0
        return cls(
            rest_length=d,
            axial=e * area / d,
            shear=12.0 * e * second_moment / d ** 3,
            bend=e * second_moment / d,
            torsion=material.shear_modulus * polar_moment / d,
        )


def voxel_mass(material: MaterialParams, voxel_size: float) -> float:
    return material.density * voxel_size ** 3


def voxel_inertia(material: MaterialParams, voxel_size: float) -> float:
    """Isotropic moment of inertia of a solid cube about its center."""
    return voxel_mass(material, voxel_size) * voxel_size ** 2 / 6.0


def stable_timestep(material: MaterialParams, solver: SolverParams,
                    voxel_size: float) -> float:
    beams = BeamConstants.derive(material, voxel_size)
    k_max = max(beams.axial, beams.shear)
    return solver.dt_safety * math.sqrt(voxel_mass(material, voxel_size) / k_max)


def bond_damping_scale(material: MaterialParams, solver: SolverParams,
                       voxel_size: float, max_beams_per_mass: int = 6) -> float:
    """Stiffness-proportional damping factor beta (force = beta*k*rate).

    beta is set so the stiffest plausible lattice mode is damped at
    ``damping_ratio``.  The frequency bound folds in connectivity and the
    rotation/translation coupling of the beam energy (Gershgorin-style row
    sums), which keeps the damping itself stable under explicit integration.
    """
    beams = BeamConstants.derive(material, voxel_size)
    m = voxel_mass(material, voxel_size)
    inertia = voxel_inertia(material, voxel_size)
    n = max_beams_per_mass
    lam_lin = 2.0 * n * max(beams.axial, beams.shear) / m
    row_rot = 4.0 * beams.bend + beams.torsion + beams.shear * beams.rest_length ** 2 / 4.0
    lam_rot = 2.0 * n * row_rot / inertia
    omega_bound = math.sqrt(max(lam_lin, lam_rot))
    return 2.0 * solver.damping_ratio / omega_bound
