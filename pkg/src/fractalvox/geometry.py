"""Polycube designs: validation, fractal self-composition, and structure metrics.

A design is a set of unit voxels joined face to face inside a cubic workspace.
Designs can be composed with translated copies of themselves ("fractalized")
to realize the same shape at larger size scales.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DEFAULT_VOXEL_SIZE = 0.01  # meters (1 cm voxels)
DEFAULT_VOXEL_BUDGET = 250_000

PHASE_A = 0
PHASE_B = 1

FACE_STEPS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


class GeometryError(ValueError):
    """Base class for design-level errors."""


class InvalidPolycube(GeometryError):
    """A voxel set that violates the polycube invariants."""


class EmptyPhenotype(GeometryError):
    """No occupied cells; the producing genome is degenerate."""


class DisconnectedComposition(GeometryError):
    """A composed structure fell apart into multiple components."""


class BudgetExceeded(GeometryError):
    """Composition would exceed the configured voxel budget."""


def _face_connected(voxels: set[tuple[int, int, int]]) -> bool:
    """True when the voxel set forms a single 6-connected component."""
    if not voxels:
        return False
    seen = set()
    stack = [next(iter(voxels))]
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        x, y, z = v
        for dx, dy, dz in FACE_STEPS:
            n = (x + dx, y + dy, z + dz)
            if n in voxels and n not in seen:
                stack.append(n)
    return len(seen) == len(voxels)


@dataclass(frozen=True)
class Polycube:
    """A face-connected voxel solid inside an ``extent``-cubed workspace.

    Voxels are kept sorted by (x, y, z) so that equal designs compare and
    serialize identically.  Each voxel carries a phase label (PHASE_A or
    PHASE_B); actuation modes that do not distinguish materials ignore it.
    """

    extent: int
    voxels: tuple[tuple[int, int, int], ...]
    materials: tuple[int, ...]
    voxel_size: float = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        if not self.voxels:
            raise InvalidPolycube("polycube must contain at least one voxel")
        if self.extent < 1:
            raise InvalidPolycube(f"extent must be >= 1, got {self.extent}")
        if len(self.materials) != len(self.voxels):
            raise InvalidPolycube("materials must align with voxels")
        order = sorted(range(len(self.voxels)), key=lambda k: self.voxels[k])
        object.__setattr__(self, "voxels", tuple(tuple(int(c) for c in self.voxels[k]) for k in order))
        object.__setattr__(self, "materials", tuple(int(self.materials[k]) for k in order))
        vset = set(self.voxels)
        if len(vset) != len(self.voxels):
            raise InvalidPolycube("duplicate voxel coordinates")
        for v in self.voxels:
            if len(v) != 3 or any(c < 0 or c >= self.extent for c in v):
                raise InvalidPolycube(f"voxel {v} outside [0, {self.extent})^3")
        for m in self.materials:
            if m not in (PHASE_A, PHASE_B):
                raise InvalidPolycube(f"unknown material label {m}")
        if not _face_connected(vset):
            raise InvalidPolycube("voxels are not a single face-connected component")

    @classmethod
    def from_voxels(cls, extent, voxels, materials=None, voxel_size=DEFAULT_VOXEL_SIZE):
        """Build a polycube, defaulting every voxel to PHASE_A."""
        voxels = [tuple(v) for v in voxels]
        if materials is None:
            materials = [PHASE_A] * len(voxels)
        return cls(extent=extent, voxels=tuple(voxels), materials=tuple(materials),
                   voxel_size=voxel_size)

    @property
    def voxel_count(self) -> int:
        return len(self.voxels)

    def occupancy_grid(self) -> np.ndarray:
        """Boolean (extent, extent, extent) grid of occupied cells."""
        grid = np.zeros((self.extent,) * 3, dtype=bool)
        for x, y, z in self.voxels:
            grid[x, y, z] = True
        return grid

    def material_of(self) -> dict[tuple[int, int, int], int]:
        return dict(zip(self.voxels, self.materials))

    def canonical_bytes(self) -> bytes:
        """Stable byte encoding used for hashing and caching."""
        return design_document(self, actuation_mode=None).encode()


@dataclass(frozen=True)
class FractalLevel:
    """Size bookkeeping for one self-composition level (0 = basal)."""

    level: int
    total_extent: int
    voxel_count: int


def fractal_level(basal: Polycube, level: int) -> FractalLevel:
    if level < 0:
        raise GeometryError(f"level must be >= 0, got {level}")
    return FractalLevel(
        level=level,
        total_extent=basal.extent ** (level + 1),
        voxel_count=basal.voxel_count ** (level + 1),
    )


def largest_connected_component(grid: np.ndarray, materials: np.ndarray | None = None,
                                voxel_size: float = DEFAULT_VOXEL_SIZE) -> Polycube:
    """Extract the largest 6-connected component of an occupancy grid.

    Ties between equal-sized components are broken deterministically by the
    lexicographically smallest minimum coordinate.  ``materials`` is an
    optional integer grid of per-cell phase labels.

    Raises EmptyPhenotype when no cell is occupied.
    """
    grid = np.asarray(grid, dtype=bool)
    if grid.ndim != 3:
        raise GeometryError("occupancy grid must be 3-dimensional")
    if not grid.any():
        raise EmptyPhenotype("no occupied cells in grid")
    structure = ndimage.generate_binary_structure(3, 1)  # faces only
    labels, count = ndimage.label(grid, structure=structure)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) == 1:
        winner = candidates[0]
    else:
        # smallest lexicographic minimum coordinate wins
        def min_coord(lab):
            coords = np.argwhere(labels == lab)
            return tuple(coords[np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))][0])
        winner = min(candidates, key=min_coord)
    coords = [tuple(int(c) for c in v) for v in np.argwhere(labels == winner)]
    if materials is not None:
        materials = np.asarray(materials)
        mats = [int(materials[v]) for v in coords]
    else:
        mats = None
    return Polycube.from_voxels(grid.shape[0], coords, mats, voxel_size=voxel_size)


def compose_step(host: Polycube, basal: Polycube,
                 voxel_budget: int = DEFAULT_VOXEL_BUDGET) -> Polycube:
    """Replace every voxel of ``host`` with a translated copy of ``basal``.

    Copies keep the basal per-voxel material pattern; the host voxel's own
    label is discarded.  Raises DisconnectedComposition when the result is
    not a single face-connected solid (possible when the basal design misses
    a bounding-box face the host adjacency needs).
    """
    total = host.voxel_count * basal.voxel_count
    if total > voxel_budget:
        raise BudgetExceeded(
            f"composition needs {total} voxels (budget {voxel_budget})")
    m = basal.extent
    voxels = []
    mats = []
    for hx, hy, hz in host.voxels:
        for (x, y, z), mat in zip(basal.voxels, basal.materials):
            voxels.append((m * hx + x, m * hy + y, m * hz + z))
            mats.append(mat)
    if not _face_connected(set(voxels)):
        raise DisconnectedComposition(
            f"composition of {basal.voxel_count}-voxel design into "
            f"{host.voxel_count} host cells is disconnected")
    return Polycube(extent=m * host.extent, voxels=tuple(voxels),
                    materials=tuple(mats), voxel_size=basal.voxel_size)


def fractalize(basal: Polycube, level: int,
               voxel_budget: int = DEFAULT_VOXEL_BUDGET) -> Polycube:
    """Compose a design with copies of itself ``level`` times (iteratively).

    Level 0 returns the basal design unchanged.  Each further level replaces
    every voxel of the current structure with a copy of the basal design, so
    the voxel count is basal_count^(level+1) and the extent grows by a factor
    of the basal extent per level.

    Raises BudgetExceeded when the composed voxel count would exceed
    ``voxel_budget`` and DisconnectedComposition when composition falls
    apart.
    """
    if level < 0:
        raise GeometryError(f"level must be >= 0, got {level}")
    total = basal.voxel_count ** (level + 1)
    if total > voxel_budget:
        raise BudgetExceeded(
            f"level {level} composition needs {total} voxels (budget {voxel_budget})")
    structure = basal
    for _ in range(level):
        structure = compose_step(structure, basal, voxel_budget=voxel_budget)
    return structure


def hausdorff_dimension(voxel_count: int, extent: int) -> float:
    """log(voxel_count) / log(extent): the limit dimension of the fractal family."""
    if voxel_count < 1:
        raise GeometryError(f"voxel count must be >= 1, got {voxel_count}")
    if extent < 2:
        raise GeometryError(f"workspace extent must be >= 2, got {extent}")
    return math.log(voxel_count) / math.log(extent)


def body_length(design: Polycube, level: int) -> float:
    """Workspace edge length in meters at the given composition level."""
    if level < 0:
        raise GeometryError(f"level must be >= 0, got {level}")
    return design.extent ** (level + 1) * design.voxel_size


def design_document(design: Polycube, actuation_mode: str | None) -> str:
    """Canonical snapshot text for a design (byte-comparable across runs)."""
    doc = {
        "extent": design.extent,
        "voxel_size": design.voxel_size,
        "actuation_mode": actuation_mode,
        "voxels": [[x, y, z, m] for (x, y, z), m in zip(design.voxels, design.materials)],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_design(design: Polycube, path, actuation_mode: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(design_document(design, actuation_mode))


def load_design(path) -> tuple[Polycube, str | None]:
    """Load a design snapshot; returns the polycube and its stored mode (if any)."""
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("extent", "voxel_size", "voxels"):
        if key not in doc:
            raise GeometryError(f"design file missing required field '{key}'")
    voxels = [tuple(row[:3]) for row in doc["voxels"]]
    mats = [row[3] if len(row) > 3 else PHASE_A for row in doc["voxels"]]
    cube = Polycube(extent=int(doc["extent"]), voxels=tuple(voxels), materials=tuple(mats),
                    voxel_size=float(doc["voxel_size"]))
    return cube, doc.get("actuation_mode")


def menger_sponge(voxel_size: float = DEFAULT_VOXEL_SIZE) -> Polycube:
    """The 20-voxel basal sponge: a 3x3x3 cube with face centers and core removed."""
    voxels = [(x, y, z)
              for x in range(3) for y in range(3) for z in range(3)
              if sum(c == 1 for c in (x, y, z)) < 2]
    return Polycube.from_voxels(3, voxels, voxel_size=voxel_size)
