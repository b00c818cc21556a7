"""fractalvox: voxel soft robots, fractal self-composition, and evolutionary design search."""

__version__ = "0.1.0"
