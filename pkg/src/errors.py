# src/errors.py — structured errors shared by physics, dynamics and service layers
from __future__ import annotations

from typing import Sequence


class RotorsError(RuntimeError):
    """Base class; the CLI maps it to exit code 2."""


class ConfigError(RotorsError):
    pass


class EigenSolverError(RotorsError):
    def __init__(self, dimension: int, reason: str = ""):
        self.dimension = int(dimension)
        super().__init__(f"eigensolver failed on a {dimension}x{dimension} matrix: {reason}")


class PotentialMismatchError(RotorsError):
    pass


class ActiveSpaceError(RotorsError):
    pass


class NodeProximity(RotorsError):
    """|Psi|^2 below the node threshold at a velocity evaluation."""

    def __init__(self, density: float, position: Sequence[float], time: float):
        self.density = float(density)
        self.position = tuple(float(x) for x in position)
        self.time = float(time)
        super().__init__(f"|Psi|^2={density:.3e} below node threshold at Q={self.position}, t={time:.6f}")


class NodeUnresolvable(RotorsError):
    def __init__(self, position: Sequence[float], time: float, depth: int):
        self.position = tuple(float(x) for x in position)
        self.time = float(time)
        self.depth = int(depth)
        super().__init__(f"node not resolved after {depth} step halvings at Q={self.position}, t={time:.6f}")


class ArtifactMismatchError(RotorsError):
    pass


class MissingArtifactError(RotorsError):
    pass


class EmptyTrajectoryError(RotorsError):
    pass
