"""Electron configurations and the coordinate views built on them.

Positions are in Bohr radii with the nucleus fixed at the origin.  Every
function here is pure; :class:`ElectronConfig` holds a read-only array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

MAX_ELECTRONS = 4


class ConfigurationError(ValueError):
    """Raised for malformed electron configurations."""


@dataclass(frozen=True)
class ElectronConfig:
    """Positions of ``n`` electrons, shape ``(n, 3)``."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigurationError(f"positions must have shape (n, 3), got {pos.shape}")
        if not 1 <= pos.shape[0] <= MAX_ELECTRONS:
            raise ConfigurationError(f"electron count must be in 1..{MAX_ELECTRONS}, got {pos.shape[0]}")
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ElectronConfig):
            return NotImplemented
        return np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash(self.positions.tobytes())


@dataclass(frozen=True)
class SphericalView:
    """Per-electron ``r``, ``cos(theta)``, ``phi`` and pair cosines.

    ``cos_pair[(i, j)]`` (0-based, ``i < j``) is the cosine of the angle between
    electrons ``i`` and ``j`` seen from the nucleus.  Electrons sitting on the
    nucleus get ``cos_theta = phi = 0`` and a zero pair cosine, and are listed
    in ``degenerate``.  ``sin_theta`` is kept alongside ``cos_theta`` because
    recovering it as ``sqrt(1 - cos^2)`` loses precision near the poles.
    """

    r: np.ndarray
    cos_theta: np.ndarray
    phi: np.ndarray
    cos_pair: dict = field(default_factory=dict)
    degenerate: tuple = ()
    sin_theta: np.ndarray | None = None

    def cos_between(self, i: int, j: int) -> float:
        """Pair cosine for 0-based electron indices in either order."""
        if i == j:
            return 1.0
        return self.cos_pair[(min(i, j), max(i, j))]


@dataclass(frozen=True)
class CylindricalView:
    rho: np.ndarray
    z: np.ndarray
    phi: np.ndarray


def _as_positions(c) -> np.ndarray:
    return c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)


def to_spherical(c: ElectronConfig) -> SphericalView:
    pos = _as_positions(c)
    r = np.linalg.norm(pos, axis=1)
    degenerate = tuple(int(i) for i in np.flatnonzero(r == 0.0))
    safe = np.where(r > 0.0, r, 1.0)
    cos_theta = np.where(r > 0.0, pos[:, 2] / safe, 0.0)
    cos_theta = np.clip(cos_theta, -1.0, 1.0)
    sin_theta = np.where(r > 0.0, np.hypot(pos[:, 0], pos[:, 1]) / safe, 0.0)
    phi = np.where(r > 0.0, np.arctan2(pos[:, 1], pos[:, 0]), 0.0)
    cos_pair = {}
    for i, j in combinations(range(len(pos)), 2):
        if r[i] > 0.0 and r[j] > 0.0:
            cos_pair[(i, j)] = float(np.clip(pos[i] @ pos[j] / (r[i] * r[j]), -1.0, 1.0))
        else:
            cos_pair[(i, j)] = 0.0
    return SphericalView(r=r, cos_theta=cos_theta, phi=phi, cos_pair=cos_pair, degenerate=degenerate, sin_theta=sin_theta)


def from_spherical(view: SphericalView) -> ElectronConfig:
    sin_theta = view.sin_theta
    if sin_theta is None:
        sin_theta = np.sqrt(np.clip(1.0 - view.cos_theta**2, 0.0, None))
    pos = np.stack(
        [
            view.r * sin_theta * np.cos(view.phi),
            view.r * sin_theta * np.sin(view.phi),
            view.r * view.cos_theta,
        ],
        axis=1,
    )
    return ElectronConfig(pos)


def to_cylindrical(c: ElectronConfig) -> CylindricalView:
    pos = _as_positions(c)
    rho = np.hypot(pos[:, 0], pos[:, 1])
    phi = np.arctan2(pos[:, 1], pos[:, 0])
    return CylindricalView(rho=rho, z=pos[:, 2].copy(), phi=phi)


def from_cylindrical(view: CylindricalView) -> ElectronConfig:
    pos = np.stack([view.rho * np.cos(view.phi), view.rho * np.sin(view.phi), view.z], axis=1)
    return ElectronConfig(pos)


def pair_distance(c: ElectronConfig, i: int, j: int) -> float:
    """Distance between electrons ``i`` and ``j`` (1-based labels)."""
    if i == j:
        raise ValueError(f"pair_distance needs two distinct electrons, got ({i}, {j})")
    pos = _as_positions(c)
    n = len(pos)
    if not (1 <= i <= n and 1 <= j <= n):
        raise IndexError(f"electron labels must be in 1..{n}")
    return float(np.linalg.norm(pos[i - 1] - pos[j - 1]))


def random_config(rng: np.random.Generator, n: int, scale: float = 1.5) -> ElectronConfig:
    """Gaussian-distributed test configuration."""
    return ElectronConfig(scale * rng.standard_normal((n, 3)))
