"""Signed node functions, on-node predicates and nodal-cell bookkeeping.

Each :class:`StateSymmetry` carries the signed functions whose common zero set
is the symmetry-required node of the state, plus what is needed to check that
node numerically: a projector built from group operators and a sampler for
the surface on which that projector annihilates every function of the right
type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from nodalgfk.configuration import ElectronConfig
from nodalgfk.symmetry import (
    GroupOperatorSum,
    SymmetryOp,
    antisymmetrizer,
    apply_operator_sum,
    operator_scale,
    random_smooth_functions,
    symmetrizer,
    young_operator_li,
)

DEFAULT_TOL = 1e-9


class NodeError(ValueError):
    """Raised for configurations that sit on a node where a cell is required."""


def _pos(c) -> np.ndarray:
    return c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)


def _r(pos, i):
    return np.linalg.norm(pos[..., i, :], axis=-1)


def _cos_theta(pos, i):
    r = _r(pos, i)
    return np.where(r > 0.0, pos[..., i, 2] / np.where(r > 0.0, r, 1.0), 0.0)


def _cos_pair(pos, i, j):
    ri, rj = _r(pos, i), _r(pos, j)
    d = ri * rj
    dot = np.einsum("...k,...k->...", pos[..., i, :], pos[..., j, :])
    return np.where(d > 0.0, dot / np.where(d > 0.0, d, 1.0), 0.0)


# node components, vectorised over leading axes
def _he_3s1(pos):
    return (_r(pos, 0) - _r(pos, 1),)


def _he_1p1(pos):
    return (_cos_theta(pos, 0) + _cos_theta(pos, 1),)


def _he_3p(pos):
    return (_cos_theta(pos, 0) - _cos_theta(pos, 1),)


def _li_2s(pos):
    return (_r(pos, 0) - _r(pos, 1), _cos_pair(pos, 0, 2) - _cos_pair(pos, 1, 2))


def _li_2p(pos):
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    return (
        z[..., 0] - z[..., 1],
        _r(pos, 0) - _r(pos, 1),
        (x[..., 0] - x[..., 1]) * x[..., 2] + (y[..., 0] - y[..., 1]) * y[..., 2],
    )


# rotational invariants used to build test functions of the right type
def s_invariants(pos):
    """``(r_i..., cos pair...)`` -- invariant under any simultaneous rotation."""
    n = pos.shape[-2]
    feats = [_r(pos, i) for i in range(n)]
    feats += [_cos_pair(pos, i, j) for i in range(n) for j in range(i + 1, n)]
    return np.stack(feats, axis=-1)


def axial_invariants(pos):
    """``(rho_i..., z_i..., cos(phi_i - phi_j)...)`` -- invariant under rotation about z."""
    n = pos.shape[-2]
    rho = np.hypot(pos[..., 0], pos[..., 1])
    feats = [rho[..., i] for i in range(n)] + [pos[..., i, 2] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = rho[..., i] * rho[..., j]
            dot = pos[..., i, 0] * pos[..., j, 0] + pos[..., i, 1] * pos[..., j, 1]
            feats.append(np.where(d > 0.0, dot / np.where(d > 0.0, d, 1.0), 0.0))
    return np.stack(feats, axis=-1)


def _random_rotations(rng, m):
    from scipy.spatial.transform import Rotation

    return Rotation.random(m, random_state=rng).as_matrix()


def _surface_r_equal(rng, m):
    x1 = 1.5 * rng.standard_normal((m, 3))
    x2 = np.einsum("mij,mj->mi", _random_rotations(rng, m), x1)
    return np.stack([x1, x2], axis=1)


def _surface_axial(rng, m, z_sign):
    rho = rng.uniform(0.05, 3.0, m)
    z = rng.normal(0.0, 1.5, m)
    phi1, phi2 = rng.uniform(-np.pi, np.pi, (2, m))
    e1 = np.stack([rho * np.cos(phi1), rho * np.sin(phi1), z], axis=1)
    e2 = np.stack([rho * np.cos(phi2), rho * np.sin(phi2), z_sign * z], axis=1)
    return np.stack([e1, e2], axis=1)


def _surface_li_2s(rng, m):
    x3 = 1.5 * rng.standard_normal((m, 3))
    x1 = 1.5 * rng.standard_normal((m, 3))
    angle = rng.uniform(-np.pi, np.pi, m)
    from scipy.spatial.transform import Rotation

    axis = x3 / np.linalg.norm(x3, axis=1, keepdims=True)
    rot = Rotation.from_rotvec(axis * angle[:, None]).as_matrix()
    x2 = np.einsum("mij,mj->mi", rot, x1)
    return np.stack([x1, x2, x3], axis=1)


def _surface_li_2p(rng, m):
    rho = rng.uniform(0.05, 3.0, m)
    z = rng.normal(0.0, 1.5, m)
    phi3 = rng.uniform(-np.pi, np.pi, m)
    delta = rng.uniform(-np.pi, np.pi, m)
    e1 = np.stack([rho * np.cos(phi3 + delta), rho * np.sin(phi3 + delta), z], axis=1)
    e2 = np.stack([rho * np.cos(phi3 - delta), rho * np.sin(phi3 - delta), z], axis=1)
    rho3 = rng.uniform(0.05, 3.0, m)
    e3 = np.stack([rho3 * np.cos(phi3), rho3 * np.sin(phi3), rng.normal(0.0, 1.5, m)], axis=1)
    return np.stack([e1, e2, e3], axis=1)


def _half_turn_x(n):
    return GroupOperatorSum(((1.0, SymmetryOp.identity(n)), (-1.0, SymmetryOp.rotation(n, (1, 0, 0), np.pi))))


@dataclass(frozen=True)
class StateSymmetry:
    atom: str
    term: str
    n: int
    node_functions: Callable | None
    closed_surface: bool
    equations: str
    n_components: int = 0
    projector: GroupOperatorSum | None = field(default=None, repr=False, compare=False)
    features: Callable | None = field(default=None, repr=False, compare=False)
    surface: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def nodeless(self) -> bool:
        return self.node_functions is None

    def components(self, c) -> tuple:
        """Node components for one configuration or a batch."""
        pos = _pos(c)
        if pos.shape[-2] != self.n:
            raise ValueError(f"{self.term} needs {self.n} electrons, got {pos.shape[-2]}")
        if self.node_functions is None:
            return ()
        return self.node_functions(pos)

    def primary(self, c):
        """The absorbing coordinate used by walks and :func:`crossing`."""
        comps = self.components(c)
        return comps[0] if comps else None


def _build_states() -> dict:
    states = [
        StateSymmetry("hydrogen", "H_1s", 1, None, True, "nodeless"),
        StateSymmetry("helium", "He_1S0", 2, None, True, "nodeless"),
        StateSymmetry(
            "helium", "He_3S1", 2, _he_3s1, True, "r1 = r2", 1,
            projector=antisymmetrizer(2), features=s_invariants, surface=_surface_r_equal,
        ),
        StateSymmetry(
            "helium", "He_1P1", 2, _he_1p1, True, "cos(theta1) = -cos(theta2)", 1,
            projector=symmetrizer(2) * _half_turn_x(2), features=axial_invariants,
            surface=partial(_surface_axial, z_sign=-1.0),
        ),
        StateSymmetry(
            "helium", "He_3P", 2, _he_3p, True, "cos(theta1) = cos(theta2)", 1,
            projector=antisymmetrizer(2) * _half_turn_x(2), features=axial_invariants,
            surface=partial(_surface_axial, z_sign=1.0),
        ),
        StateSymmetry(
            "lithium", "Li_2S", 3, _li_2s, True, "r1 = r2 and cos(theta13) = cos(theta23)", 2,
            projector=young_operator_li(), features=s_invariants, surface=_surface_li_2s,
        ),
        StateSymmetry(
            "lithium", "Li_2P", 3, _li_2p, False,
            "z1 = z2, r1 = r2 and (x1 - x2) x3 + (y1 - y2) y3 = 0", 3,
            projector=young_operator_li(), features=axial_invariants, surface=_surface_li_2p,
        ),
    ]
    return {s.term: s for s in states}


STATES = _build_states()


def get_state(label: str) -> StateSymmetry:
    try:
        return STATES[label]
    except KeyError:
        raise KeyError(f"unknown state {label!r}; known: {', '.join(STATES)}") from None


def node_function(s: StateSymmetry, c: ElectronConfig):
    """Signed node value: a float for one-component nodes, a tuple otherwise.

    Nodeless states return an empty tuple.
    """
    comps = s.components(c)
    vals = tuple(float(v) for v in comps)
    return vals[0] if len(vals) == 1 else vals


def on_node(s: StateSymmetry, c: ElectronConfig, tol: float = DEFAULT_TOL) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    comps = s.components(c)
    if not comps:
        return False
    return all(abs(float(v)) <= tol for v in comps)


def crossing(s: StateSymmetry, a, b, secondary_tol: float | None = None):
    """Endpoint test for a node crossing on the step ``a -> b``.

    Only the primary component is compared.  With ``secondary_tol`` set, a
    primary sign change only counts if the remaining components, linearly
    interpolated to the crossing point, are within ``secondary_tol`` of zero.
    Works on single configurations or batches.
    """
    pa, pb = _pos(a), _pos(b)
    if pa.shape[-2] != pb.shape[-2]:
        raise ValueError("electron counts differ")
    ca, cb = s.components(pa), s.components(pb)
    if not ca:
        out = np.zeros(np.broadcast_shapes(pa.shape[:-2], pb.shape[:-2]), dtype=bool)
        return bool(out) if out.ndim == 0 else out
    flip = np.sign(ca[0]) != np.sign(cb[0])
    if secondary_tol is not None and len(ca) > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(flip, ca[0] / (ca[0] - cb[0]), 0.0)
        mid = pa + frac[..., None, None] * (pb - pa)
        rest = s.components(mid)[1:]
        small = np.all([np.abs(v) <= secondary_tol for v in rest], axis=0)
        flip = flip & small
    return bool(flip) if np.ndim(flip) == 0 else flip


def nodal_cell(s: StateSymmetry, c: ElectronConfig, tol: float = DEFAULT_TOL) -> tuple:
    """Sign vector of the node components at ``c``."""
    comps = s.components(c)
    if any(abs(float(v)) <= tol for v in comps):
        raise NodeError(f"configuration is on a node component of {s.term}")
    return tuple(int(np.sign(float(v))) for v in comps)


def sample_surface(s: StateSymmetry, rng: np.random.Generator, m: int) -> np.ndarray:
    """``m`` configurations on the surface where the state's projector annihilates."""
    if s.surface is None:
        raise ValueError(f"{s.term} has no node surface")
    return s.surface(rng, m)


def sample_off_node(s: StateSymmetry, rng: np.random.Generator, m: int, margin: float = 0.1) -> np.ndarray:
    """Rejection-sample ``m`` configurations whose node components are not all within ``margin``."""
    out = []
    while sum(len(o) for o in out) < m:
        pos = 1.5 * rng.standard_normal((4 * m, s.n, 3))
        comps = np.abs(np.stack(s.components(pos), axis=-1))
        out.append(pos[np.max(comps, axis=-1) > margin])
    return np.concatenate(out)[:m]


@dataclass(frozen=True)
class NodeVerification:
    state: str
    nodeless: bool
    n_on: int
    n_off: int
    on_node_max: float
    off_node_margin: float
    predicate_agrees: bool
    on_tol: float
    off_tol: float

    @property
    def passed(self) -> bool:
        if self.nodeless:
            return True
        return self.on_node_max < self.on_tol and self.off_node_margin > self.off_tol and self.predicate_agrees

    def lines(self) -> list:
        if self.nodeless:
            return [f"{self.state}: nodeless: no on-node surface to test", f"{self.state}: PASS"]
        return [
            f"{self.state}: on-node configs={self.n_on} max |projected|/scale={self.on_node_max:.3e} (< {self.on_tol:g})",
            f"{self.state}: off-node configs={self.n_off} min margin={self.off_node_margin:.3e} (> {self.off_tol:g})",
            f"{self.state}: node predicate holds on projector surface: {self.predicate_agrees}",
            f"{self.state}: {'PASS' if self.passed else 'FAIL'}",
        ]


def verify_nodes(
    s: StateSymmetry,
    samples: int = 10_000,
    seed: int = 0,
    n_functions: int = 5,
    on_tol: float = 1e-9,
    off_tol: float = 1e-3,
) -> NodeVerification:
    """Projector annihilation on the node surface versus off it.

    Random smooth functions of the state's rotational invariants are pushed
    through the state's projector.  On the sampled surface the result must
    vanish relative to the operator scale; off the node the largest relative
    value over the functions must stay above ``off_tol``.
    """
    if s.nodeless:
        return NodeVerification(s.term, True, 0, 0, 0.0, np.inf, True, on_tol, off_tol)
    rng = np.random.default_rng(seed)
    on = sample_surface(s, rng, samples)
    off = sample_off_node(s, rng, max(samples // 10, 100))
    dim = s.features(on[:1]).shape[-1]
    funcs = random_smooth_functions(seed + 1, n_functions, dim, features=s.features)
    on_rel = np.zeros(len(on))
    off_rel = np.zeros(len(off))
    for f in funcs:
        on_rel = np.maximum(on_rel, np.abs(apply_operator_sum(s.projector, f, on)) / operator_scale(s.projector, f, on))
        off_rel = np.maximum(off_rel, np.abs(apply_operator_sum(s.projector, f, off)) / operator_scale(s.projector, f, off))
    comps = np.abs(np.stack(s.components(on), axis=-1))
    agrees = bool(np.all(comps <= 1e-9 * (1.0 + np.linalg.norm(on, axis=(-2, -1)))[..., None]))
    return NodeVerification(
        s.term, False, len(on), len(off), float(on_rel.max()), float(off_rel.min()), agrees, on_tol, off_tol
    )
