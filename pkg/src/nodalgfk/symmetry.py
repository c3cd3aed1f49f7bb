"""Group elements, operator sums and numerical eigengroup tests.

A :class:`SymmetryOp` is a permutation of electron labels composed with one
rotation applied to every electron.  Operators act on functions by coordinate
substitution, ``(O f)(c) = f(O^-1 c)``, so that ``O_a O_b = O_(a*b)`` and the
operator products (for instance ``(e - (12))(e + (13))``) can be
expanded term by term.

Permutations are written with 1-based cycle notation and composed right to
left: ``(12)*(13) == (132)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations as _all_permutations
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from nodalgfk.configuration import ElectronConfig

ORTHO_TOL = 1e-10


class OperatorEvaluationError(ArithmeticError):
    """A function returned a non-finite value at a transformed configuration."""

    def __init__(self, message, config=None):
        super().__init__(message)
        self.config = config


@dataclass(frozen=True)
class Permutation:
    """Bijection on electron labels; ``mapping[i]`` is the 0-based image of ``i``."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(k) for k in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ValueError(f"not a bijection: {m}")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def from_cycles(cls, n: int, *cycles: Sequence[int]) -> "Permutation":
        """Build from 1-based cycles, e.g. ``from_cycles(3, (1, 3, 2))``."""
        m = list(range(n))
        seen = set()
        for cyc in cycles:
            cyc = [k - 1 for k in cyc]
            if any(k < 0 or k >= n for k in cyc) or seen.intersection(cyc) or len(set(cyc)) != len(cyc):
                raise ValueError(f"invalid cycle {cyc} for n={n}")
            seen.update(cyc)
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                m[a] = b
        return cls(tuple(m))

    @property
    def n(self) -> int:
        return len(self.mapping)

    def cycles(self) -> list:
        """Non-trivial cycles, 1-based."""
        out, seen = [], set()
        for start in range(self.n):
            if start in seen:
                continue
            cyc, k = [], start
            while k not in seen:
                seen.add(k)
                cyc.append(k + 1)
                k = self.mapping[k]
            if len(cyc) > 1:
                out.append(tuple(cyc))
        return out

    def transpositions(self) -> list:
        """Decomposition into transpositions (1-based pairs)."""
        out = []
        for cyc in self.cycles():
            out.extend((cyc[0], c) for c in reversed(cyc[1:]))
        return out

    @property
    def parity(self) -> int:
        return -1 if len(self.transpositions()) % 2 else 1

    def __mul__(self, other: "Permutation") -> "Permutation":
        if other.n != self.n:
            raise ValueError("permutation sizes differ")
        return Permutation(tuple(self.mapping[other.mapping[i]] for i in range(self.n)))

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return Permutation(tuple(inv))

    def __str__(self):
        cyc = self.cycles()
        return "e" if not cyc else "".join("(" + "".join(map(str, c)) + ")" for c in cyc)


@dataclass(frozen=True, eq=False)
class Rotation3:
    """Proper rotation applied simultaneously to every electron."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        if not np.allclose(m.T @ m, np.eye(3), atol=ORTHO_TOL, rtol=0.0):
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation matrix must have determinant +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis, angle: float) -> "Rotation3":
        axis = np.asarray(axis, dtype=float)
        return cls(_ScipyRotation.from_rotvec(angle * axis / np.linalg.norm(axis)).as_matrix())

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation3":
        return cls(_ScipyRotation.random(random_state=rng).as_matrix())

    def __mul__(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, np.eye(3), atol=tol, rtol=0.0))

    def __eq__(self, other):
        return isinstance(other, Rotation3) and np.allclose(self.matrix, other.matrix, atol=1e-12, rtol=0.0)

    def __hash__(self):
        return hash(np.round(self.matrix, 10).tobytes())


@dataclass(frozen=True)
class SymmetryOp:
    perm: Permutation
    rot: Rotation3

    @classmethod
    def identity(cls, n: int) -> "SymmetryOp":
        return cls(Permutation.identity(n), Rotation3.identity())

    @classmethod
    def permutation(cls, n: int, *cycles) -> "SymmetryOp":
        return cls(Permutation.from_cycles(n, *cycles), Rotation3.identity())

    @classmethod
    def rotation(cls, n: int, axis, angle: float) -> "SymmetryOp":
        return cls(Permutation.identity(n), Rotation3.about_axis(axis, angle))

    @property
    def n(self) -> int:
        return self.perm.n

    def __mul__(self, other: "SymmetryOp") -> "SymmetryOp":
        return SymmetryOp(self.perm * other.perm, self.rot * other.rot)

    def inverse(self) -> "SymmetryOp":
        return SymmetryOp(self.perm.inverse(), self.rot.inverse())

    def is_identity(self, tol: float = 1e-12) -> bool:
        return self.perm == Permutation.identity(self.n) and self.rot.is_identity(tol)

    def __str__(self):
        rot = "" if self.rot.is_identity() else "R"
        return f"{self.perm}{rot}" if rot else str(self.perm)


def apply_op(op: SymmetryOp, c):
    """Move electrons: rotate every position, then relabel electron ``i`` as ``perm(i)``.

    Accepts an :class:`ElectronConfig` or an array of shape ``(..., n, 3)`` and
    returns the same kind.
    """
    pos = c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)
    if pos.shape[-2] != op.n:
        raise ValueError(f"operator acts on {op.n} electrons, configuration has {pos.shape[-2]}")
    rotated = pos @ op.rot.matrix.T
    out = np.empty_like(rotated)
    out[..., list(op.perm.mapping), :] = rotated
    return ElectronConfig(out) if isinstance(c, ElectronConfig) else out


@dataclass(frozen=True)
class GroupOperatorSum:
    """Real linear combination of group operators, ``sum_k coeff_k O_k``."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(a), op) for a, op in self.terms))

    def __mul__(self, other):
        if isinstance(other, GroupOperatorSum):
            return GroupOperatorSum(
                tuple((a * b, g * h) for a, g in self.terms for b, h in other.terms)
            ).simplified()
        return GroupOperatorSum(tuple((a * other, g) for a, g in self.terms))

    __rmul__ = __mul__

    def __add__(self, other: "GroupOperatorSum") -> "GroupOperatorSum":
        return GroupOperatorSum(self.terms + other.terms).simplified()

    def __sub__(self, other: "GroupOperatorSum") -> "GroupOperatorSum":
        return self + (-1.0) * other

    def simplified(self) -> "GroupOperatorSum":
        """Merge repeated operators and drop zero coefficients, keeping first-seen order."""
        merged: list = []
        for a, op in self.terms:
            for k, (b, other) in enumerate(merged):
                if other == op:
                    merged[k] = (a + b, other)
                    break
            else:
                merged.append((a, op))
        return GroupOperatorSum(tuple((a, op) for a, op in merged if a != 0.0))

    def labels(self) -> list:
        return [(a, str(op)) for a, op in self.terms]


def _perm_sum(n: int, signed: bool) -> GroupOperatorSum:
    terms = []
    for images in _all_permutations(range(n)):
        p = Permutation(images)
        terms.append((float(p.parity) if signed else 1.0, SymmetryOp(p, Rotation3.identity())))
    # identity first, then transpositions, then longer cycles
    terms.sort(key=lambda t: (len(t[1].perm.transpositions()), t[1].perm.mapping))
    return GroupOperatorSum(tuple(terms))


def symmetrizer(n: int) -> GroupOperatorSum:
    """Unnormalised ``sum_g g`` over all label permutations; ``e + (12)`` for two electrons."""
    if n < 2:
        raise ValueError("symmetrizer needs at least two electrons")
    return _perm_sum(n, signed=False)


def antisymmetrizer(n: int) -> GroupOperatorSum:
    """Unnormalised ``sum_g sgn(g) g``; ``e - (12)`` for two electrons."""
    if n < 2:
        raise ValueError("antisymmetrizer needs at least two electrons")
    return _perm_sum(n, signed=True)


def young_operator_li() -> GroupOperatorSum:
    """Young operator ``Q'P' = (e - (12))(e + (13)) = e - (12) + (13) - (132)`` for three electrons."""
    op = lambda *cyc: SymmetryOp.permutation(3, *cyc)  # noqa: E731
    return GroupOperatorSum(
        (
            (1.0, SymmetryOp.identity(3)),
            (-1.0, op((1, 2))),
            (1.0, op((1, 3))),
            (-1.0, op((1, 3, 2))),
        )
    )


def apply_operator_sum(P: GroupOperatorSum, f: Callable, c) -> np.ndarray | float:
    """Evaluate ``sum_k coeff_k f(O_k^-1 c)``.

    ``c`` may be a single configuration or a batch ``(..., n, 3)``; ``f`` must
    accept whatever :func:`apply_op` returns for it.
    """
    total = 0.0
    for coeff, op in P.terms:
        moved = apply_op(op.inverse(), c)
        val = f(moved)
        if not np.all(np.isfinite(val)):
            raise OperatorEvaluationError(f"non-finite function value under {op}", config=moved)
        total = total + coeff * val
    return total


def operator_scale(P: GroupOperatorSum, f: Callable, c) -> np.ndarray | float:
    """``sum_k |coeff_k| |f(O_k^-1 c)|``, the natural magnitude to compare a projection against."""
    return sum(abs(a) * np.abs(f(apply_op(op.inverse(), c))) for a, op in P.terms)


@dataclass(frozen=True)
class EigenResult:
    eigen: bool
    lam: int | None
    n_sample: int
    tol: float
    max_deviation: float


def eigengroup_test(op: SymmetryOp, f: Callable, sample: Iterable, tol: float = 1e-10) -> EigenResult:
    """Check ``f(op^-1 c) == lam * f(c)`` with one ``lam`` in {+1, -1} over a sample.

    This is a sampling statement, not a proof: the result records the sample
    size and tolerance it was obtained with.
    """
    sample = list(sample)
    if not sample:
        raise ValueError("empty sample")
    inv = op.inverse()
    fc = np.array([float(f(c)) for c in sample])
    fo = np.array([float(f(apply_op(inv, c))) for c in sample])
    scale = np.max(np.abs(fc))
    if scale == 0.0 or np.mean(np.abs(fc) > tol * scale) < 0.5:
        raise ValueError("function vanishes on more than half of the sample")
    best = None
    for lam in (1, -1):
        dev = float(np.max(np.abs(fo - lam * fc)) / scale)
        if best is None or dev < best[1]:
            best = (lam, dev)
    lam, dev = best
    if dev <= tol:
        return EigenResult(True, lam, len(sample), tol, dev)
    return EigenResult(False, None, len(sample), tol, dev)


def op_order(op: SymmetryOp, max_order: int = 24) -> int:
    g = op
    for k in range(1, max_order + 1):
        if g.is_identity(1e-9):
            return k
        g = g * op
    raise ValueError(f"operator has no finite order up to {max_order}")


def fixed_point(op: SymmetryOp, c):
    """Project ``c`` onto the fixed-point set of ``op`` by averaging its orbit."""
    k = op_order(op)
    pos = c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)
    acc = np.zeros_like(pos)
    moved = pos
    for _ in range(k):
        acc = acc + moved
        moved = apply_op(op, moved)
    acc = acc / k
    return ElectronConfig(acc) if isinstance(c, ElectronConfig) else acc


class RandomSmoothFunction:
    """Anisotropic Gaussian times a random quadratic polynomial.

    The variables are either flattened Cartesian coordinates (``features=None``)
    or the output of ``features(positions)``, which lets a test function carry
    a chosen invariance.
    """

    def __init__(self, rng: np.random.Generator, dim: int, features: Callable | None = None, width: float = 0.15):
        self.features = features
        self.c0 = rng.normal()
        self.c1 = rng.normal(size=dim)
        q = rng.normal(size=(dim, dim))
        self.q = 0.5 * (q + q.T)
        self.a = width * rng.uniform(0.5, 1.5, size=dim)
        self.centre = 0.3 * rng.normal(size=dim)

    def __call__(self, c):
        pos = c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)
        if self.features is None:
            x = pos.reshape(pos.shape[:-2] + (-1,))
        else:
            x = self.features(pos)
        u = x - self.centre
        poly = self.c0 + u @ self.c1 + np.einsum("...i,ij,...j->...", u, self.q, u)
        val = poly * np.exp(-np.einsum("...i,i->...", u * u, self.a))
        return float(val) if np.ndim(val) == 0 else val


def random_smooth_functions(seed: int, count: int, dim: int, features: Callable | None = None) -> list:
    rng = np.random.default_rng(seed)
    return [RandomSmoothFunction(rng, dim, features) for _ in range(count)]


def normalized(P: GroupOperatorSum, order: int) -> GroupOperatorSum:
    return P * (1.0 / math.factorial(order))


def idempotence_defect(P: GroupOperatorSum, k: float, funcs: Iterable, points) -> float:
    """Largest ``|P(P f) - k P f|`` over functions and points, relative to ``max |P f|``.

    ``P P = k P`` at operator level implies a vanishing defect; this checks the
    statement by action on functions instead.
    """
    worst = 0.0
    for f in funcs:
        once = apply_operator_sum(P, f, points)
        twice = apply_operator_sum(P, lambda c, f=f: apply_operator_sum(P, f, c), points)
        scale = max(float(np.max(np.abs(once))), 1e-300)
        worst = max(worst, float(np.max(np.abs(twice - k * once))) / scale)
    return worst
