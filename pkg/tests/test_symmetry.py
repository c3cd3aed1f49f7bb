import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodalgfk.configuration import ElectronConfig
from nodalgfk.nodal import s_invariants
from nodalgfk.symmetry import (
    GroupOperatorSum,
    OperatorEvaluationError,
    Permutation,
    Rotation3,
    SymmetryOp,
    antisymmetrizer,
    apply_op,
    apply_operator_sum,
    eigengroup_test,
    fixed_point,
    idempotence_defect,
    op_order,
    random_smooth_functions,
    symmetrizer,
    young_operator_li,
)
from nodalgfk.trial import TrialWavefunction, value

perms3 = st.permutations(range(3)).map(Permutation)
perms4 = st.permutations(range(4)).map(Permutation)


def compose_oracle(p, q):
    # (p*q)(i) = p(q(i)) written out on tuples
    return tuple(p[q[i]] for i in range(len(q)))


@settings(max_examples=200)
@given(perms4, perms4, perms4)
def test_permutation_group_axioms(a, b, c):
    e = Permutation.identity(4)
    assert (a * b) * c == a * (b * c)
    assert a * e == a == e * a
    assert a * a.inverse() == e
    assert (a * b).mapping == compose_oracle(a.mapping, b.mapping)
    assert (a * b).parity == a.parity * b.parity


def test_cycle_convention():
    p = lambda *c: Permutation.from_cycles(3, *c)  # noqa: E731
    assert p((1, 2)) * p((1, 3)) == p((1, 3, 2))
    assert str(p((1, 3, 2))) == "(132)"
    assert str(Permutation.identity(3)) == "e"
    assert p((1, 2, 3)).parity == 1 and p((1, 2)).parity == -1


@settings(max_examples=100)
@given(perms4)
def test_cycles_round_trip(p):
    assert Permutation.from_cycles(4, *p.cycles()) == p


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation3(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Rotation3(2 * np.eye(3))


def test_apply_op_composition_law(rng):
    worst = 0.0
    for _ in range(200):
        a = SymmetryOp(Permutation(tuple(rng.permutation(3))), Rotation3.random(rng))
        b = SymmetryOp(Permutation(tuple(rng.permutation(3))), Rotation3.random(rng))
        c = ElectronConfig(rng.normal(size=(3, 3)))
        lhs = apply_op(a * b, c).positions
        rhs = apply_op(a, apply_op(b, c)).positions
        worst = max(worst, np.abs(lhs - rhs).max())
    assert worst < 1e-12


def test_identity_op_is_trivial(rng):
    c = ElectronConfig(rng.normal(size=(2, 3)))
    assert apply_op(SymmetryOp.identity(2), c) == c


def test_apply_op_moves_labels():
    c = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    out = apply_op(SymmetryOp.permutation(3, (1, 2, 3)), c)
    # electron 1's position now carries label 2, and so on
    assert np.array_equal(out[:, 0], [3.0, 1.0, 2.0])


def test_operator_action_is_a_representation(rng):
    f = random_smooth_functions(3, 1, 9)[0]
    pts = rng.normal(size=(50, 3, 3))
    for _ in range(20):
        a = SymmetryOp(Permutation(tuple(rng.permutation(3))), Rotation3.random(rng))
        b = SymmetryOp(Permutation(tuple(rng.permutation(3))), Rotation3.random(rng))
        Pa, Pb = GroupOperatorSum(((1.0, a),)), GroupOperatorSum(((1.0, b),))
        nested = apply_operator_sum(Pa, lambda c: apply_operator_sum(Pb, f, c), pts)
        direct = apply_operator_sum(Pa * Pb, f, pts)
        assert np.allclose(nested, direct, rtol=1e-12, atol=1e-14)


def test_antisymmetrizer_gives_determinant(rng):
    # f = phi_1(r1) phi_2(r2) phi_3(r3); the signed sum must equal det[phi_i(r_j)]
    ks = rng.normal(size=(3, 3))

    def phi(i, r):
        return np.exp(-0.3 * np.sum((r - ks[i]) ** 2, axis=-1)) * (1 + r[..., 0] * i)

    def f(c):
        pos = c.positions if isinstance(c, ElectronConfig) else c
        return phi(0, pos[..., 0, :]) * phi(1, pos[..., 1, :]) * phi(2, pos[..., 2, :])

    A = antisymmetrizer(3)
    assert len(A.terms) == 6
    for _ in range(100):
        pos = rng.normal(size=(3, 3))
        M = np.array([[phi(i, pos[j]) for j in range(3)] for i in range(3)])
        assert apply_operator_sum(A, f, pos) == pytest.approx(np.linalg.det(M), rel=1e-10, abs=1e-14)


def test_symmetrizer_and_antisymmetrizer_idempotent():
    for n in (2, 3):
        k = float(np.prod(range(1, n + 1)))
        for P in (symmetrizer(n), antisymmetrizer(n)):
            sq = (P * P).simplified()
            scaled = (k * P).simplified()
            assert sorted(sq.labels()) == sorted(scaled.labels())


def test_young_operator_expansion():
    Y = young_operator_li()
    assert Y.labels() == [(1.0, "e"), (-1.0, "(12)"), (1.0, "(13)"), (-1.0, "(132)")]
    P = GroupOperatorSum(((1.0, SymmetryOp.identity(3)), (-1.0, SymmetryOp.permutation(3, (1, 2)))))
    Q = GroupOperatorSum(((1.0, SymmetryOp.identity(3)), (1.0, SymmetryOp.permutation(3, (1, 3)))))
    assert sorted((P * Q).labels()) == sorted(Y.labels())


def test_young_operator_square_is_three_times_itself_algebraically():
    Y = young_operator_li()
    assert sorted((Y * Y).labels()) == sorted((3.0 * Y).labels())


def test_young_operator_idempotence_by_action(rng):
    funcs = random_smooth_functions(11, 50, 9)
    pts = rng.normal(scale=1.5, size=(100, 3, 3))
    assert idempotence_defect(young_operator_li(), 3.0, funcs, pts) < 1e-10


def test_antisymmetrized_s_function_vanishes_at_equal_radii(rng):
    P = antisymmetrizer(2)
    funcs = random_smooth_functions(5, 10, 3, features=s_invariants)
    r = rng.uniform(0.1, 3.0, 500)
    u1, u2 = (v / np.linalg.norm(v, axis=1, keepdims=True) for v in rng.normal(size=(2, 500, 3)))
    pts = np.stack([r[:, None] * u1, r[:, None] * u2], axis=1)
    for f in funcs:
        assert np.max(np.abs(apply_operator_sum(P, f, pts))) < 1e-12


def test_non_finite_values_raise_with_config():
    f = lambda c: np.inf  # noqa: E731
    c = ElectronConfig(np.ones((2, 3)))
    with pytest.raises(OperatorEvaluationError) as info:
        apply_operator_sum(symmetrizer(2), f, c)
    assert info.value.config is not None


def _vii(params=(2.1, 0.9)):
    t = TrialWavefunction("he_Pz_VII", params)
    return lambda c: value(t, c)


def test_vii_is_odd_under_half_turn_about_x(rng):
    sample = [ElectronConfig(rng.normal(size=(2, 3))) for _ in range(1000)]
    res = eigengroup_test(SymmetryOp.rotation(2, (1, 0, 0), np.pi), _vii(), sample)
    assert res.eigen and res.lam == -1 and res.n_sample == 1000


def test_vii_is_even_under_swap(rng):
    sample = [ElectronConfig(rng.normal(size=(2, 3))) for _ in range(200)]
    res = eigengroup_test(SymmetryOp.permutation(2, (1, 2)), _vii(), sample)
    assert res.eigen and res.lam == 1


def test_generic_function_is_not_an_eigenfunction(rng):
    f = random_smooth_functions(2, 1, 6, features=None)[0]
    sample = [ElectronConfig(rng.normal(scale=0.3, size=(2, 3))) for _ in range(200)]
    res = eigengroup_test(SymmetryOp.rotation(2, (0, 0, 1), 0.7), f, sample)
    assert not res.eigen and res.lam is None


def test_fixed_points_of_odd_operator_are_nodes(rng):
    op = SymmetryOp.rotation(2, (1, 0, 0), np.pi)
    assert op_order(op) == 2
    f = _vii()
    for _ in range(200):
        c = fixed_point(op, ElectronConfig(rng.normal(size=(2, 3))))
        assert np.allclose(apply_op(op, c).positions, c.positions, atol=1e-12)
        assert abs(f(c)) < 1e-12


def test_fixed_points_of_swap_rotation_combination(rng):
    # (12) combined with a half turn: odd for VII, so its fixed points must be nodes too
    op = SymmetryOp(Permutation.from_cycles(2, (1, 2)), Rotation3.about_axis((0, 1, 0), np.pi))
    f = _vii()
    sample = [ElectronConfig(rng.normal(size=(2, 3))) for _ in range(300)]
    assert eigengroup_test(op, f, sample).lam == -1
    for c in sample[:100]:
        assert abs(f(fixed_point(op, c))) < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_symmetrizer_term_count(n):
    assert len(symmetrizer(n).terms) == len(list(itertools.permutations(range(n))))
