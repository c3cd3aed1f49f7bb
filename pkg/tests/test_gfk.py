import numpy as np
import pytest

from nodalgfk.gfk import (
    AllPathsKilledError,
    WalkConfigurationError,
    WalkSpec,
    WeightOverflowError,
    ZtRow,
    ZtSeries,
    equilibrate,
    make_spec,
    run_walk,
    survival_fraction,
)
from nodalgfk.nodal import STATES
from nodalgfk.trial import Hamiltonian, TrialWavefunction

H1 = TrialWavefunction("hydrogen_1s", (1.0,))
H08 = TrialWavefunction("hydrogen_1s", (0.8,))
VII = TrialWavefunction("he_Pz_VII", (2.18, 0.77))
TRIPLET = TrialWavefunction("he_3S1_antisym", (2.1, 0.6))
SHORT = (1.0, 2.0)


def test_spec_validation():
    with pytest.raises(WalkConfigurationError):
        make_spec("H_1s", H1, 1, -0.5, scale=30, dt=0.1)
    with pytest.raises(WalkConfigurationError):
        make_spec("H_1s", H1, 1, -0.5, checkpoints=(8.01,))
    with pytest.raises(WalkConfigurationError):
        make_spec("H_1s", H1, 1, -0.5, checkpoints=(16.0, 8.0))
    with pytest.raises(WalkConfigurationError):
        make_spec("H_1s", H1, 1, -0.5, n_paths=0)
    with pytest.raises(WalkConfigurationError):
        make_spec("H_1s", H1, 1, -0.5, checkpoints=(8.0,), t_max=4.0)
    spec = make_spec("H_1s", H1, 1, -0.5, scale=None, dt=0.05, checkpoints=(1.0,))
    assert spec.checkpoint_steps == (20,)
    assert make_spec("H_1s", H1, 1, -0.5).dt == pytest.approx(1 / 30)


def test_trial_must_match_state():
    with pytest.raises(WalkConfigurationError):
        run_walk(make_spec("He_3S1", VII, 2, -2.0, n_paths=10, checkpoints=SHORT))
    with pytest.raises(WalkConfigurationError):
        run_walk(make_spec("He_1S0", VII, 2, -2.0, n_paths=10, checkpoints=SHORT))
    with pytest.raises(WalkConfigurationError):
        run_walk(make_spec("H_1s", VII, 2, -2.0, n_paths=10, checkpoints=SHORT))


def test_series_invariants():
    with pytest.raises(ValueError):
        ZtSeries((ZtRow(2.0, 1.0, 0.1, 5), ZtRow(1.0, 1.0, 0.1, 5)), 5, 0.0)
    with pytest.raises(ValueError):
        ZtSeries((ZtRow(1.0, 1.0, 0.1, 4), ZtRow(2.0, 1.0, 0.1, 5)), 5, 0.0)
    with pytest.raises(ValueError):
        ZtSeries((ZtRow(1.0, -1.0, 0.1, 4),), 5, 0.0)


def test_equilibrated_hydrogen_mean_radius():
    spec = make_spec("H_1s", H1, 1, -0.5, n_paths=20_000, seed=5)
    ens = equilibrate(spec)
    r = np.linalg.norm(ens.positions[:, 0], axis=-1)
    # <r> = 3/(2 alpha) under e^{-2 alpha r}
    assert abs(r.mean() - 1.5) < 3 * r.std() / np.sqrt(len(r))
    assert 0.4 <= ens.acceptance <= 0.6


@pytest.mark.parametrize("cell_sign", [1, -1])
def test_triplet_walkers_confined_to_one_cell(cell_sign):
    spec = make_spec("He_3S1", TRIPLET, 2, -2.1, n_paths=5000, seed=1, cell_sign=cell_sign)
    ens = equilibrate(spec)
    r = np.linalg.norm(ens.positions, axis=-1)
    signs = np.sign(r[:, 0] - r[:, 1])
    assert np.all(signs == signs[0])
    assert np.all(np.sign(TRIPLET.evaluate(ens.positions).node) == cell_sign)


def test_equilibrate_is_deterministic():
    spec = make_spec("He_1P1", VII, 2, -2.06, n_paths=3000, seed=9)
    a, b = equilibrate(spec), equilibrate(spec)
    assert np.array_equal(a.positions, b.positions)


def test_walk_from_supplied_ensemble_equals_self_equilibrated():
    spec = make_spec("He_1P1", VII, 2, -2.06, n_paths=5000, checkpoints=SHORT, seed=2)
    assert run_walk(spec, ensemble=equilibrate(spec)).rows == run_walk(spec).rows


def test_walk_independent_of_worker_count():
    spec = make_spec("He_1P1", VII, 2, -2.06, n_paths=9000, checkpoints=SHORT, seed=3)
    assert run_walk(spec, workers=1).rows == run_walk(spec, workers=3).rows


def test_perfect_trial_fixed_point():
    spec = make_spec("H_1s", H1, 1, -0.5, n_paths=4096, seed=0)
    series = run_walk(spec)
    assert np.max(np.abs(series.zt - 1.0)) < 1e-12
    assert all(survival_fraction(series, t) == 1.0 for t in series.t)


def test_survival_fraction_contract():
    spec = make_spec("He_1P1", VII, 2, -2.06, n_paths=4096, checkpoints=(0.5, 1.0, 1.5, 2.0), seed=4)
    series = run_walk(spec)
    fr = [survival_fraction(series, t) for t in series.t]
    assert survival_fraction(series, 0.0) == 1.0
    assert all(0.0 <= f <= 1.0 for f in fr)
    assert fr == sorted(fr, reverse=True) and fr[-1] < 1.0
    with pytest.raises(KeyError):
        survival_fraction(series, 0.7)
    nodeless = run_walk(make_spec("He_1S0", TrialWavefunction("he_1S0_product", (1.6875,)), 2, -2.85, n_paths=2000, checkpoints=SHORT))
    assert [survival_fraction(nodeless, t) for t in nodeless.t] == [1.0, 1.0]


def test_debug_mode_sees_no_cell_changes():
    spec = make_spec("He_1P1", VII, 2, -2.06, n_paths=2000, checkpoints=SHORT, seed=6, debug=True)
    series = run_walk(spec)
    assert series.diagnostics["cell_violations"] == 0
    assert series.diagnostics["node_kills"] > 0


def test_sigma_scales_with_inverse_root_paths():
    small = run_walk(make_spec("H_1s", H08, 1, -0.48, n_paths=8192, checkpoints=(2.0, 4.0), seed=7))
    large = run_walk(make_spec("H_1s", H08, 1, -0.48, n_paths=16384, checkpoints=(2.0, 4.0), seed=8))
    ratio = large.sigma / small.sigma
    assert np.all(np.abs(ratio / (1 / np.sqrt(2)) - 1) < 0.2)


def test_relative_sigma_grows_with_time():
    series = run_walk(make_spec("H_1s", H08, 1, -0.48, n_paths=4096, checkpoints=(2.0, 4.0, 8.0, 16.0), seed=1))
    rel = series.sigma / series.zt
    assert np.all(np.diff(rel) > 0)


def _tight_walk(params, seed):
    # unit steps against a cloud of radius ~0.05: nearly every step lands across the node
    return WalkSpec(
        state=STATES["He_1P1"],
        trial=TrialWavefunction("he_Pz_VII", params),
        H=Hamiltonian(2, 2),
        lambda0=-2.06,
        n_paths=20,
        scale=1.0,
        checkpoints=(1.0, 48.0),
        seed=seed,
    )


def test_all_paths_killed_names_checkpoint():
    with pytest.raises(AllPathsKilledError) as info:
        run_walk(_tight_walk((30.0, 20.0), 0))
    assert info.value.checkpoint == 48.0
    assert "t=48" in str(info.value)


def test_weight_overflow_guard():
    with pytest.raises(WeightOverflowError):
        run_walk(_tight_walk((60.0, 40.0), 1))


def test_walk_is_deterministic():
    spec = make_spec("H_1s", H08, 1, -0.48, n_paths=3000, checkpoints=SHORT, seed=11)
    assert run_walk(spec).rows == run_walk(spec).rows
    other = run_walk(make_spec("H_1s", H08, 1, -0.48, n_paths=3000, checkpoints=SHORT, seed=12))
    assert other.rows != run_walk(spec).rows
