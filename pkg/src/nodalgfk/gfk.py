"""Feynman-Kac path averages with an importance-sampled, node-absorbed diffusion.

For walkers started from ``psi_T^2`` inside one nodal cell and moved by

    dX = grad log psi_T dt + dW,

the engine estimates

    z(t) = E[ exp(-int_0^t (E_L(X_s) - lambda0) ds) ; no node crossing up to t ]

at a set of checkpoint times.  ``ln z(t) / t`` tends to ``lambda0 - lambda1``
where ``lambda1`` is the lowest eigenvalue compatible with the cell.

Paths are processed in fixed-size blocks.  Block ``b`` draws from its own
stream ``SeedSequence(seed, spawn_key=(b, k))``, so the result depends only on
``(spec, seed)`` and not on how many worker processes share the blocks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from nodalgfk.nodal import STATES, StateSymmetry, crossing, sample_surface
from nodalgfk.trial import Hamiltonian, TrialWavefunction, local_energy_batch, sample_psi2

log = logging.getLogger(__name__)

TABLE_CHECKPOINTS = (8.0, 16.0, 24.0, 32.0, 40.0, 48.0)
BLOCK_SIZE = 4096
MAX_LOG_WEIGHT = 700.0


class WalkConfigurationError(ValueError):
    pass


class AllPathsKilledError(RuntimeError):
    def __init__(self, checkpoint):
        super().__init__(f"all paths were killed before checkpoint t={checkpoint:g}")
        self.checkpoint = checkpoint


class WeightOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class WalkSpec:
    state: StateSymmetry
    trial: TrialWavefunction
    H: Hamiltonian
    lambda0: float
    n_paths: int = 600_000
    checkpoints: tuple = TABLE_CHECKPOINTS
    scale: float | None = 30.0
    dt: float | None = None
    t_max: float | None = None
    seed: int = 0
    cell_sign: int = 1
    drift_rule: str = "clamp"
    burn_in: int = 1000
    debug: bool = False

    def __post_init__(self):
        if self.scale is not None:
            dt = 1.0 / self.scale
            if self.dt is not None and abs(self.dt - dt) > 1e-15:
                raise WalkConfigurationError("dt and scale disagree (dt must equal 1/scale)")
            object.__setattr__(self, "dt", dt)
        elif self.dt is None:
            raise WalkConfigurationError("give either dt or scale")
        if self.dt <= 0:
            raise WalkConfigurationError("dt must be positive")
        cps = tuple(float(t) for t in self.checkpoints)
        if not cps or any(b <= a for a, b in zip(cps, cps[1:])):
            raise WalkConfigurationError("checkpoints must be non-empty and strictly increasing")
        t_max = self.t_max if self.t_max is not None else cps[-1]
        if cps[0] <= 0 or cps[-1] > t_max + 1e-12:
            raise WalkConfigurationError("checkpoints must lie in (0, t_max]")
        for t in cps:
            k = round(t / self.dt)
            if abs(k * self.dt - t) > 1e-9 * max(1.0, t):
                raise WalkConfigurationError(f"checkpoint t={t:g} is not a multiple of dt={self.dt:g}")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "t_max", float(t_max))
        if self.n_paths < 1:
            raise WalkConfigurationError("n_paths must be at least 1")
        if self.cell_sign not in (1, -1):
            raise WalkConfigurationError("cell_sign must be +1 or -1")
        if self.drift_rule not in ("clamp", "unr"):
            raise WalkConfigurationError("drift_rule must be 'clamp' or 'unr'")

    @property
    def checkpoint_steps(self) -> tuple:
        return tuple(int(round(t / self.dt)) for t in self.checkpoints)

    def blocks(self) -> list:
        """``(start, size)`` of each path block."""
        return [(s, min(BLOCK_SIZE, self.n_paths - s)) for s in range(0, self.n_paths, BLOCK_SIZE)]


@dataclass(frozen=True)
class ZtRow:
    t: float
    zt: float
    sigma: float
    n_alive: int


@dataclass(frozen=True)
class ZtSeries:
    rows: tuple
    n_paths: int
    lambda0: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ts = [r.t for r in self.rows]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("checkpoint times must increase")
        alive = [r.n_alive for r in self.rows]
        if any(b > a for a, b in zip(alive, alive[1:])):
            raise ValueError("alive counts must not increase")
        if any(not (r.zt > 0) or r.sigma < 0 for r in self.rows):
            raise ValueError("z_t must be positive and sigma non-negative")

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.rows])

    @property
    def zt(self) -> np.ndarray:
        return np.array([r.zt for r in self.rows])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([r.sigma for r in self.rows])


@dataclass
class Ensemble:
    positions: np.ndarray
    acceptance: float
    autocorr_time: float
    cell_sign: int


def survival_fraction(series: ZtSeries, t: float) -> float:
    if t <= 0:
        return 1.0
    for row in series.rows:
        if abs(row.t - t) <= 1e-9 * max(1.0, t):
            return row.n_alive / series.n_paths
    raise KeyError(f"t={t:g} is not a checkpoint of this series")


def check_consistency(state: StateSymmetry, trial: TrialWavefunction, seed: int = 12345) -> None:
    """The trial must share the state's electron count and vanish on its symmetry-required node."""
    if state.n != trial.n:
        raise WalkConfigurationError(f"{trial.form} has {trial.n} electrons, {state.term} needs {state.n}")
    if state.nodeless and trial.has_node:
        raise WalkConfigurationError(f"{state.term} is nodeless but {trial.form} has a node")
    if not state.nodeless:
        if not trial.has_node:
            raise WalkConfigurationError(f"{state.term} has a node but {trial.form} is nodeless")
        on = sample_surface(state, np.random.default_rng(seed), 256)
        node = np.abs(trial.evaluate(on).node)
        if np.max(node / (1.0 + np.linalg.norm(on, axis=(-2, -1)))) > 1e-9:
            raise WalkConfigurationError(
                f"{trial.form} does not vanish on the {state.term} node ({state.equations})"
            )


def _stream(spec_seed: int, block: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(spec_seed, spawn_key=(block, purpose)))


def _equilibrate_block(spec: WalkSpec, block: int, size: int):
    return sample_psi2(spec.trial, size, _stream(spec.seed, block, 0), burn_in=spec.burn_in, cell_sign=spec.cell_sign)[0]


def equilibrate(spec: WalkSpec) -> Ensemble:
    """Walkers distributed as ``psi_T^2`` inside the cell ``sign(node) == spec.cell_sign``."""
    check_consistency(spec.state, spec.trial)
    parts = [_equilibrate_block(spec, b, size) for b, (_, size) in enumerate(spec.blocks())]
    pos = np.concatenate([p.positions for p in parts])
    if spec.trial.has_node and np.any(np.sign(spec.trial.evaluate(pos).node) != spec.cell_sign):
        raise WalkConfigurationError("walkers could not be confined to one nodal cell")
    sizes = np.array([len(p.positions) for p in parts])
    acc = float(np.sum(sizes * [p.acceptance for p in parts]) / sizes.sum())
    tau = float(max(p.autocorr_time for p in parts))
    return Ensemble(pos, acc, tau, spec.cell_sign)


def _drift_factor(v2: np.ndarray, dt: float, rule: str) -> np.ndarray:
    if rule == "clamp":
        vmax2 = 1.0 / dt
        return np.where(v2 > vmax2, np.sqrt(vmax2 / np.where(v2 > 0, v2, 1.0)), 1.0)
    # smooth rescaling (Umrigar, Nightingale and Runge)
    x = v2 * dt
    return np.where(x > 1e-12, (np.sqrt(1.0 + 2.0 * x) - 1.0) / np.where(x > 1e-12, x, 1.0), 1.0)


@dataclass
class _BlockResult:
    weights: np.ndarray  # (n_checkpoints, size), zero for killed paths
    alive: np.ndarray  # (n_checkpoints,)
    node_kills: int
    singular_kills: int
    clamp_events: int
    cell_violations: int


def _walk_block(spec: WalkSpec, block: int, positions: np.ndarray | None) -> _BlockResult:
    if positions is None:
        positions = _equilibrate_block(spec, block, spec.blocks()[block][1]).positions
    rng = _stream(spec.seed, block, 1)
    trial, H, dt, lam0 = spec.trial, spec.H, spec.dt, spec.lambda0
    sdt = np.sqrt(dt)
    X = np.array(positions, dtype=float)
    m = len(X)
    check_state = spec.debug and not spec.state.nodeless and _state_confines(spec.state, X)

    def measure(X):
        ev = trial.evaluate(X)
        e, bad = local_energy_batch(H, trial, X, ev)
        f = _drift_factor(np.sum(ev.grad_log**2, axis=(-2, -1)), dt, spec.drift_rule)
        drift = ev.grad_log * f[:, None, None]
        e = np.where(bad, lam0, lam0 + (e - lam0) * f)
        return drift, e, ev.node, ev.near_node, bad, f < 1.0

    drift, e_old, _, _, bad0, clamped = measure(X)
    alive = ~bad0
    singular_kills = int(bad0.sum())
    node_kills = clamp_events = violations = 0
    S = np.zeros(m)
    stops = dict(zip(spec.checkpoint_steps, range(len(spec.checkpoints))))
    W = np.zeros((len(spec.checkpoints), m))
    n_alive = np.zeros(len(spec.checkpoints), dtype=int)
    for k in range(1, max(stops) + 1):
        clamp_events += int(np.sum(clamped & alive))
        Xn = X + drift * dt + sdt * rng.standard_normal(X.shape)
        d_new, e_new, node_new, near, bad, clamped = measure(Xn)
        if trial.has_node:
            crossed = (np.sign(node_new) != spec.cell_sign) | near
        else:
            crossed = np.zeros(m, dtype=bool)
        dies_node = alive & crossed
        dies_sing = alive & bad & ~crossed
        node_kills += int(dies_node.sum())
        singular_kills += int(dies_sing.sum())
        alive = alive & ~dies_node & ~dies_sing
        if check_state:
            violations += int(np.sum(crossing(spec.state, X, Xn) & alive))
        S = np.where(alive, S + 0.5 * dt * (e_old + e_new - 2.0 * lam0), S)
        if np.any(-S[alive] > MAX_LOG_WEIGHT):
            raise WeightOverflowError(f"path weight exceeded exp({MAX_LOG_WEIGHT:g}) at t={k * dt:g}")
        X = np.where(alive[:, None, None], Xn, X)
        drift = np.where(alive[:, None, None], d_new, drift)
        e_old = np.where(alive, e_new, e_old)
        if k in stops:
            i = stops[k]
            W[i] = np.where(alive, np.exp(-S), 0.0)
            n_alive[i] = int(alive.sum())
    return _BlockResult(W, n_alive, node_kills, singular_kills, clamp_events, violations)


def _state_confines(state: StateSymmetry, X: np.ndarray) -> bool:
    p = state.primary(X)
    return p is not None and bool(np.all(np.sign(p) == np.sign(p[0])))


def _run_block(args):
    spec, block, positions = args
    return _walk_block(spec, block, positions)


def run_walk(spec: WalkSpec, ensemble: Ensemble | None = None, workers: int = 1) -> ZtSeries:
    """Path-average the Feynman-Kac weight at every checkpoint.

    Without ``ensemble`` each block equilibrates itself from its own stream,
    which gives the same walkers :func:`equilibrate` would.
    """
    check_consistency(spec.state, spec.trial)
    blocks = spec.blocks()
    if ensemble is not None:
        if len(ensemble.positions) != spec.n_paths:
            raise WalkConfigurationError("ensemble size differs from n_paths")
        tasks = [(spec, b, ensemble.positions[s : s + n]) for b, (s, n) in enumerate(blocks)]
    else:
        tasks = [(spec, b, None) for b in range(len(blocks))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, tasks))
    else:
        results = [_run_block(t) for t in tasks]
    W = np.concatenate([r.weights for r in results], axis=1)
    alive = np.sum([r.alive for r in results], axis=0)
    rows = []
    for i, t in enumerate(spec.checkpoints):
        if alive[i] == 0:
            raise AllPathsKilledError(t)
        w = W[i]
        z = float(np.mean(w))
        sigma = float(np.std(w, ddof=1) / np.sqrt(len(w))) if len(w) > 1 else 0.0
        rows.append(ZtRow(float(t), z, sigma, int(alive[i])))
    diag = {
        "node_kills": sum(r.node_kills for r in results),
        "singular_kills": sum(r.singular_kills for r in results),
        "clamp_events": sum(r.clamp_events for r in results),
        "cell_violations": sum(r.cell_violations for r in results),
        "dt": spec.dt,
        "drift_rule": spec.drift_rule,
    }
    if ensemble is not None:
        diag["acceptance"] = ensemble.acceptance
    log.info("walk finished: %s", diag)
    return ZtSeries(tuple(rows), spec.n_paths, spec.lambda0, diag)


def make_spec(state: str | StateSymmetry, trial: TrialWavefunction, Z: int, lambda0: float, **kw) -> WalkSpec:
    if isinstance(state, str):
        state = STATES[state]
    return WalkSpec(state=state, trial=trial, H=Hamiltonian(trial.n, Z), lambda0=lambda0, **kw)


__all__ = [
    "AllPathsKilledError",
    "Ensemble",
    "WalkSpec",
    "WeightOverflowError",
    "ZtRow",
    "ZtSeries",
    "check_consistency",
    "equilibrate",
    "make_spec",
    "run_walk",
    "survival_fraction",
]
