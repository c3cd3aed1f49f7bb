"""Trial wavefunctions, local energies and the variational (Rayleigh) energy.

All evaluation is vectorised over a leading walker axis: positions have shape
``(..., n, 3)``.  The single-configuration functions (:func:`value`,
:func:`grad_log`, :func:`local_energy`) are thin wrappers that raise on
singular points; the batch routine :meth:`TrialWavefunction.evaluate` reports
those points in a mask instead so a walk can decide what to do with them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from nodalgfk.configuration import ElectronConfig
from nodalgfk.symmetry import SymmetryOp, apply_op

log = logging.getLogger(__name__)

GUARD = 1e-12

FORMS = {
    # form: (electron count, parameter names, default state term)
    "hydrogen_1s": (1, ("alpha",), "H_1s"),
    "he_1S0_product": (2, ("alpha",), "He_1S0"),
    "he_3S1_antisym": (2, ("alpha1", "alpha2"), "He_3S1"),
    "he_Pz_VII": (2, ("alpha1", "alpha2"), "He_1P1"),
}


class CoulombSingularityError(ArithmeticError):
    """An electron sits on the nucleus or on another electron."""


class NodeProximityError(ArithmeticError):
    """The configuration is too close to a node of the trial function."""


class SamplerError(RuntimeError):
    """Metropolis sampling did not reach a usable acceptance rate."""


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hamiltonian:
    """``-1/2 sum_i lap_i - Z sum_i 1/r_i + sum_{i<j} 1/r_ij`` with the nucleus at the origin."""

    n: int
    Z: int

    def __post_init__(self):
        if int(self.Z) != self.Z or self.Z < 1:
            raise ValueError("nuclear charge Z must be a positive integer")
        if self.n < 1:
            raise ValueError("electron count must be positive")

    def potential(self, pos: np.ndarray) -> tuple:
        """Potential energy and a mask of Coulomb-singular configurations."""
        r = np.linalg.norm(pos, axis=-1)
        bad = np.any(r < GUARD, axis=-1)
        v = -self.Z * np.sum(1.0 / np.where(r < GUARD, 1.0, r), axis=-1)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                rij = np.linalg.norm(pos[..., i, :] - pos[..., j, :], axis=-1)
                bad = bad | (rij < GUARD)
                v = v + 1.0 / np.where(rij < GUARD, 1.0, rij)
        return v, bad


@dataclass
class Evaluation:
    """Batch evaluation of a trial function.

    ``node`` is a smooth signed factor sharing the sign and the zero set of the
    wavefunction (``1`` for nodeless forms).  ``lap`` is ``sum_i lap_i psi / psi``.
    """

    log_abs: np.ndarray
    node: np.ndarray
    grad_log: np.ndarray
    lap: np.ndarray
    near_node: np.ndarray


@dataclass(frozen=True)
class TrialWavefunction:
    form: str
    params: tuple

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown trial form {self.form!r}; known: {', '.join(FORMS)}")
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        names = FORMS[self.form][1]
        if len(params) != len(names):
            raise ValueError(f"{self.form} takes parameters {names}, got {params}")
        if not all(p > 0 and np.isfinite(p) for p in params):
            raise ValueError("exponents must be strictly positive")
        if self.form in ("he_3S1_antisym",) and params[0] == params[1]:
            raise ValueError("he_3S1_antisym vanishes identically for alpha1 == alpha2")
        object.__setattr__(self, "params", params)

    @property
    def n(self) -> int:
        return FORMS[self.form][0]

    @property
    def default_state(self) -> str:
        return FORMS[self.form][2]

    @property
    def has_node(self) -> bool:
        return self.form in ("he_3S1_antisym", "he_Pz_VII")

    def with_params(self, params) -> "TrialWavefunction":
        return TrialWavefunction(self.form, tuple(params))

    @property
    def cell_flip(self) -> SymmetryOp | None:
        """A symmetry operation that maps one nodal cell of the trial onto the other."""
        if self.form == "he_Pz_VII":
            return SymmetryOp.rotation(2, (1, 0, 0), np.pi)
        if self.form == "he_3S1_antisym":
            return SymmetryOp.permutation(2, (1, 2))
        return None

    def radial_scales(self) -> tuple:
        """Per-electron exponent used to seed samplers."""
        p = self.params
        if self.form == "hydrogen_1s":
            return (p[0],)
        if self.form == "he_1S0_product":
            return (p[0], p[0])
        return (max(p), min(p))

    def evaluate(self, pos) -> Evaluation:
        pos = pos.positions if isinstance(pos, ElectronConfig) else np.asarray(pos, dtype=float)
        if pos.shape[-2] != self.n:
            raise ValueError(f"{self.form} needs {self.n} electrons, got {pos.shape[-2]}")
        r = np.linalg.norm(pos, axis=-1)
        rs = np.where(r > 0.0, r, 1.0)
        unit = pos / rs[..., None]
        return getattr(self, "_eval_" + self.form)(pos, r, rs, unit)

    def _eval_hydrogen_1s(self, pos, r, rs, unit):
        (a,) = self.params
        shape = r.shape[:-1]
        return Evaluation(
            log_abs=-a * r[..., 0],
            node=np.ones(shape),
            grad_log=-a * unit,
            lap=a * a - 2.0 * a / rs[..., 0],
            near_node=np.zeros(shape, dtype=bool),
        )

    def _eval_he_1S0_product(self, pos, r, rs, unit):
        (a,) = self.params
        shape = r.shape[:-1]
        return Evaluation(
            log_abs=-a * r.sum(axis=-1),
            node=np.ones(shape),
            grad_log=-a * unit,
            lap=np.sum(a * a - 2.0 * a / rs, axis=-1),
            near_node=np.zeros(shape, dtype=bool),
        )

    def _eval_he_3S1_antisym(self, pos, r, rs, unit):
        # e1 - e2 = -2 exp(-s (r1 + r2)) sinh(d (r1 - r2)), s, d = mean and half-difference of exponents
        a, b = self.params
        s, d = 0.5 * (a + b), 0.5 * (a - b)
        u = d * (r[..., 0] - r[..., 1])
        near = np.abs(u) < GUARD
        us = np.where(near, GUARD, u)
        coth = 1.0 / np.tanh(us)
        csch2 = 1.0 / np.sinh(us) ** 2
        au = np.abs(us)
        log_sinh = au + np.log1p(-np.exp(-2.0 * au)) - np.log(2.0)
        g1 = -s + d * coth
        g2 = -s - d * coth
        lap = g1**2 + g2**2 - 2.0 * d * d * csch2 + 2.0 * g1 / rs[..., 0] + 2.0 * g2 / rs[..., 1]
        grad = np.stack([g1[..., None] * unit[..., 0, :], g2[..., None] * unit[..., 1, :]], axis=-2)
        return Evaluation(
            log_abs=np.log(2.0) - s * r.sum(axis=-1) + log_sinh,
            node=-np.sinh(us),
            grad_log=grad,
            lap=lap,
            near_node=near,
        )

    def _eval_he_Pz_VII(self, pos, r, rs, unit):
        a, b = self.params
        r1, r2 = r[..., 0], r[..., 1]
        l1 = -a * r1 - b * r2
        l2 = -b * r1 - a * r2
        w1 = expit(l1 - l2)
        w2 = 1.0 - w1
        P = pos[..., 0, 2] + pos[..., 1, 2]
        near = np.abs(P) < GUARD
        Ps = np.where(near, GUARD, P)
        g1 = -(a * w1 + b * w2)
        g2 = -(b * w1 + a * w2)
        grad = np.stack([g1[..., None] * unit[..., 0, :], g2[..., None] * unit[..., 1, :]], axis=-2)
        grad[..., :, 2] += (1.0 / Ps)[..., None]
        c1 = pos[..., 0, 2] / rs[..., 0]
        c2 = pos[..., 1, 2] / rs[..., 1]
        lap1 = 2.0 * g1 * c1 / Ps + w1 * (a * a - 2.0 * a / rs[..., 0]) + w2 * (b * b - 2.0 * b / rs[..., 0])
        lap2 = 2.0 * g2 * c2 / Ps + w1 * (b * b - 2.0 * b / rs[..., 1]) + w2 * (a * a - 2.0 * a / rs[..., 1])
        return Evaluation(
            log_abs=np.log(np.abs(Ps)) + np.logaddexp(l1, l2),
            node=P,
            grad_log=grad,
            lap=lap1 + lap2,
            near_node=near,
        )

    def value_batch(self, pos) -> np.ndarray:
        ev = self.evaluate(pos)
        return np.where(ev.near_node, 0.0, np.sign(ev.node) * np.exp(ev.log_abs))


def value(t: TrialWavefunction, c) -> float:
    """Wavefunction value (unnormalised)."""
    p = c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    if t.form == "hydrogen_1s":
        return float(np.exp(-t.params[0] * r[0]))
    if t.form == "he_1S0_product":
        return float(np.exp(-t.params[0] * (r[0] + r[1])))
    a, b = t.params
    e1 = np.exp(-a * r[0] - b * r[1])
    e2 = np.exp(-b * r[0] - a * r[1])
    if t.form == "he_3S1_antisym":
        return float(e1 - e2)
    return float((p[0, 2] + p[1, 2]) * (e1 + e2))


def grad_log(t: TrialWavefunction, c) -> np.ndarray:
    """``grad psi / psi`` as a flat ``3n`` vector."""
    ev = t.evaluate(c)
    if bool(ev.near_node):
        raise NodeProximityError("configuration is within the node guard of the trial function")
    return ev.grad_log.reshape(-1)


def local_energy_batch(H: Hamiltonian, t: TrialWavefunction, pos, ev: Evaluation | None = None) -> tuple:
    """Local energies plus a mask of points where they are undefined."""
    if ev is None:
        ev = t.evaluate(pos)
    v, coulomb = H.potential(np.asarray(pos, dtype=float))
    return -0.5 * ev.lap + v, coulomb | ev.near_node


def local_energy(H: Hamiltonian, t: TrialWavefunction, c) -> float:
    pos = c.positions if isinstance(c, ElectronConfig) else np.asarray(c, dtype=float)
    if H.n != t.n:
        raise ValueError("Hamiltonian and trial function have different electron counts")
    ev = t.evaluate(pos)
    if bool(ev.near_node):
        raise NodeProximityError("configuration is within the node guard of the trial function")
    e, bad = local_energy_batch(H, t, pos, ev)
    if bool(bad):
        raise CoulombSingularityError("Coulomb singularity: r_i or r_ij below guard")
    return float(e)


# ---------------------------------------------------------------------------
# Metropolis sampling of psi^2


@dataclass
class SamplerState:
    positions: np.ndarray
    acceptance: float
    step: float
    autocorr_time: float
    cell_sign: int


def initial_positions(t: TrialWavefunction, m: int, rng: np.random.Generator) -> np.ndarray:
    scales = t.radial_scales()
    pos = np.empty((m, t.n, 3))
    for i, a in enumerate(scales):
        r = rng.gamma(3.0, 1.0 / (2.0 * a), m)
        u = rng.standard_normal((m, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pos[:, i] = r[:, None] * u
    return pos


def place_in_cell(t: TrialWavefunction, pos: np.ndarray, cell_sign: int) -> np.ndarray:
    """Move walkers into the cell where the trial's node factor has sign ``cell_sign``."""
    if not t.has_node:
        return pos
    node = t.evaluate(pos).node
    wrong = np.sign(node) != cell_sign
    if np.any(wrong):
        pos = pos.copy()
        pos[wrong] = apply_op(t.cell_flip, pos[wrong])
    return pos


def _autocorr_time(trace: np.ndarray) -> float:
    """Integrated autocorrelation time from batch means over independent chains (rows = steps)."""
    steps = trace.shape[0]
    total_var = trace.var()
    if total_var == 0.0 or steps < 2:
        return 1.0
    return float(max(1.0, steps * trace.mean(axis=0).var() / total_var))


def sample_psi2(
    t: TrialWavefunction,
    n_walkers: int,
    rng: np.random.Generator,
    burn_in: int = 1000,
    n_steps: int = 0,
    cell_sign: int = 1,
    record: callable = None,
    step: float | None = None,
) -> tuple:
    """Metropolis walk in ``psi^2`` confined to one nodal cell.

    The step length is tuned toward 50% acceptance during burn-in and then
    frozen.  If ``record`` is given it is called on the positions after each of
    the ``n_steps`` production steps and its outputs are returned stacked.
    """
    pos = place_in_cell(t, initial_positions(t, n_walkers, rng), cell_sign)
    ev = t.evaluate(pos)
    if t.has_node and np.any(np.sign(ev.node) != cell_sign):
        raise SamplerError("could not place walkers inside the requested nodal cell")
    logp = 2.0 * ev.log_abs
    step = step or 0.6 / max(t.radial_scales())
    accepted = 0
    lp_trace = []

    def move(pos, logp, step):
        prop = pos + step * rng.standard_normal(pos.shape)
        evp = t.evaluate(prop)
        lpp = 2.0 * evp.log_abs
        ok = np.log(rng.random(len(pos))) < lpp - logp
        if t.has_node:
            ok &= (np.sign(evp.node) == cell_sign) & ~evp.near_node
        pos = np.where(ok[:, None, None], prop, pos)
        logp = np.where(ok, lpp, logp)
        return pos, logp, ok.mean()

    window_acc = []
    for k in range(burn_in):
        pos, logp, acc = move(pos, logp, step)
        window_acc.append(acc)
        if (k + 1) % 50 == 0 and k < 0.8 * burn_in:
            step *= float(np.exp(np.clip(np.mean(window_acc) - 0.5, -0.5, 0.5) * 2.0))
            window_acc = []
        if k >= burn_in - 200:
            lp_trace.append(logp)
    records = []
    for _ in range(n_steps):
        pos, logp, acc = move(pos, logp, step)
        accepted += acc
        if record is not None:
            records.append(record(pos))
    acceptance = accepted / n_steps if n_steps else float(np.mean(window_acc)) if window_acc else 0.0
    if n_steps == 0:
        # short measurement window at the frozen step
        accs = []
        for _ in range(50):
            pos, logp, acc = move(pos, logp, step)
            accs.append(acc)
            lp_trace.append(logp)
        acceptance = float(np.mean(accs))
    tau = _autocorr_time(np.array(lp_trace)) if lp_trace else 1.0
    if not 0.2 <= acceptance <= 0.8:
        raise SamplerError(f"Metropolis acceptance {acceptance:.3f} outside [0.2, 0.8] (step {step:.3g})")
    state = SamplerState(pos, float(acceptance), float(step), tau, cell_sign)
    return state, (np.array(records) if record is not None else None)


# ---------------------------------------------------------------------------
# Rayleigh quotient


@dataclass(frozen=True)
class RayleighResult:
    lambda0: float
    sigma: float
    method: str
    n_samples: int = 0
    acceptance: float | None = None
    autocorr_time: float | None = None
    params: tuple = field(default=())


def _radial_moments(H: Hamiltonian, t: TrialWavefunction, r1, r2):
    """Angle-averaged integrands ``(norm, kinetic, nuclear, ee)`` on a radial grid."""
    Z = H.Z
    rg, rl = np.maximum(r1, r2), np.minimum(r1, r2)
    if t.form == "he_1S0_product":
        (a,) = t.params
        G2 = np.exp(-2.0 * a * (r1 + r2))
        return G2, a * a * G2, -Z * (1 / r1 + 1 / r2) * G2, G2 / rg
    a, b = t.params
    e1 = np.exp(-a * r1 - b * r2)
    e2 = np.exp(-b * r1 - a * r2)
    if t.form == "he_3S1_antisym":
        psi = e1 - e2
        d1 = -a * e1 + b * e2
        d2 = -b * e1 + a * e2
        n = psi**2
        return n, 0.5 * (d1**2 + d2**2), -Z * (1 / r1 + 1 / r2) * n, n / rg
    # (z1 + z2) G: angular averages of c_i^2 are 1/3, of c1 c2 zero; the
    # e-e term keeps the l = 0 and l = 1 multipoles
    G = e1 + e2
    G1 = -(a * e1 + b * e2)
    G2 = -(b * e1 + a * e2)
    s2 = (r1**2 + r2**2) / 3.0
    n = s2 * G**2
    kin = 0.5 * ((G**2 + 2 * G * G1 * r1 / 3 + s2 * G1**2) + (G**2 + 2 * G * G2 * r2 / 3 + s2 * G2**2))
    ee = ((r1**2 + r2**2) / (3.0 * rg) + 2.0 * r1 * r2 * rl / (9.0 * rg**2)) * G**2
    return n, kin, -Z * (1 / r1 + 1 / r2) * n, ee


def _quadrature_energy(H: Hamiltonian, t: TrialWavefunction, order: int) -> float:
    if t.form == "hydrogen_1s":
        (a,) = t.params
        x, w = np.polynomial.laguerre.laggauss(order)
        r = x / (2.0 * a)
        w = w / (2.0 * a)  # weight exp(-2 a r) absorbed
        norm = np.sum(w * r**2)
        kin = np.sum(w * r**2 * 0.5 * a * a)
        pot = np.sum(w * r**2 * (-H.Z / r))
        return float((kin + pot) / norm)
    # outer radius by Gauss-Laguerre, inner radius on [0, r_outer] by Gauss-Legendre;
    # the integrands are symmetric under r1 <-> r2 so the triangle suffices
    xl, wl = np.polynomial.laguerre.laggauss(order)
    xg, wg = np.polynomial.legendre.leggauss(order)
    s = 2.0 * min(t.params)
    r1 = (xl / s)[:, None]
    w1 = (wl * np.exp(xl) / s)[:, None]
    u = 0.5 * (xg + 1.0)
    r2 = r1 * u[None, :]
    w = w1 * 0.5 * wg[None, :] * r1 * (r1**2 * r2**2)
    n, kin, nuc, ee = _radial_moments(H, t, r1, r2)
    return float(np.sum(w * (kin + nuc + ee)) / np.sum(w * n))


def rayleigh_quadrature(H: Hamiltonian, t: TrialWavefunction, order: int = 96) -> RayleighResult:
    """Deterministic variational energy; ``sigma`` is the change against a coarser rule."""
    if H.n != t.n:
        raise ValueError("Hamiltonian and trial function have different electron counts")
    fine = _quadrature_energy(H, t, order)
    coarse = _quadrature_energy(H, t, max(8, (2 * order) // 3))
    return RayleighResult(fine, abs(fine - coarse), "quadrature", order, params=t.params)


def rayleigh_metropolis(
    H: Hamiltonian,
    t: TrialWavefunction,
    n_samples: int = 400_000,
    seed: int = 0,
    n_chains: int = 1000,
    burn_in: int = 1000,
) -> RayleighResult:
    """``E_psi2[E_L]`` with the error bar from independent chain means."""
    if H.n != t.n:
        raise ValueError("Hamiltonian and trial function have different electron counts")
    rng = np.random.default_rng(seed)
    steps = max(10, n_samples // n_chains)

    def rec(pos):
        e, bad = local_energy_batch(H, t, pos)
        return np.where(bad, np.nan, e)

    state, trace = sample_psi2(t, n_chains, rng, burn_in=burn_in, n_steps=steps, record=rec)
    chain_means = np.nanmean(trace, axis=0)
    lam = float(np.mean(chain_means))
    sigma = float(np.std(chain_means, ddof=1) / np.sqrt(n_chains))
    tau = _autocorr_time(np.where(np.isnan(trace), lam, trace))
    return RayleighResult(lam, sigma, "metropolis", int(np.isfinite(trace).sum()), state.acceptance, tau, t.params)


def rayleigh_quotient(H: Hamiltonian, t: TrialWavefunction, method: str = "quadrature", budget: int | None = None, seed: int = 0) -> RayleighResult:
    """Variational energy ``<psi|H|psi> / <psi|psi>``.

    ``budget`` is the rule order for ``quadrature`` and the total number of
    local-energy samples for ``metropolis``.
    """
    if method == "quadrature":
        return rayleigh_quadrature(H, t, budget or 96)
    if method == "metropolis":
        return rayleigh_metropolis(H, t, budget or 400_000, seed)
    raise ValueError(f"unknown method {method!r}")


def optimize_trial(H: Hamiltonian, t: TrialWavefunction, ftol: float = 1e-7, order: int = 96) -> tuple:
    """Minimise the quadrature Rayleigh quotient over the exponents (Nelder-Mead in log space)."""

    def energy(logp):
        try:
            return _quadrature_energy(H, t.with_params(np.exp(logp)), order)
        except ValueError:
            return np.inf

    x0 = np.log(t.params)
    if t.form == "he_3S1_antisym" and abs(x0[0] - x0[1]) < 1e-3:
        x0 = x0 + np.array([0.1, -0.1])
    res = minimize(energy, x0, method="Nelder-Mead", options={"xatol": 1e-6, "fatol": ftol, "maxiter": 4000})
    if not res.success:
        raise OptimizationError(f"exponent optimisation did not converge: {res.message}")
    best = t.with_params(np.exp(res.x))
    log.info("optimised %s exponents %s -> E = %.10f", t.form, best.params, res.fun)
    return best, rayleigh_quadrature(H, best, order)
