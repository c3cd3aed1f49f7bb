"""``nodalgfk`` command line: rayleigh, run, fit, verify-nodes.

Configuration files are flat ``key = value`` lines; ``#`` starts a comment.
Command-line flags override file values.  Exit codes: 0 success, 1 a
verification reported FAIL, 2 usage or configuration error, 3 walk failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from nodalgfk.gfk import (
    TABLE_CHECKPOINTS,
    AllPathsKilledError,
    WalkConfigurationError,
    WeightOverflowError,
    make_spec,
    run_walk,
)
from nodalgfk.nodal import STATES, verify_nodes
from nodalgfk.spectra import (
    FitError,
    ReportFormatError,
    emit_fit_report,
    fit_asymptote,
    format_uncertain,
    log_series,
    read_report,
)
from nodalgfk.symmetry import idempotence_defect, random_smooth_functions, young_operator_li
from nodalgfk.trial import (
    FORMS,
    Hamiltonian,
    OptimizationError,
    SamplerError,
    TrialWavefunction,
    optimize_trial,
    rayleigh_quotient,
)

log = logging.getLogger("nodalgfk")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_WALK = 0, 1, 2, 3

DEFAULT_PARAMS = {
    "hydrogen_1s": (1.0,),
    "he_1S0_product": (1.6875,),
    "he_3S1_antisym": (2.0, 0.5),
    "he_Pz_VII": (2.0, 0.5),
}
NUCLEAR_CHARGE = {"hydrogen": 1, "helium": 2, "lithium": 3}


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    parts = [p for p in s.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else s.strip()


@dataclass
class RunConfig:
    """Every run parameter, with defaults matching the reference He P_z run.

    ``state=None`` takes the trial form's natural state, ``Z=None`` the
    state's nuclear charge and ``lambda0=None`` the Rayleigh quotient of the
    (optionally optimised) trial function.
    """

    state: str | None = field(default=None, metadata={"parse": _opt_str})
    trial: str = field(default="he_Pz_VII", metadata={"parse": str.strip})
    params: tuple | None = field(default=None, metadata={"parse": _floats})
    optimize: bool = field(default=True, metadata={"parse": _bool})
    Z: int | None = field(default=None, metadata={"parse": _opt_int})
    n_paths: int = field(default=600_000, metadata={"parse": int})
    scale: float = field(default=30.0, metadata={"parse": float})
    checkpoints: tuple = field(default=TABLE_CHECKPOINTS, metadata={"parse": _floats})
    t_min: float = field(default=8.0, metadata={"parse": float})
    seed: int = field(default=0, metadata={"parse": int})
    out: str = field(default="zt_series.csv", metadata={"parse": str.strip})
    workers: int = field(default=1, metadata={"parse": int})
    lambda0: float | None = field(default=None, metadata={"parse": _opt_float})
    drift_rule: str = field(default="clamp", metadata={"parse": str.strip})
    cell_sign: int = field(default=1, metadata={"parse": int})
    burn_in: int = field(default=1000, metadata={"parse": int})
    weighted: bool = field(default=True, metadata={"parse": _bool})
    rayleigh_method: str = field(default="quadrature", metadata={"parse": str.strip})
    rayleigh_budget: int | None = field(default=None, metadata={"parse": _opt_int})
    samples: int = field(default=10_000, metadata={"parse": int})
    plot: bool = field(default=False, metadata={"parse": _bool})

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    def resolved_trial(self) -> TrialWavefunction:
        if self.trial not in FORMS:
            raise ConfigError(f"unknown trial form {self.trial!r}; known: {', '.join(FORMS)}")
        params = self.params if self.params is not None else DEFAULT_PARAMS[self.trial]
        try:
            return TrialWavefunction(self.trial, params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved_state(self, trial: TrialWavefunction):
        label = self.state or trial.default_state
        if label not in STATES:
            raise ConfigError(f"unknown state {label!r}; known: {', '.join(STATES)}")
        s = STATES[label]
        if s.n != trial.n:
            raise ConfigError(f"state {label} has {s.n} electrons but trial {trial.form} has {trial.n}")
        return s

    def resolved_Z(self, state) -> int:
        return self.Z if self.Z is not None else NUCLEAR_CHARGE[state.atom]


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed overrides for :class:`RunConfig`."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = fields[key].metadata["parse"](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values = parse_config_text(text, source=str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def write_atomic(path: str | Path, text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _format_params(t: TrialWavefunction) -> str:
    names = FORMS[t.form][1]
    return ", ".join(f"{n}={p:.8f}" for n, p in zip(names, t.params))


def _prepare_trial(cfg: RunConfig, out=None):
    out = out or sys.stdout
    trial = cfg.resolved_trial()
    state = cfg.resolved_state(trial)
    H = Hamiltonian(trial.n, cfg.resolved_Z(state))
    if cfg.optimize:
        trial, _ = optimize_trial(H, trial)
        print(f"optimized {trial.form}: {_format_params(trial)}", file=out)
    return trial, state, H


def cmd_rayleigh(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    trial, state, H = _prepare_trial(cfg, out)
    if cfg.rayleigh_method not in ("quadrature", "metropolis", "both"):
        raise ConfigError(f"rayleigh_method must be quadrature, metropolis or both, not {cfg.rayleigh_method!r}")
    methods = ("quadrature", "metropolis") if cfg.rayleigh_method == "both" else (cfg.rayleigh_method,)
    if not cfg.optimize:
        print(f"trial {trial.form}: {_format_params(trial)}", file=out)
    results = []
    for m in methods:
        res = rayleigh_quotient(H, trial, method=m, budget=cfg.rayleigh_budget, seed=cfg.seed)
        results.append(res)
        extra = ""
        if m == "metropolis":
            extra = f", acceptance={res.acceptance:.3f}, tau={res.autocorr_time:.2f}"
        print(f"lambda0 = {res.lambda0:.10f} +- {res.sigma:.2e} ({m}, n={res.n_samples}{extra})", file=out)
    if len(results) == 2:
        q, m = results
        n_sigma = abs(q.lambda0 - m.lambda0) / max(np.hypot(q.sigma, m.sigma), 1e-300)
        print(f"quadrature - metropolis = {q.lambda0 - m.lambda0:+.2e} ({n_sigma:.2f} sigma)", file=out)
    return EXIT_OK


def run_pipeline(cfg: RunConfig, out=None):
    """Trial, lambda0, walk and fit; returns ``(points, fit, series)``."""
    out = out or sys.stdout
    trial, state, H = _prepare_trial(cfg, out)
    lam0 = cfg.lambda0
    if lam0 is None:
        lam0 = rayleigh_quotient(H, trial).lambda0
    print(f"lambda0 = {lam0:.10f}", file=out)
    spec = make_spec(
        state,
        trial,
        H.Z,
        lam0,
        n_paths=cfg.n_paths,
        checkpoints=cfg.checkpoints,
        scale=cfg.scale,
        seed=cfg.seed,
        cell_sign=cfg.cell_sign,
        drift_rule=cfg.drift_rule,
        burn_in=cfg.burn_in,
    )
    series = run_walk(spec, workers=max(1, cfg.workers))
    points = log_series(series)
    fit = fit_asymptote(points, t_min=cfg.t_min, lambda0=lam0, weighted=cfg.weighted)
    d = series.diagnostics
    extra = {
        "state": state.term,
        "trial": trial.form,
        "params": " ".join(repr(p) for p in trial.params),
        "Z": H.Z,
        "n_paths": cfg.n_paths,
        "scale": cfg.scale,
        "seed": cfg.seed,
        "drift_rule": cfg.drift_rule,
        "node_kills": d["node_kills"],
        "singular_kills": d["singular_kills"],
        "clamp_events": d["clamp_events"],
    }
    fit = dataclasses.replace(fit, extra=extra)
    return points, fit, series


def _print_fit_summary(fit, out) -> None:
    print(f"a = {fit.a:.8f} +- {fit.sigma_a:.2e}, b = {fit.b:.6f}, chi2 = {fit.chi2:.3f}", file=out)
    print(f"lambda1 = {format_uncertain(fit.lambda1, fit.sigma_a)}  (t >= {fit.t_min:g})", file=out)
    if fit.lambda1_drop_first is not None:
        print(
            f"lambda1 without the first fitted point = {fit.lambda1_drop_first:.6f} "
            f"(shift {fit.drop_first_shift:+.2e})",
            file=out,
        )


def _emit_plot(cfg_plot: bool, fit, points, out_path: Path, out) -> None:
    from nodalgfk.plotting import render_figure, write_plot_data

    stem = out_path.with_suffix("")
    for p in write_plot_data(fit, points, stem):
        print(f"wrote {p}", file=out)
    if cfg_plot:
        png = render_figure(fit, points, stem.with_suffix(".png"))
        print(f"wrote {png}", file=out)


def cmd_run(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    points, fit, series = run_pipeline(cfg, out)
    d = series.diagnostics
    print(
        f"paths={series.n_paths} alive at t={series.rows[-1].t:g}: {series.rows[-1].n_alive} "
        f"(node kills {d['node_kills']}, singular kills {d['singular_kills']}, clamps {d['clamp_events']})",
        file=out,
    )
    out_path = write_atomic(cfg.out, emit_fit_report(fit, points))
    print(f"wrote {out_path}", file=out)
    _emit_plot(cfg.plot, fit, points, out_path, out)
    _print_fit_summary(fit, out)
    return EXIT_OK


def reference_series_text() -> str:
    return resources.files("nodalgfk").joinpath("data/reference_pz_series.csv").read_text()


def cmd_fit(cfg: RunConfig, csv_path: str | None, out=None, out_path: str | None = None) -> int:
    out = out or sys.stdout
    if csv_path is None:
        text = reference_series_text()
    else:
        try:
            text = Path(csv_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {csv_path}: {exc.strerror}") from None
    try:
        points, summary = read_report(text)
    except ReportFormatError as exc:
        raise ConfigError(f"{csv_path or 'reference data'}: {exc}") from None
    lam0 = cfg.lambda0 if cfg.lambda0 is not None else summary.get("lambda0")
    if lam0 is None:
        raise ConfigError("lambda0 is not in the CSV summary; pass --lambda0")
    fit = fit_asymptote(points, t_min=cfg.t_min, lambda0=float(lam0), weighted=cfg.weighted)
    report = emit_fit_report(fit, points)
    if out_path:
        p = write_atomic(out_path, report)
        print(f"wrote {p}", file=out)
        _emit_plot(cfg.plot, fit, points, p, out)
    else:
        out.write(report)
    _print_fit_summary(fit, out)
    return EXIT_OK


def cmd_verify_nodes(labels, samples: int, seed: int, out=None) -> int:
    out = out or sys.stdout
    for label in labels:
        if label not in STATES:
            raise ConfigError(f"unknown state {label!r}; known: {', '.join(STATES)}")
    ok = True
    for label in labels:
        res = verify_nodes(STATES[label], samples=samples, seed=seed)
        for line in res.lines():
            print(line, file=out)
        ok &= res.passed
        if label.startswith("Li_"):
            rng = np.random.default_rng(seed + 7)
            pts = rng.normal(scale=1.5, size=(100, 3, 3))
            funcs = random_smooth_functions(seed + 8, 50, 9)
            defect = idempotence_defect(young_operator_li(), 3.0, funcs, pts)
            good = defect < 1e-10
            print(f"{label}: Y'Y' = 3Y' defect over 50 functions x 100 points = {defect:.2e} "
                  f"{'PASS' if good else 'FAIL'}", file=out)
            ok &= good
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int, dest="n_paths")
    common.add_argument("--scale", type=float)
    common.add_argument("--out")
    common.add_argument("--workers", type=int)
    common.add_argument("--lambda0", type=float)
    common.add_argument("--t-min", type=float, dest="t_min")
    common.add_argument("--state")
    common.add_argument("--samples", type=int)
    common.add_argument("--plot", action="store_true", default=None, help="also render a PNG (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nodalgfk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("rayleigh", parents=[common], help="variational energy of the trial function")
    sub.add_parser("run", parents=[common], help="walk, fit and write the z_t report")
    f = sub.add_parser("fit", parents=[common], help="refit an existing z_t CSV")
    f.add_argument("csv", nargs="?", help="CSV with t, zt, sigma columns")
    f.add_argument("--reference", action="store_true", help="fit the bundled reference He P_z series")
    f.add_argument("--unweighted", action="store_true")
    sub.add_parser("verify-nodes", parents=[common], help="projector tests of the nodal predicates")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    keys = ("seed", "n_paths", "scale", "workers", "lambda0", "t_min", "state", "samples", "plot")
    overrides = {k: getattr(args, k) for k in keys}
    if args.command != "fit":
        overrides["out"] = args.out
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "rayleigh":
            return cmd_rayleigh(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "fit":
            if args.unweighted:
                cfg.weighted = False
            if args.reference == (args.csv is not None):
                raise ConfigError("give exactly one of a CSV path or --reference")
            return cmd_fit(cfg, args.csv, out_path=args.out)
        labels = [cfg.state] if cfg.state else [s for s in STATES]
        return cmd_verify_nodes(labels, cfg.samples, cfg.seed)
    except (ConfigError, WalkConfigurationError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AllPathsKilledError, WeightOverflowError, SamplerError) as exc:
        print(f"walk failed: {exc}", file=sys.stderr)
        return EXIT_WALK
    except OptimizationError as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
