"""From a z_t series to an eigenvalue: log transform, ``a + b/t`` fit, CSV report.

Report layout (one row per checkpoint)::

    t,zt,ln_zt,ln_zt_over_t,sigma,ln_zt_over_t_lsfit

``sigma`` is the standard error of ``ln(zt)/t``.  The summary follows as
``# key=value`` comment lines, with floats written in round-trip precision.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

HEADER = ("t", "zt", "ln_zt", "ln_zt_over_t", "sigma", "ln_zt_over_t_lsfit")


class FitError(ValueError):
    pass


class ReportFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LogPoint:
    t: float
    zt: float
    ln_zt: float
    y: float
    sigma: float


def log_series(series) -> list:
    """``(t, zt, ln zt, ln(zt)/t, sigma_y)`` with ``sigma_y = sigma_z / (zt t)``."""
    out = []
    for row in series.rows:
        if not row.zt > 0:
            raise FitError(f"z_t must be positive, got {row.zt} at t={row.t:g}")
        lz = math.log(row.zt)
        out.append(LogPoint(row.t, row.zt, lz, lz / row.t, row.sigma / (row.zt * row.t)))
    return out


def points_from_rows(t, zt, sigma_y) -> list:
    """Log points from ``(t, zt)`` with ``sigma_y`` already on the ``ln(zt)/t`` scale."""
    out = []
    for ti, zi, si in zip(t, zt, sigma_y):
        if not zi > 0:
            raise FitError(f"z_t must be positive, got {zi} at t={ti:g}")
        lz = math.log(zi)
        out.append(LogPoint(float(ti), float(zi), lz, lz / ti, float(si)))
    return out


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    sigma_a: float
    chi2: float
    lambda0: float
    lambda1: float
    t_min: float
    weighted: bool
    t: tuple
    y: tuple
    sigma: tuple
    fitted: tuple
    residuals: tuple
    lambda1_drop_first: float | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def drop_first_shift(self) -> float | None:
        if self.lambda1_drop_first is None:
            return None
        return self.lambda1_drop_first - self.lambda1


def _solve(t, y, w):
    x = 1.0 / t
    sw = w.sum()
    xm = np.sum(w * x) / sw
    ym = np.sum(w * y) / sw
    sxx = np.sum(w * (x - xm) ** 2)
    if not sxx > 1e-300 or np.ptp(t) == 0:
        raise FitError("degenerate design: the fit needs at least two distinct times")
    b = np.sum(w * (x - xm) * (y - ym)) / sxx
    a = ym - b * xm
    var_a = 1.0 / sw + xm**2 / sxx
    return float(a), float(b), float(var_a)


def fit_asymptote(points, t_min: float = 8.0, lambda0: float = 0.0, weighted: bool = True) -> FitResult:
    """Least-squares fit of ``y = a + b/t`` to points with ``t >= t_min``.

    With ``weighted`` the weights are ``1/sigma^2`` and ``sigma_a`` comes from
    the normal equations; otherwise ``sigma_a`` uses the residual variance.
    ``lambda1 = lambda0 - a``.
    """
    pts = [p if isinstance(p, LogPoint) else LogPoint(p[0], math.nan, math.nan, p[1], p[2]) for p in points]
    t = np.array([p.t for p in pts], dtype=float)
    y = np.array([p.y for p in pts], dtype=float)
    s = np.array([p.sigma for p in pts], dtype=float)
    use = t >= t_min - 1e-12
    if use.sum() < 3:
        raise FitError(f"need at least 3 points with t >= {t_min:g}, have {int(use.sum())}")
    if weighted and np.any(s[use] <= 0):
        raise FitError("weighted fit needs positive sigmas")
    w = 1.0 / s[use] ** 2 if weighted else np.ones(use.sum())
    a, b, var_a = _solve(t[use], y[use], w)
    fitted = a + b / t
    resid = y - fitted
    chi2 = float(np.sum(w * resid[use] ** 2))
    if not weighted:
        dof = max(int(use.sum()) - 2, 1)
        var_a *= chi2 / dof
    drop = None
    if use.sum() >= 4:
        first = np.flatnonzero(use)[0]
        keep = use.copy()
        keep[first] = False
        wk = 1.0 / s[keep] ** 2 if weighted else np.ones(keep.sum())
        drop = lambda0 - _solve(t[keep], y[keep], wk)[0]
    return FitResult(
        a=a,
        b=b,
        sigma_a=math.sqrt(var_a),
        chi2=chi2,
        lambda0=float(lambda0),
        lambda1=float(lambda0 - a),
        t_min=float(t_min),
        weighted=weighted,
        t=tuple(t.tolist()),
        y=tuple(y.tolist()),
        sigma=tuple(s.tolist()),
        fitted=tuple(fitted.tolist()),
        residuals=tuple(resid.tolist()),
        lambda1_drop_first=drop,
    )


def format_uncertain(value: float, sigma: float) -> str:
    """``-2.1250716(1)``-style rendering with one digit of uncertainty."""
    if not sigma > 0 or not math.isfinite(sigma):
        return f"{value:.10f}"
    digits = max(0, -int(math.floor(math.log10(sigma))))
    unit = 10.0**-digits
    err = int(math.ceil(sigma / unit - 1e-9))
    if err >= 10:
        digits = max(0, digits - 1)
        unit = 10.0**-digits
        err = int(math.ceil(sigma / unit - 1e-9))
    return f"{value:.{digits}f}({err})"


def emit_fit_report(fit: FitResult, points) -> str:
    """CSV text: one row per point, then the summary comment block."""
    if len(points) != len(fit.t):
        raise ValueError("points and fit have different lengths")
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for p, yf in zip(points, fit.fitted):
        buf.write(f"{p.t:g},{p.zt:.6f},{p.ln_zt:.6f},{p.y:.6f},{p.sigma:.6g},{yf:.6f}\n")
    summary = {
        "lambda0": fit.lambda0,
        "a": fit.a,
        "b": fit.b,
        "sigma_a": fit.sigma_a,
        "chi2": fit.chi2,
        "lambda1": fit.lambda1,
        "t_min": fit.t_min,
        "weighted": fit.weighted,
        "lambda1_drop_first": fit.lambda1_drop_first,
    }
    summary.update(fit.extra)
    for k, v in summary.items():
        buf.write(f"# {k}={v!r}\n" if isinstance(v, float) else f"# {k}={v}\n")
    return buf.getvalue()


def _parse_value(v: str):
    if v in ("True", "False"):
        return v == "True"
    if v == "None":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_report(text: str) -> tuple:
    """Parse report text into ``(points, summary)``.

    Only ``t``, ``zt`` and ``sigma`` are taken from the rows; the derived
    columns are recomputed.  Raises :class:`ReportFormatError` with a line
    number on malformed input.
    """
    summary: dict = {}
    rows = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                summary[k.strip()] = _parse_value(v.strip())
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = cells
            missing = [c for c in ("t", "zt", "sigma") if c not in header]
            if missing:
                raise ReportFormatError(f"line {lineno}: header lacks column(s) {', '.join(missing)}")
            continue
        if len(cells) != len(header):
            raise ReportFormatError(f"line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rec = {h: float(c) for h, c in zip(header, cells) if c != ""}
            rows.append((rec["t"], rec["zt"], rec["sigma"]))
        except (ValueError, KeyError) as exc:
            raise ReportFormatError(f"line {lineno}: {exc}") from None
    if header is None:
        raise ReportFormatError("no header line found")
    if not rows:
        raise ReportFormatError("no data rows")
    t, zt, s = zip(*rows)
    try:
        points = points_from_rows(t, zt, s)
    except (FitError, ZeroDivisionError) as exc:
        raise ReportFormatError(str(exc)) from None
    return points, summary


def parse_fit_report(text: str) -> tuple:
    """Inverse of :func:`emit_fit_report` (fitted values rebuilt from ``a`` and ``b``)."""
    points, summary = read_report(text)
    try:
        a, b = float(summary["a"]), float(summary["b"])
    except KeyError as exc:
        raise ReportFormatError(f"summary lacks {exc}") from None
    t = np.array([p.t for p in points])
    y = np.array([p.y for p in points])
    fitted = a + b / t
    known = {"lambda0", "a", "b", "sigma_a", "chi2", "lambda1", "t_min", "weighted", "lambda1_drop_first"}
    fit = FitResult(
        a=a,
        b=b,
        sigma_a=float(summary.get("sigma_a", math.nan)),
        chi2=float(summary.get("chi2", math.nan)),
        lambda0=float(summary.get("lambda0", 0.0)),
        lambda1=float(summary.get("lambda1", -a)),
        t_min=float(summary.get("t_min", 8.0)),
        weighted=bool(summary.get("weighted", True)),
        t=tuple(t.tolist()),
        y=tuple(y.tolist()),
        sigma=tuple(p.sigma for p in points),
        fitted=tuple(fitted.tolist()),
        residuals=tuple((y - fitted).tolist()),
        lambda1_drop_first=summary.get("lambda1_drop_first"),
        extra={k: v for k, v in summary.items() if k not in known},
    )
    return points, fit
