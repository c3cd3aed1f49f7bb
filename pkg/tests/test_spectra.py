import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nodalgfk.gfk import ZtRow, ZtSeries
from nodalgfk.spectra import (
    HEADER,
    FitError,
    ReportFormatError,
    emit_fit_report,
    fit_asymptote,
    format_uncertain,
    log_series,
    parse_fit_report,
    points_from_rows,
    read_report,
)

T = (8.0, 16.0, 24.0, 32.0, 40.0, 48.0)
# reference rows: t, zt, sigma of ln(zt)/t, and the reference fit column
REF_ZT = (0.482733, 0.802182, 1.231027, 2.333108, 4.734821, 6.348487)
REF_SIGMA = (0.000194, 0.000382, 0.000299, 0.001216, 0.001610, 0.000930)
REF_FIT = (-0.090174, -0.014894, 0.010199, 0.022745, 0.030273, 0.035292)
LAMBDA0 = -2.06460746


def synthetic(a, b, t=T, sigma=None):
    sigma = sigma or [1e-3 * (1 + k) for k in range(len(t))]
    return [(ti, a + b / ti, si) for ti, si in zip(t, sigma)]


def series(zs, sigmas=None, t=T):
    sigmas = sigmas or [0.01] * len(zs)
    return ZtSeries(tuple(ZtRow(ti, z, s, 100) for ti, z, s in zip(t, zs, sigmas)), 100, 0.0)


def test_log_transform_matches_reference_rows():
    pts = log_series(series(REF_ZT))
    assert pts[0].ln_zt == pytest.approx(-0.728291, abs=1e-6)
    assert pts[0].y == pytest.approx(-0.091036, abs=1e-6)
    assert pts[-1].y == pytest.approx(0.038504, abs=1e-6)


def test_log_transform_identity_and_sigma():
    pts = log_series(series([1.0, 2.0], [0.1, 0.4], t=(5.0, 10.0)))
    assert (pts[0].ln_zt, pts[0].y) == (0.0, 0.0)
    assert pts[0].sigma == pytest.approx(0.1 / (1.0 * 5.0))
    assert pts[1].sigma == pytest.approx(0.4 / (2.0 * 10.0))


def test_log_transform_rejects_non_positive():
    class Fake:
        rows = (ZtRow(1.0, 0.0, 0.1, 3),)

    with pytest.raises(FitError):
        log_series(Fake())
    with pytest.raises(FitError):
        points_from_rows([1.0], [-2.0], [0.1])


def test_exact_model_recovery():
    fit = fit_asymptote(synthetic(0.06, -1.2))
    assert fit.a == pytest.approx(0.06, abs=1e-12)
    assert fit.b == pytest.approx(-1.2, abs=1e-12)
    assert max(abs(r) for r in fit.residuals) < 1e-12
    assert fit.chi2 < 1e-18


t_sets = st.lists(st.floats(0.5, 200.0), min_size=3, max_size=12, unique=True)


@settings(max_examples=300, deadline=None)
@given(st.floats(-5, 5), st.floats(-50, 50), t_sets)
def test_exact_recovery_property(a, b, ts):
    ts = sorted(ts)
    assume(min(np.diff(1 / np.array(ts)[::-1])) > 1e-4)
    fit = fit_asymptote(synthetic(a, b, ts), t_min=ts[0])
    scale = 1 + abs(a) + abs(b)
    assert abs(fit.a - a) < 1e-12 * scale * 1e2 and abs(fit.b - b) < 1e-12 * scale * 1e3
    for (t, y, _), yf in zip(synthetic(a, b, ts), fit.fitted):
        assert yf == fit.a + fit.b / t


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(-3, 3))
def test_shift_equivariance(c, noise_seed):
    rng = np.random.default_rng(int(abs(noise_seed) * 1000))
    pts = [(t, 0.05 - 1.1 / t + 1e-3 * rng.normal(), 1e-3) for t in T]
    base = fit_asymptote(pts)
    shifted = fit_asymptote([(t, y + c, s) for t, y, s in pts])
    assert shifted.a == pytest.approx(base.a + c, abs=1e-12)
    assert shifted.b == pytest.approx(base.b, abs=1e-11)


@pytest.mark.parametrize("k", [0.25, 2.0, 3.7, 1e3])
def test_weight_invariance(k):
    pts = list(zip(T, [math.log(z) / t for z, t in zip(REF_ZT, T)], REF_SIGMA))
    base = fit_asymptote(pts)
    scaled = fit_asymptote([(t, y, s * k) for t, y, s in pts])
    assert scaled.a == pytest.approx(base.a, rel=1e-13)
    assert scaled.b == pytest.approx(base.b, rel=1e-13)
    if k in (0.25, 2.0):
        assert (scaled.a, scaled.b) == (base.a, base.b)


def test_two_point_solve_of_reference_fit_column():
    # y = a + b/t through the first two reference fit entries
    (t1, t2), (y1, y2) = T[:2], REF_FIT[:2]
    b = (y1 - y2) / (1 / t1 - 1 / t2)
    a = y1 - b / t1
    assert a == pytest.approx(0.060386, abs=2e-6)
    assert b == pytest.approx(-1.20448, abs=2e-5)
    for t, quoted in zip(T[2:], REF_FIT[2:]):
        assert a + b / t == pytest.approx(quoted, abs=2e-6)


def test_lambda1_identity():
    fit = fit_asymptote(synthetic(0.0604641, -1.2), lambda0=LAMBDA0)
    assert fit.lambda1 == LAMBDA0 - fit.a
    # quoted to seven decimals
    assert round(fit.lambda1, 7) == -2.1250716


def test_preconditions():
    with pytest.raises(FitError):
        fit_asymptote(synthetic(0.06, -1.2)[:2])
    with pytest.raises(FitError):
        fit_asymptote(synthetic(0.06, -1.2), t_min=100.0)
    with pytest.raises(FitError):
        fit_asymptote([(8.0, 0.1, 1e-3)] * 4)
    with pytest.raises(FitError):
        fit_asymptote(synthetic(0.06, -1.2, sigma=[0.0] * 6))
    # unweighted fits tolerate zero sigma
    fit = fit_asymptote(synthetic(0.06, -1.2, sigma=[0.0] * 6), weighted=False)
    assert fit.a == pytest.approx(0.06, abs=1e-12)


def test_t_min_window():
    pts = synthetic(0.06, -1.2)
    pts[0] = (8.0, 5.0, 1e-3)  # outlier outside the window
    fit = fit_asymptote(pts, t_min=16.0)
    assert fit.a == pytest.approx(0.06, abs=1e-12)
    assert len(fit.fitted) == 6 and abs(fit.residuals[0]) > 1


def test_leave_first_out_diagnostic():
    pts = points_from_rows(T, REF_ZT, REF_SIGMA)
    fit = fit_asymptote(pts, lambda0=LAMBDA0)
    again = fit_asymptote(pts[1:], t_min=16.0, lambda0=LAMBDA0)
    assert fit.lambda1_drop_first == pytest.approx(again.lambda1, abs=1e-15)
    assert fit.drop_first_shift == pytest.approx(again.lambda1 - fit.lambda1)
    assert fit_asymptote(pts[3:], t_min=32.0).lambda1_drop_first is None


def test_sigma_a_weighted_matches_covariance():
    pts = points_from_rows(T, REF_ZT, REF_SIGMA)
    fit = fit_asymptote(pts)
    X = np.column_stack([np.ones(6), 1 / np.array(T)])
    W = np.diag(1 / np.array(REF_SIGMA) ** 2)
    cov = np.linalg.inv(X.T @ W @ X)
    coef = cov @ X.T @ W @ np.array([p.y for p in pts])
    assert fit.a == pytest.approx(coef[0], rel=1e-10)
    assert fit.b == pytest.approx(coef[1], rel=1e-10)
    assert fit.sigma_a == pytest.approx(math.sqrt(cov[0, 0]), rel=1e-10)


def test_report_layout_and_round_trip():
    pts = points_from_rows(T, REF_ZT, REF_SIGMA)
    fit = fit_asymptote(pts, lambda0=LAMBDA0)
    text = emit_fit_report(fit, pts)
    lines = text.splitlines()
    assert lines[0] == ",".join(HEADER)
    rows = [ln for ln in lines[1:] if not ln.startswith("#")]
    assert len(rows) == len(pts)
    assert rows[0].split(",")[1] == "0.482733"
    keys = [ln[2:].split("=")[0] for ln in lines if ln.startswith("#")]
    assert keys[:4] == ["lambda0", "a", "b", "sigma_a"] and "lambda1" in keys
    _, back = parse_fit_report(text)
    for name in ("a", "b", "chi2", "lambda0", "lambda1", "sigma_a", "t_min", "lambda1_drop_first"):
        assert getattr(back, name) == pytest.approx(getattr(fit, name), abs=1e-12, rel=1e-12)
    assert np.allclose(back.fitted, fit.fitted, rtol=0, atol=1e-12)


def test_report_rejects_malformed_text():
    with pytest.raises(ReportFormatError):
        read_report("")
    with pytest.raises(ReportFormatError):
        read_report("t,zt\n1,2\n")
    with pytest.raises(ReportFormatError, match="line 2"):
        read_report("t,zt,sigma\n1,2\n")
    with pytest.raises(ReportFormatError, match="line 3"):
        read_report("t,zt,sigma\n1,2,0.1\n2,x,0.1\n")


@pytest.mark.parametrize(
    "value,sigma,text",
    [(-2.1250716, 1e-7, "-2.1250716(1)"), (-2.12547, 3.7e-4, "-2.1255(4)"), (1.5, 0.0, "1.5000000000")],
)
def test_uncertainty_format(value, sigma, text):
    assert format_uncertain(value, sigma) == text
