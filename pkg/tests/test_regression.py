import logging
import math

import numpy as np
import pandas as pd
import pytest

from oracles import brute_force_cr1, lsdv_coefficients, random_panel
from webshock import regression
from webshock.errors import EstimationError, SpecificationError


# --- specifications -------------------------------------------------------

def test_spec_presets():
    eq1 = regression.spec_eq1()
    assert eq1.fe_dims == ("firm_id", "quarter")
    assert eq1.regressors == regression.BASE_REGRESSORS
    eq2 = regression.spec_eq2()
    assert set(regression.POLICY_CONTROLS) <= set(eq2.regressors)
    eq3 = regression.spec_eq3()
    assert ("country", "nace2", "quarter") in eq3.fe_dims


def test_spec_validation():
    with pytest.raises(SpecificationError, match="fixed-effect"):
        regression.RegressionSpec(dependent="sales_growth", regressors=("x",),
                                  fe_dims=())
    with pytest.raises(SpecificationError, match="unknown dependent"):
        regression.RegressionSpec(dependent="profit", regressors=("x",),
                                  fe_dims=("firm_id",))


def test_policy_controls_with_interacted_fe_rejected():
    spec = regression.RegressionSpec(
        dependent="sales_growth",
        regressors=regression.BASE_REGRESSORS + regression.POLICY_CONTROLS,
        fe_dims=("firm_id", ("country", "nace2", "quarter")))
    with pytest.raises(SpecificationError, match="collinear"):
        regression.run_spec(pd.DataFrame(), spec)


# --- absorption -----------------------------------------------------------

def test_absorb_single_dimension_is_demeaning():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    labels = rng.integers(0, 3, size=30)
    Xt, yt, it = regression.absorb_fixed_effects(X, y, [labels])
    for g in range(3):
        sel = labels == g
        assert np.allclose(Xt[sel].mean(axis=0), 0, atol=1e-12)
        assert abs(yt[sel].mean()) < 1e-12


def test_absorb_reports_non_convergence():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 1))
    y = rng.normal(size=40)
    labels = [rng.integers(0, 5, 40), rng.integers(0, 5, 40)]
    with pytest.raises(EstimationError, match="did not converge"):
        regression.absorb_fixed_effects(X, y, labels, max_iter=1)


# --- OLS and collinearity -------------------------------------------------

def test_ols_exact_fit():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
    beta, resid, kept, dropped = regression.estimate_ols(X, X @ [2.0, -1.0])
    assert np.allclose(beta, [2.0, -1.0])
    assert np.allclose(resid, 0)
    assert kept == [0, 1] and dropped == []


def test_ols_zero_variance_raises():
    X = np.column_stack([np.zeros(10), np.ones(10)])
    with pytest.raises(EstimationError, match="zero variance"):
        regression.estimate_ols(X, np.ones(10), names=["dead", "alive"])


def test_ols_collinear_dropped_first_listed_kept(caplog):
    rng = np.random.default_rng(2)
    a = rng.normal(size=20)
    X = np.column_stack([a, 2 * a, rng.normal(size=20)])
    with caplog.at_level(logging.WARNING):
        beta, _, kept, dropped = regression.estimate_ols(
            X, rng.normal(size=20), names=["a", "twice_a", "b"])
    assert kept == [0, 2] and dropped == ["twice_a"]
    assert "twice_a" in caplog.text


def test_clustered_se_matches_brute_force():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 3))
    e = rng.normal(size=80)
    clusters = rng.integers(0, 8, size=80)
    got = regression.clustered_se(X, e, clusters)
    assert np.allclose(got, brute_force_cr1(X, e, clusters), rtol=1e-12)


def test_clustered_se_needs_two_clusters():
    with pytest.raises(EstimationError, match="2 clusters"):
        regression.clustered_se(np.ones((5, 1)), np.zeros(5), np.zeros(5))


# --- run_spec vs dummy-variable oracle ------------------------------------

def _panel_df(rng, n_fe=2):
    X, y, fe_labels, clusters = random_panel(rng, n_fe)
    df = pd.DataFrame(X, columns=["x1", "x2", "x3"])
    df["dlog_sales_pct"] = y
    for i, labels in enumerate(fe_labels):
        df[f"f{i}"] = labels
    df["firm_id"] = clusters
    fe_dims = tuple(f"f{i}" for i in range(n_fe))
    spec = regression.RegressionSpec(dependent="sales_growth",
                                     regressors=("x1", "x2", "x3"),
                                     fe_dims=fe_dims)
    return df, spec, X, y, fe_labels


def test_run_spec_matches_lsdv():
    rng = np.random.default_rng(4)
    for _ in range(5):
        df, spec, X, y, fe_labels = _panel_df(rng)
        res = regression.run_spec(df, spec)
        oracle = lsdv_coefficients(X, y, fe_labels)
        got = np.array([res.coefficients[c] for c in ("x1", "x2", "x3")])
        assert np.allclose(got, oracle, rtol=1e-8)
        assert res.n_obs == len(df)
        assert 0.0 <= res.r2_within <= 1.0


def test_run_spec_missing_columns_and_empty_sample():
    df = pd.DataFrame({"dlog_sales_pct": [1.0], "firm_id": ["a"],
                       "quarter": ["2020Q1"]})
    with pytest.raises(SpecificationError, match="lacks columns"):
        regression.run_spec(df, regression.spec_eq1())
    df, spec, *_ = _panel_df(np.random.default_rng(5))
    df["dlog_sales_pct"] = np.nan
    with pytest.raises(EstimationError, match="empty"):
        regression.run_spec(df, spec)


def test_run_spec_sample_window_and_sector_filter():
    rng = np.random.default_rng(6)
    df, spec, *_ = _panel_df(rng, n_fe=1)
    df["year"] = 2020
    df["q"] = rng.integers(1, 5, size=len(df))
    df["nace2"] = rng.choice([10, 56], size=len(df))
    narrowed = regression.RegressionSpec(
        dependent="sales_growth", regressors=("x1", "x2", "x3"),
        fe_dims=("f0",), sample_window=((2020, 2), (2020, 3)),
        sector_filter=regression.MANUFACTURING_NACE)
    res = regression.run_spec(df, narrowed)
    expected = ((df.q.between(2, 3)) & (df.nace2 == 10)).sum()
    assert res.n_obs == expected


def test_lagged_dependent_and_nickell_note():
    rng = np.random.default_rng(7)
    rows = []
    for firm in range(12):
        for t in range(8):
            rows.append({"firm_id": f"F{firm}", "year": 2019 + t // 4,
                         "q": t % 4 + 1,
                         "dlog_sales_pct": rng.normal(),
                         "x1": rng.normal()})
    df = pd.DataFrame(rows)
    # drop one quarter for one firm: its next quarter must lose the lag
    df = df[~((df.firm_id == "F0") & (df.year == 2019) & (df.q == 2))]
    lagged = regression.add_lagged_dependent(df, "dlog_sales_pct")
    gap_row = lagged[(lagged.firm_id == "F0") & (lagged.year == 2019)
                     & (lagged.q == 3)]
    assert gap_row.lag_dep.isna().all()
    spec = regression.RegressionSpec(
        dependent="sales_growth", regressors=("x1",),
        fe_dims=("firm_id", "quarter"), include_lagged_dependent=True)
    df["quarter"] = df.year.astype(str) + "Q" + df.q.astype(str)
    res = regression.run_spec(df, spec)
    assert "lag_dep" in res.coefficients
    assert "Nickell" in res.residual_diagnostics
    assert "-0.06" in res.residual_diagnostics


# --- scalar reconciliations ----------------------------------------------

def test_nickell_bound():
    assert regression.nickell_bound(-0.306, 24) == pytest.approx(-0.030174,
                                                                 abs=1e-6)
    with pytest.raises(ValueError):
        regression.nickell_bound(-0.3, 1)


def test_annualize_and_inverse():
    assert regression.annualize_quarterly_pct(-3.180) == pytest.approx(-12.13,
                                                                       abs=0.01)
    for c in (-5.0, -1.0, 0.0, 2.5):
        a = regression.annualize_quarterly_pct(c)
        assert regression.deannualize_annual_pct(a) == pytest.approx(c,
                                                                     abs=1e-10)


def test_significance_stars():
    assert regression.significance_stars(0.2) == ""
    assert regression.significance_stars(0.04) == "*"
    assert regression.significance_stars(0.009) == "**"
    assert regression.significance_stars(0.0009) == "***"


def test_render_table_layout():
    res = regression.RegressionResult(
        coefficients={"severe": -3.18}, clustered_se={"severe": 0.5},
        n_firms=100, n_obs=400, r2_within=0.12, fe_iterations=3,
        residual_diagnostics="diag line", label="eq1")
    text = regression.render_table([res])
    assert "severe" in text and "(0.500)" in text
    assert "No. Firms" in text and "100" in text
    assert "clustered at the firm level" in text
    assert "diag line" in text
