import math
from datetime import date

import pandas as pd
import pytest

from webshock import panel
from webshock.archive import FirmRecord, SnapshotId
from webshock.classify import FirmPeriodIndicator
from webshock.policy import PolicyPoint, PolicySeries


def _snap(sid, start, end):
    return SnapshotId(date.fromisoformat(start), date.fromisoformat(end), sid, "")


def _pol(region, rows):
    return PolicySeries(region, tuple(
        PolicyPoint(day=date.fromisoformat(d), stringency=s, workplace_closing=wc,
                    stay_home=sh, fiscal=f, deaths=dead)
        for d, s, wc, sh, f, dead in rows))


# --- scalar helpers -------------------------------------------------------

def test_parse_quarter_and_quarter_of():
    assert panel.parse_quarter("2020Q3") == (2020, 3)
    assert panel.parse_quarter("2019q1") == (2019, 1)
    with pytest.raises(ValueError):
        panel.parse_quarter("2020Q5")
    assert panel.quarter_of(date(2020, 3, 31)) == (2020, 1)
    assert panel.quarter_of(date(2020, 4, 1)) == (2020, 2)
    assert panel.quarter_of(date(2020, 12, 31)) == (2020, 4)


def test_log_growth_pct():
    assert panel.log_growth_pct(110, 100) == pytest.approx(
        100 * math.log(1.1))
    with pytest.raises(ValueError):
        panel.log_growth_pct(-1, 100)


def test_adjusted_return_pct():
    # a 2:1 split halves close and cum_adj: adjusted return is zero
    assert panel.adjusted_return_pct(50, 0.5, 1.0, 100, 1.0, 1.0) == \
        pytest.approx(0.0)
    assert panel.adjusted_return_pct(110, 1.0, 1.0, 100, 1.0, 1.0) == \
        pytest.approx(100 * math.log(1.1))
    with pytest.raises(ValueError):
        panel.adjusted_return_pct(0, 1, 1, 100, 1, 1)


def test_concordance_longest_prefix(tmp_path):
    p = tmp_path / "conc.csv"
    p.write_text("naics,nace2\n72,56\n7225,56\n31,10\n")
    table = panel.load_concordance(p)
    assert panel.naics_to_nace2("722511", table) == 56
    assert panel.naics_to_nace2("31xxxx", table) == 10
    assert panel.naics_to_nace2("99", table) is None


def test_load_financials_rejects_duplicates(tmp_path):
    p = tmp_path / "fin.csv"
    p.write_text("firm_id,quarter,sales,assets,employees,currency,close,cum_adj,trf\n"
                 "F1,2020Q1,10,100,5,USD,1,1,1\nF1,2020Q1,11,100,5,USD,1,1,1\n")
    with pytest.raises(ValueError, match="duplicated"):
        panel.load_financials(p)


def test_load_fx(tmp_path):
    p = tmp_path / "fx.csv"
    p.write_text("currency,quarter,usd_rate\nEUR,2020Q1,1.10\n")
    assert panel.load_fx(p) == {("EUR", 2020, 1): 1.10}


# --- snapshot-quarter mapping ---------------------------------------------

def test_snapshot_quarters_by_midpoint():
    reg = [_snap("A", "2020-01-01", "2020-01-31"),
           _snap("B", "2020-03-01", "2020-04-30"),   # midpoint ~Mar 31 -> Q1
           _snap("C", "2020-05-01", "2020-06-30")]
    assert panel.snapshot_quarters(reg) == {
        "A": (2020, 1), "B": (2020, 1), "C": (2020, 2)}


def test_snapshot_quarters_rejects_gaps():
    reg = [_snap("A", "2020-01-01", "2020-01-31"),
           _snap("B", "2020-07-01", "2020-07-31")]   # Q2 uncovered
    with pytest.raises(ValueError, match="without a snapshot"):
        panel.snapshot_quarters(reg)


# --- policy controls ------------------------------------------------------

def test_quarterly_policy_controls_semantics():
    pol = _pol("DE", [
        ("2020-01-10", 0, 0, 0, 0, 0.0),
        ("2020-02-10", 40, 1, 1, 100.0, 2.0),
        ("2020-03-10", 70, 3, 2, 200.0, 4.0),
    ])
    df = panel.quarterly_policy_controls([pol])
    row = df[(df.year == 2020) & (df.q == 1)].iloc[0]
    # ordinal quarter max is 3: above 'recommended'=1, at/above 'required'=2
    assert row.workplace_recommended == 0.0 and row.workplace_required == 1.0
    assert row.stayhome_recommended == 0.0 and row.stayhome_required == 1.0
    assert row.log_fiscal == pytest.approx(math.log1p(200.0))
    assert row.covid_deaths == pytest.approx(2.0)


def test_quarterly_policy_controls_recommended_peak():
    pol = _pol("DE", [("2020-04-10", 30, 1, 1, 50.0, 1.0)])
    row = panel.quarterly_policy_controls([pol]).iloc[0]
    assert row.workplace_recommended == 1.0 and row.workplace_required == 0.0


# --- panel assembly -------------------------------------------------------

def _fixture_panel(tmp_path, fx=None):
    fin = tmp_path / "fin.csv"
    fin.write_text(
        "firm_id,quarter,sales,assets,employees,currency,close,cum_adj,trf\n"
        "F1,2019Q4,100,1000,20,USD,50,1,1\n"
        "F1,2020Q1,90,1000,20,USD,45,1,1\n"
        "F1,2020Q3,95,1000,20,USD,46,1,1\n"   # 2020Q2 missing: no growth in Q3
        "F2,2020Q1,200,2000,30,EUR,80,1,1\n")
    financials = panel.load_financials(fin)
    firms = {
        "F1": FirmRecord("F1", frozenset({"f1.example"}), "DE", "Berlin", 56, 20),
        "F2": FirmRecord("F2", frozenset({"f2.example"}), "FR", "Paris", 46, 30),
    }
    registry = [_snap("S1", "2020-01-01", "2020-01-31")]
    inds = [FirmPeriodIndicator("F1", "S1", True, 3, frozenset({"demand"}),
                                frozenset({"closure"}), 2)]
    pol = [_pol("DE", [("2020-02-10", 40, 1, 1, 100.0, 2.0)])]
    fx = {("EUR", 2020, 1): 1.10} if fx is None else fx
    return panel.build_panel(financials, fx, inds, registry, pol, firms)


def test_build_panel_growth_needs_consecutive_quarter(tmp_path):
    df = _fixture_panel(tmp_path).set_index(["firm_id", "year", "q"])
    q1 = df.loc[("F1", 2020, 1)]
    assert q1.dlog_sales_pct == pytest.approx(100 * math.log(90 / 100))
    assert q1.dlog_return_pct == pytest.approx(100 * math.log(45 / 50))
    assert q1.lag_log_assets == pytest.approx(math.log(1000))
    q3 = df.loc[("F1", 2020, 3)]
    assert math.isnan(q3.dlog_sales_pct) and math.isnan(q3.lag_log_assets)
    # first observed quarter has no predecessor either
    assert math.isnan(df.loc[("F1", 2019, 4)].dlog_sales_pct)


def test_build_panel_dummies_and_controls(tmp_path):
    df = _fixture_panel(tmp_path).set_index(["firm_id", "year", "q"])
    q1 = df.loc[("F1", 2020, 1)]
    assert (q1.covid_mention, q1.mild, q1.moderate, q1.severe) == (1, 0, 0, 1)
    # pre-pandemic quarters carry zero dummies even if data existed
    pre = df.loc[("F1", 2019, 4)]
    assert (pre.covid_mention, pre.severe) == (0, 0)
    # 2019Q4 precedes DE's first policy datum: explicit zero controls
    assert pre.workplace_required == 0.0 and pre.covid_deaths == 0.0
    assert q1.workplace_recommended == 1.0
    # FR has no policy series at all: controls stay missing
    fr = df.loc[("F2", 2020, 1)]
    assert math.isnan(fr.workplace_required)


def test_build_panel_requires_fx_rate(tmp_path):
    with pytest.raises(KeyError, match="missing FX rate"):
        _fixture_panel(tmp_path, fx={})


def test_panel_observations_roundtrip(tmp_path):
    obs = panel.panel_observations(_fixture_panel(tmp_path))
    assert {o.firm_id for o in obs} == {"F1", "F2"}
    assert all(o.mild + o.moderate + o.severe <= 1 for o in obs)


def test_panel_observation_validation():
    with pytest.raises(ValueError, match="one-hot"):
        panel.PanelObservation("F", 2020, 1, None, None, None, 1, 1, 1, 0,
                               "DE", 56)
    with pytest.raises(ValueError, match="without mention"):
        panel.PanelObservation("F", 2020, 1, None, None, None, 0, 0, 0, 1,
                               "DE", 56)
