"""Build the firm-quarter estimation panel.

Joins quarterly financials (converted to USD), the per-snapshot firm
affectedness indicators (mapped to quarters via each snapshot's window
midpoint), and country-quarter policy controls.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

import pandas as pd

from .archive import FirmRecord, SnapshotId
from .classify import FirmPeriodIndicator
from .policy import PolicySeries

PANDEMIC_START = (2020, 1)


@dataclass(frozen=True)
class PolicyLevels:
    """Ordinal thresholds for the recommended/required control dummies."""

    workplace_recommend: int = 1
    workplace_require: int = 2
    stayhome_recommend: int = 1
    stayhome_require: int = 2


@dataclass(frozen=True)
class PanelObservation:
    """One firm-quarter row of the estimation panel."""

    firm_id: str
    year: int
    q: int
    dlog_sales_pct: Optional[float]
    dlog_return_pct: Optional[float]
    lag_log_assets: Optional[float]
    covid_mention: int
    mild: int
    moderate: int
    severe: int
    country: str
    nace2: int
    workplace_recommended: Optional[float] = None
    workplace_required: Optional[float] = None
    stayhome_recommended: Optional[float] = None
    stayhome_required: Optional[float] = None
    log_fiscal: Optional[float] = None
    covid_deaths: Optional[float] = None

    def __post_init__(self):
        if self.mild + self.moderate + self.severe > 1:
            raise ValueError("severity dummies must be one-hot")
        if (self.mild or self.moderate or self.severe) and not self.covid_mention:
            raise ValueError("severity dummy without mention dummy")


def parse_quarter(text: str) -> tuple[int, int]:
    """'2020Q2' -> (2020, 2)."""
    year, q = text.upper().split("Q")
    q = int(q)
    if not 1 <= q <= 4:
        raise ValueError(f"bad quarter {text!r}")
    return int(year), q


def quarter_of(day: date) -> tuple[int, int]:
    return day.year, (day.month - 1) // 3 + 1


def log_growth_pct(current: float, previous: float) -> float:
    """100 * (ln current - ln previous); both levels must be positive."""
    if current <= 0 or previous <= 0:
        raise ValueError("levels must be positive")
    return 100.0 * (math.log(current) - math.log(previous))


def adjusted_return_pct(close_t: float, cum_adj_t: float, trf_t: float,
                        close_p: float, cum_adj_p: float, trf_p: float) -> float:
    """Log return in percent on split- and distribution-adjusted prices."""
    inputs = (close_t, cum_adj_t, trf_t, close_p, cum_adj_p, trf_p)
    if any(v <= 0 for v in inputs):
        raise ValueError("all price inputs must be positive")
    adj_t = close_t / cum_adj_t * trf_t
    adj_p = close_p / cum_adj_p * trf_p
    return 100.0 * math.log(adj_t / adj_p)


def load_concordance(path) -> dict[str, int]:
    """NAICS code -> 2-digit NACE code."""
    table = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            table[row["naics"].strip()] = int(row["nace2"])
    return table


def naics_to_nace2(naics: str, concordance: dict[str, int]) -> Optional[int]:
    """Longest-prefix lookup so 6-digit codes fall back to coarser entries."""
    code = naics.strip()
    while code:
        if code in concordance:
            return concordance[code]
        code = code[:-1]
    return None


def load_financials(path) -> pd.DataFrame:
    """Quarterly financials CSV: firm_id, quarter, sales, assets, employees,
    currency, close, cum_adj, trf. Duplicated firm-quarters are rejected.
    """
    df = pd.read_csv(path, dtype={"firm_id": str, "quarter": str, "currency": str})
    yq = df["quarter"].map(parse_quarter)
    df["year"] = [t[0] for t in yq]
    df["q"] = [t[1] for t in yq]
    dupes = df.duplicated(subset=["firm_id", "year", "q"])
    if dupes.any():
        bad = df.loc[dupes, ["firm_id", "quarter"]].iloc[0]
        raise ValueError(f"duplicated firm-quarter in financials: "
                         f"{bad['firm_id']} {bad['quarter']}")
    return df


def load_fx(path) -> dict[tuple[str, int, int], float]:
    """FX CSV: currency, quarter, usd_rate (USD per unit at quarter end)."""
    rates = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            year, q = parse_quarter(row["quarter"])
            rates[(row["currency"].strip().upper(), year, q)] = float(row["usd_rate"])
    return rates


def snapshot_quarters(registry: Sequence[SnapshotId]) -> dict[str, tuple[int, int]]:
    """Snapshot id -> (year, q) of the snapshot window midpoint.

    Asserts there is no quarter gap between the first and last mapped
    quarter, so every panel quarter in range sees at least one snapshot.
    """
    mapping = {}
    for snap in registry:
        mid = snap.period_start + (snap.period_end - snap.period_start) / 2
        mapping[snap.id] = quarter_of(mid)
    covered = set(mapping.values())
    ordered = sorted(covered)
    if ordered:
        y, q = ordered[0]
        while (y, q) <= ordered[-1]:
            if (y, q) not in covered:
                raise ValueError(f"registry leaves quarter {y}Q{q} without a snapshot")
            y, q = (y + 1, 1) if q == 4 else (y, q + 1)
    return mapping


def quarterly_policy_controls(policy: Iterable[PolicySeries],
                              levels: PolicyLevels = PolicyLevels()
                              ) -> pd.DataFrame:
    """Reduce daily policy series to country-quarter control rows.

    Ordinals take the quarter maximum; 'recommended' means the ordinal
    peaked exactly at the recommend level, 'required' at or above the
    require level. Fiscal takes the quarter maximum of the (cumulative)
    amount, logged as ln(1+x); deaths take the quarter mean of the values
    provided. Quarters before a country's first datum count as no measures.
    """
    rows = []
    for series in policy:
        by_quarter: dict[tuple[int, int], list] = {}
        for p in series.points:
            by_quarter.setdefault(quarter_of(p.day), []).append(p)
        for (year, q), points in sorted(by_quarter.items()):
            def _max(attr):
                vals = [getattr(p, attr) for p in points if getattr(p, attr) is not None]
                return max(vals) if vals else None

            wc = _max("workplace_closing")
            sh = _max("stay_home")
            fiscal = _max("fiscal")
            deaths = [p.deaths for p in points if p.deaths is not None]
            rows.append({
                "country": series.region, "year": year, "q": q,
                "workplace_recommended":
                    None if wc is None else float(wc == levels.workplace_recommend),
                "workplace_required":
                    None if wc is None else float(wc >= levels.workplace_require),
                "stayhome_recommended":
                    None if sh is None else float(sh == levels.stayhome_recommend),
                "stayhome_required":
                    None if sh is None else float(sh >= levels.stayhome_require),
                "log_fiscal": None if fiscal is None else math.log1p(fiscal),
                "covid_deaths": sum(deaths) / len(deaths) if deaths else None,
            })
    return pd.DataFrame(rows)


CONTROL_COLUMNS = ("workplace_recommended", "workplace_required",
                   "stayhome_recommended", "stayhome_required",
                   "log_fiscal", "covid_deaths")


def build_panel(financials: pd.DataFrame,
                fx_rates: dict[tuple[str, int, int], float],
                indicators: Iterable[FirmPeriodIndicator],
                registry: Sequence[SnapshotId],
                policy: Iterable[PolicySeries],
                firms: dict[str, FirmRecord],
                levels: PolicyLevels = PolicyLevels()) -> pd.DataFrame:
    """Assemble the firm-quarter panel.

    Growth, returns, and lagged assets need the immediately preceding
    quarter; rows where a level is missing or non-positive carry NaN and
    drop out listwise at estimation time.
    """
    snap_q = snapshot_quarters(registry)

    # firm-quarter affectedness: max score / any mention over mapped snapshots
    score: dict[tuple[str, int, int], int] = {}
    mention: dict[tuple[str, int, int], bool] = {}
    for ind in indicators:
        if ind.snapshot not in snap_q:
            continue
        key = (ind.firm_id, *snap_q[ind.snapshot])
        score[key] = max(score.get(key, 0), ind.score)
        mention[key] = mention.get(key, False) or ind.mention

    controls = quarterly_policy_controls(policy, levels)
    control_rows = {(r["country"], r["year"], r["q"]): r
                    for r in controls.to_dict("records")} if len(controls) else {}
    policy_start: dict[str, tuple[int, int]] = {}
    for (country, year, q) in control_rows:
        cur = policy_start.get(country)
        if cur is None or (year, q) < cur:
            policy_start[country] = (year, q)

    def usd(value, currency, year, q):
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return None
        currency = (currency or "USD").upper()
        if currency == "USD":
            return float(value)
        rate = fx_rates.get((currency, year, q))
        if rate is None:
            raise KeyError(f"missing FX rate for {currency} {year}Q{q}")
        return float(value) * rate

    df = financials.sort_values(["firm_id", "year", "q"]).reset_index(drop=True)
    rows = []
    prev: dict[str, dict] = {}
    for rec in df.to_dict("records"):
        firm = firms.get(rec["firm_id"])
        if firm is None:
            continue
        year, q = rec["year"], rec["q"]
        cur = {
            "sales": usd(rec.get("sales"), rec.get("currency"), year, q),
            "assets": usd(rec.get("assets"), rec.get("currency"), year, q),
            "close": rec.get("close"), "cum_adj": rec.get("cum_adj"),
            "trf": rec.get("trf"), "year": year, "q": q,
        }
        p = prev.get(rec["firm_id"])
        consecutive = p is not None and (
            (p["year"] == year and p["q"] == q - 1)
            or (p["year"] == year - 1 and p["q"] == 4 and q == 1))

        growth = ret = lag_assets = None
        if consecutive:
            if cur["sales"] and p["sales"] and cur["sales"] > 0 and p["sales"] > 0:
                growth = log_growth_pct(cur["sales"], p["sales"])
            price_inputs = (cur["close"], cur["cum_adj"], cur["trf"],
                            p["close"], p["cum_adj"], p["trf"])
            if all(v is not None and not (isinstance(v, float) and math.isnan(v))
                   and v > 0 for v in price_inputs):
                ret = adjusted_return_pct(*price_inputs)
            if p["assets"] and p["assets"] > 0:
                lag_assets = math.log(p["assets"])

        key = (rec["firm_id"], year, q)
        pandemic = (year, q) >= PANDEMIC_START
        q_score = score.get(key, 0) if pandemic else 0
        q_mention = mention.get(key, False) if pandemic else False

        ctrl = control_rows.get((firm.country, year, q))
        if ctrl is None:
            start = policy_start.get(firm.country)
            if start is not None and (year, q) < start:
                ctrl = {c: 0.0 for c in CONTROL_COLUMNS}
            else:
                ctrl = {c: None for c in CONTROL_COLUMNS}

        rows.append({
            "firm_id": rec["firm_id"], "year": year, "q": q,
            "quarter": f"{year}Q{q}",
            "dlog_sales_pct": growth, "dlog_return_pct": ret,
            "lag_log_assets": lag_assets,
            "covid_mention": int(q_mention),
            "mild": int(q_score == 1), "moderate": int(q_score == 2),
            "severe": int(q_score == 3),
            "country": firm.country, "nace2": firm.nace2,
            **{c: ctrl[c] for c in CONTROL_COLUMNS},
        })
        prev[rec["firm_id"]] = cur

    panel = pd.DataFrame(rows)
    if len(panel):
        assert (panel[["mild", "moderate", "severe"]].sum(axis=1) <= 1).all()
    return panel.astype({c: float for c in CONTROL_COLUMNS} if len(panel) else {})


def panel_observations(panel: pd.DataFrame) -> list[PanelObservation]:
    """Typed view of the panel rows."""
    def opt(v):
        return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

    out = []
    for rec in panel.to_dict("records"):
        out.append(PanelObservation(
            firm_id=rec["firm_id"], year=int(rec["year"]), q=int(rec["q"]),
            dlog_sales_pct=opt(rec["dlog_sales_pct"]),
            dlog_return_pct=opt(rec["dlog_return_pct"]),
            lag_log_assets=opt(rec["lag_log_assets"]),
            covid_mention=int(rec["covid_mention"]), mild=int(rec["mild"]),
            moderate=int(rec["moderate"]), severe=int(rec["severe"]),
            country=rec["country"], nace2=int(rec["nace2"]),
            workplace_recommended=opt(rec["workplace_recommended"]),
            workplace_required=opt(rec["workplace_required"]),
            stayhome_recommended=opt(rec["stayhome_recommended"]),
            stayhome_required=opt(rec["stayhome_required"]),
            log_fiscal=opt(rec["log_fiscal"]),
            covid_deaths=opt(rec["covid_deaths"]),
        ))
    return out
