"""Aggregate firm-level affectedness to region, industry, and tag views.

Also applies the sample-coverage filters (per-country firm density, coverage
share, internet-usage threshold for cross-country comparisons).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .archive import FirmRecord
from .classify import FirmPeriodIndicator

SEVERITY_THRESHOLD = 3
MIN_FIRMS_PER_MILLION = 1000.0
MIN_SHARE_ANALYZED_PCT = 20.0
INTERNET_THRESHOLD_PCT = 82.76

UMBRELLA_NAMES = (
    "Supply chain issues", "Closure", "Remote work",
    "Hygiene measures", "Travel restrictions", "Financial impact",
)


@dataclass(frozen=True)
class UmbrellaTable:
    """Six umbrella categories, each with its verbatim pattern list."""

    umbrellas: tuple  # of (name, tuple of patterns)

    def __post_init__(self):
        names = tuple(name for name, _ in self.umbrellas)
        if names != UMBRELLA_NAMES:
            raise ValueError(f"expected the six umbrellas {UMBRELLA_NAMES}, got {names}")


@dataclass(frozen=True)
class RegionPoint:
    snapshot: str
    n_firms: int
    share_severe: float
    share_mention: float


@dataclass(frozen=True)
class RegionSeries:
    level: str          # country | state | city
    code: str
    points: tuple       # of RegionPoint, snapshot-ordered


@dataclass(frozen=True)
class CoverageRow:
    """One country row of the sample-coverage table."""

    country: str        # ISO-3166 alpha-2
    firms_analyzed: int
    firms_per_million: Optional[float]
    share_analyzed_pct: Optional[float]
    internet_share_pct: Optional[float]


def load_umbrella_table(path) -> UmbrellaTable:
    """Read the umbrella pattern TSV (name<TAB>comma-separated patterns)."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, pats = line.split("\t", 1)
        patterns = []
        for p in pats.split(","):
            p = p.strip()
            if p and p not in patterns:
                patterns.append(p)
        rows.append((name.strip(), tuple(patterns)))
    return UmbrellaTable(tuple(rows))


def load_coverage(path) -> list[CoverageRow]:
    def _num(value: str) -> Optional[float]:
        value = (value or "").strip()
        return float(value) if value else None

    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(CoverageRow(
                country=row["iso2"].strip(),
                firms_analyzed=int(row["firms_analyzed"]),
                firms_per_million=_num(row.get("firms_per_million")),
                share_analyzed_pct=_num(row.get("share_analyzed_pct")),
                internet_share_pct=_num(row.get("internet_share_pct")),
            ))
    return rows


def map_tags_to_umbrellas(tags: Iterable[str], table: UmbrellaTable) -> set[str]:
    """Umbrella names whose patterns occur in any tag.

    Matching is case-insensitive substring, deliberately ignoring word
    boundaries; a tag may land in several umbrellas.
    """
    result = set()
    for tag in tags:
        low = tag.casefold()
        for name, patterns in table.umbrellas:
            if name in result:
                continue
            if any(p.casefold() in low for p in patterns):
                result.add(name)
    return result


def _region_code(firm: FirmRecord, level: str) -> str:
    if level == "country":
        return firm.country
    if level == "state":
        return f"{firm.country}-{firm.state}"
    if level == "city":
        return f"{firm.country}-{firm.city}"
    raise ValueError(f"unknown region level {level!r}")


def region_series(indicators: Iterable[FirmPeriodIndicator],
                  firms: dict[str, FirmRecord], level: str,
                  severity_threshold: int = SEVERITY_THRESHOLD) -> list[RegionSeries]:
    """Per-region per-snapshot shares of severe and mentioning firms.

    A firm enters a snapshot's denominator only if it has an indicator for
    that snapshot (i.e. the firm was analyzed in that crawl).
    """
    cells: dict[tuple[str, str], list[FirmPeriodIndicator]] = {}
    for ind in indicators:
        firm = firms.get(ind.firm_id)
        if firm is None:
            raise KeyError(f"indicator references unknown firm {ind.firm_id}")
        cells.setdefault((_region_code(firm, level), ind.snapshot), []).append(ind)

    series: dict[str, list[RegionPoint]] = {}
    for (code, snapshot), inds in sorted(cells.items()):
        n = len(inds)
        severe = sum(1 for i in inds if i.score >= severity_threshold)
        mention = sum(1 for i in inds if i.mention)
        series.setdefault(code, []).append(
            RegionPoint(snapshot, n, severe / n, mention / n))
    return [RegionSeries(level, code, tuple(points))
            for code, points in sorted(series.items())]


def _nace_section_groups() -> list[tuple[range, str]]:
    # 2-digit groups: split-out divisions first, then NACE sections with the
    # published merges (J..N plus S into Other Services, D and E together).
    return [
        (range(55, 56), "Accommodation"),
        (range(56, 57), "Food and Beverage Service Activities"),
        (range(46, 47), "Wholesale Trade"),
        (range(47, 48), "Retail Trade"),
        (range(1, 4), "Agriculture, Forestry and Fishing"),
        (range(5, 10), "Mining and Quarrying"),
        (range(10, 34), "Manufacturing"),
        (range(35, 40), "Energy Utilities and Environmental Services"),
        (range(41, 44), "Construction"),
        (range(45, 46), "Trade and Repair of Motor Vehicles"),
        (range(49, 54), "Transportation and Storage"),
        (range(58, 64), "Other Services"),    # J
        (range(64, 67), "Other Services"),    # K
        (range(68, 69), "Other Services"),    # L
        (range(69, 76), "Other Services"),    # M
        (range(77, 83), "Other Services"),    # N
        (range(94, 97), "Other Services"),    # S
        (range(84, 85), "Public Administration and Defence"),
        (range(85, 86), "Education"),
        (range(86, 87), "Human Health"),
        (range(87, 89), "Social Work Activities"),
        (range(90, 94), "Arts, Entertainment and Recreation"),
        (range(97, 99), "Activities of Households"),
        (range(99, 100), "Extraterritorial Organisations"),
    ]


def nace_group(nace2: int) -> Optional[str]:
    """Industry group name for a 2-digit NACE code, or None if unmapped."""
    for codes, name in _nace_section_groups():
        if nace2 in codes:
            return name
    return None


def industry_shares(indicators: Iterable[FirmPeriodIndicator],
                    firms: dict[str, FirmRecord],
                    severity_threshold: int = SEVERITY_THRESHOLD) -> dict[str, float]:
    """Employee-weighted share of severe firms per industry group.

    Each firm is collapsed to its maximum score over all snapshots; firms
    with unmapped NACE codes are reported and excluded.
    """
    import logging

    max_score: dict[str, int] = {}
    for ind in indicators:
        max_score[ind.firm_id] = max(max_score.get(ind.firm_id, 0), ind.score)

    weight_total: dict[str, float] = {}
    weight_severe: dict[str, float] = {}
    for firm in firms.values():
        group = nace_group(firm.nace2)
        if group is None:
            logging.getLogger(__name__).warning(
                "firm %s: unmapped nace2 %s, excluded from industry shares",
                firm.firm_id, firm.nace2)
            continue
        weight_total[group] = weight_total.get(group, 0.0) + firm.employees
        if max_score.get(firm.firm_id, 0) >= severity_threshold:
            weight_severe[group] = weight_severe.get(group, 0.0) + firm.employees
    return {group: (weight_severe.get(group, 0.0) / total if total else 0.0)
            for group, total in sorted(weight_total.items())}


def tag_country_shares(indicators: Iterable[FirmPeriodIndicator],
                       firms: dict[str, FirmRecord], table: UmbrellaTable,
                       denominator: str = "mentioning") -> dict[str, dict[str, float]]:
    """Per-country share of firms whose tags fall under each umbrella.

    A firm counts once per umbrella over the whole period. The denominator
    is the country's mentioning firms by default (``denominator="analyzed"``
    switches to all analyzed firms). Countries without mentioning firms are
    omitted.
    """
    firm_tags: dict[str, set] = {}
    mentioned: set[str] = set()
    analyzed: set[str] = set()
    for ind in indicators:
        analyzed.add(ind.firm_id)
        if ind.mention:
            mentioned.add(ind.firm_id)
        firm_tags.setdefault(ind.firm_id, set()).update(ind.tags)

    counts: dict[str, dict[str, int]] = {}
    denom: dict[str, int] = {}
    pool = mentioned if denominator == "mentioning" else analyzed
    for firm_id in pool:
        firm = firms[firm_id]
        denom[firm.country] = denom.get(firm.country, 0) + 1
        for umbrella in map_tags_to_umbrellas(firm_tags.get(firm_id, ()), table):
            counts.setdefault(firm.country, {})[umbrella] = \
                counts.get(firm.country, {}).get(umbrella, 0) + 1

    out: dict[str, dict[str, float]] = {}
    for country, n in sorted(denom.items()):
        if n == 0:
            continue
        out[country] = {name: counts.get(country, {}).get(name, 0) / n
                        for name in UMBRELLA_NAMES}
    return out


def filter_sample(firms: Iterable[FirmRecord], coverage: Iterable[CoverageRow],
                  mode: str = "baseline") -> tuple[list[FirmRecord], list[tuple[str, str]]]:
    """Apply the sample filters; returns (kept firms, exclusion report).

    Drops firms with fewer than 5 employees, countries below 1,000 analyzed
    firms per million inhabitants or below 20% coverage, and - in
    ``cross_country`` mode - countries at or below the 82.76% internet-usage
    threshold. Idempotent.
    """
    if mode not in ("baseline", "cross_country"):
        raise ValueError(f"unknown filter mode {mode!r}")
    by_country = {row.country: row for row in coverage}
    kept: list[FirmRecord] = []
    excluded: list[tuple[str, str]] = []
    for firm in firms:
        if firm.employees < 5:
            excluded.append((firm.firm_id, "fewer than 5 employees"))
            continue
        row = by_country.get(firm.country)
        if row is None:
            excluded.append((firm.firm_id, f"no coverage data for {firm.country}"))
            continue
        if row.firms_per_million is None or row.firms_per_million < MIN_FIRMS_PER_MILLION:
            excluded.append((firm.firm_id,
                             f"{firm.country}: under {MIN_FIRMS_PER_MILLION:.0f} firms per million"))
            continue
        if (row.share_analyzed_pct is not None
                and row.share_analyzed_pct < MIN_SHARE_ANALYZED_PCT):
            excluded.append((firm.firm_id,
                             f"{firm.country}: under {MIN_SHARE_ANALYZED_PCT:.0f}% of firms analyzed"))
            continue
        if mode == "cross_country":
            if row.internet_share_pct is None or row.internet_share_pct <= INTERNET_THRESHOLD_PCT:
                excluded.append((firm.firm_id,
                                 f"{firm.country}: internet usage at or below "
                                 f"{INTERNET_THRESHOLD_PCT}%"))
                continue
        kept.append(firm)
    return kept, excluded


def country_filter_report(coverage: Iterable[CoverageRow],
                          mode: str = "baseline") -> dict[str, bool]:
    """Country-level view of filter_sample: ISO code -> retained?"""
    probe = [FirmRecord(firm_id=row.country, domains=frozenset({"x.example"}),
                        country=row.country, city="", nace2=10, employees=5)
             for row in coverage]
    kept, _ = filter_sample(probe, coverage, mode=mode)
    kept_codes = {f.country for f in kept}
    return {row.country: row.country in kept_codes for row in coverage}
