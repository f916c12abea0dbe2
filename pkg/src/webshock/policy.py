"""Policy-stringency ingest and first-difference correlation with the
web-based affectedness series.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

from .archive import SnapshotId
from .indicator import RegionSeries


@dataclass(frozen=True)
class PolicyPoint:
    day: date
    stringency: Optional[float]
    workplace_closing: Optional[int] = None
    stay_home: Optional[int] = None
    fiscal: Optional[float] = None
    deaths: Optional[float] = None


@dataclass(frozen=True)
class PolicySeries:
    region: str
    points: tuple  # of PolicyPoint, strictly increasing dates

    def __post_init__(self):
        days = [p.day for p in self.points]
        if any(a >= b for a, b in zip(days, days[1:])):
            raise ValueError(f"{self.region}: dates not strictly increasing")


def load_policy_series(path, region_level: str = "country") -> list[PolicySeries]:
    """Read the policy CSV (date, region, stringency, workplace_closing,
    stay_home, fiscal, deaths). Missing values stay absent, never zero.
    """
    def _opt(row, key, cast):
        value = (row.get(key) or "").strip()
        return cast(value) if value else None

    by_region: dict[str, list[PolicyPoint]] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            day = date.fromisoformat(row["date"].strip())
            stringency = _opt(row, "stringency", float)
            if stringency is not None and not 0.0 <= stringency <= 100.0:
                raise ValueError(f"stringency {stringency} outside 0..100 on {day}")
            by_region.setdefault(row["region"].strip(), []).append(PolicyPoint(
                day=day,
                stringency=stringency,
                workplace_closing=_opt(row, "workplace_closing", lambda v: int(float(v))),
                stay_home=_opt(row, "stay_home", lambda v: int(float(v))),
                fiscal=_opt(row, "fiscal", float),
                deaths=_opt(row, "deaths", float),
            ))
    return [PolicySeries(region, tuple(sorted(points, key=lambda p: p.day)))
            for region, points in sorted(by_region.items())]


def window_mean_stringency(policy: PolicySeries, start: date, end: date,
                           midpoint: bool = False) -> Optional[float]:
    """Mean daily stringency over [start, end], or None without any datum.

    ``midpoint`` samples the day nearest the window midpoint instead.
    """
    in_window = [p for p in policy.points
                 if start <= p.day <= end and p.stringency is not None]
    if not in_window:
        return None
    if midpoint:
        mid = start + (end - start) / 2
        nearest = min(in_window, key=lambda p: abs((p.day - mid).days))
        return nearest.stringency
    return sum(p.stringency for p in in_window) / len(in_window)


def align_periods(wai: RegionSeries, policy: PolicySeries,
                  registry: Sequence[SnapshotId],
                  midpoint: bool = False) -> list[tuple[str, float, float, int]]:
    """Pair each snapshot's severe share with the window-mean stringency.

    Returns (snapshot_id, wai_value, stringency, n_firms) tuples; snapshots
    without any policy datum in their window are dropped.
    """
    windows = {s.id: (s.period_start, s.period_end) for s in registry}
    order = {s.id: i for i, s in enumerate(registry)}
    pairs = []
    for point in sorted(wai.points, key=lambda p: order.get(p.snapshot, 1 << 30)):
        if point.snapshot not in windows:
            continue
        start, end = windows[point.snapshot]
        stringency = window_mean_stringency(policy, start, end, midpoint=midpoint)
        if stringency is None:
            continue
        pairs.append((point.snapshot, point.share_severe, stringency, point.n_firms))
    return pairs


def first_diff(series: Sequence[float]) -> list[float]:
    """Period-over-period changes; length n-1."""
    if len(series) < 2:
        raise ValueError("need at least 2 values to difference")
    return [b - a for a, b in zip(series, series[1:])]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; raises on constant input."""
    if len(x) != len(y):
        raise ValueError("length mismatch")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((v - mx) ** 2 for v in x)
    syy = sum((v - my) ** 2 for v in y)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for constant input")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return sxy / math.sqrt(sxx * syy)


def correlation_report(wai_series: Sequence[RegionSeries],
                       policy_series: Sequence[PolicySeries],
                       registry: Sequence[SnapshotId],
                       min_snapshots: int = 3) -> list[tuple[str, int, float]]:
    """(region, mean firm count, r) per region, on first differences.

    Regions with fewer than ``min_snapshots`` aligned snapshots are omitted,
    as are regions without a matching policy series.
    """
    policies = {p.region: p for p in policy_series}
    rows = []
    for wai in sorted(wai_series, key=lambda s: s.code):
        policy = policies.get(wai.code)
        if policy is None:
            continue
        pairs = align_periods(wai, policy, registry)
        if len(pairs) < min_snapshots:
            continue
        wai_vals = [p[1] for p in pairs]
        str_vals = [p[2] for p in pairs]
        try:
            r = pearson(first_diff(wai_vals), first_diff(str_vals))
        except ValueError:
            continue
        n_firms = round(sum(p[3] for p in pairs) / len(pairs))
        rows.append((wai.code, n_firms, r))
    return rows
