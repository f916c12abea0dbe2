"""Render the headline outputs of a finished run in csv, json, or
svg-lines form under <output_dir>/report/.
"""

from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

from .errors import WebshockError

HEADLINE_TABLES = ("region_series.csv", "industry_shares.csv",
                   "tag_shares.csv", "correlations.csv", "regression.csv")


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _svg_two_lines(series_a, series_b, title: str, width=640, height=240) -> str:
    """Two normalized polylines on a shared x axis; minimal but valid SVG."""
    def polyline(values, color):
        lo, hi = min(values), max(values)
        span = (hi - lo) or 1.0
        step = (width - 20) / max(len(values) - 1, 1)
        pts = " ".join(
            f"{10 + i * step:.1f},{height - 20 - (v - lo) / span * (height - 40):.1f}"
            for i, v in enumerate(values))
        return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{pts}"/>')

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<title>{title}</title>',
        polyline(series_a, "#1f77b4"),
        polyline(series_b, "#d62728"),
        "</svg>",
    ]) + "\n"


def emit_report(cfg, fmt: str) -> list[Path]:
    out = cfg.output_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    present = [name for name in HEADLINE_TABLES
               if (cfg.output_dir / name).exists()]
    if not present:
        raise WebshockError(
            f"no stage outputs found in {cfg.output_dir}; run the pipeline first")

    if fmt == "csv":
        for name in present:
            dst = out / name
            shutil.copyfile(cfg.output_dir / name, dst)
            written.append(dst)
    elif fmt == "json":
        for name in present:
            header, rows = _read_rows(cfg.output_dir / name)
            dst = out / (Path(name).stem + ".json")
            dst.write_text(json.dumps([dict(zip(header, r)) for r in rows],
                                      indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
            written.append(dst)
    elif fmt == "svg-lines":
        paired_dir = cfg.output_dir / "paired"
        paired = sorted(paired_dir.glob("*.csv")) if paired_dir.exists() else []
        if not paired:
            raise WebshockError("svg-lines needs the correlate stage's paired series")
        for path in paired:
            _, rows = _read_rows(path)
            wai = [float(r[1]) for r in rows]
            stringency = [float(r[2]) for r in rows]
            dst = out / f"{path.stem}.svg"
            dst.write_text(_svg_two_lines(
                wai, stringency,
                f"{path.stem}: severe share vs. policy stringency"),
                encoding="utf-8")
            written.append(dst)
    else:
        raise WebshockError(f"unknown report format {fmt!r}")
    return written
