"""Stage orchestration: each stage reads and writes documented line-oriented
files in the output directory, so stages are independently runnable and
reruns on identical inputs are byte-identical (stub backend).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from urllib.parse import urlparse

from . import archive, classify, extract, indicator, panel as panel_mod, policy as policy_mod
from . import regression
from .config import PipelineConfig
from .errors import DigestMismatchError, RecordParseError, WebshockError
from .net import HttpClient

log = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "extract", "classify", "aggregate", "correlate",
               "panel", "regress")


class StageError(WebshockError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_lines(path: Path, lines) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
            n += 1
    return n


def _write_csv(path: Path, header, rows) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        n = 0
        for row in rows:
            writer.writerow(row)
            n += 1
    return n


def _read_jsonl(path: Path, parse):
    if not path.exists():
        raise FileNotFoundError(f"expected stage input {path}; run the earlier stage first")
    with open(path, encoding="utf-8") as fh:
        return [parse(line) for line in fh if line.strip()]


def _firm_domain_for(url: str, firm: archive.FirmRecord) -> str:
    host = (urlparse(url).hostname or "").lower()
    for domain in sorted(firm.domains):
        if host == domain or host.endswith("." + domain):
            return domain
    return host


def stage_ingest(cfg: PipelineConfig, stats: dict) -> None:
    if not cfg.index_endpoint or not cfg.archive_endpoint:
        raise WebshockError("ingest needs index and archive endpoints")
    firms = archive.load_firms(cfg.firms)
    registry = archive.load_snapshot_registry(cfg.registry)
    keywords = extract.load_keyword_table(cfg.keywords)
    client = HttpClient()

    tasks = []
    for firm in sorted(firms, key=lambda f: f.firm_id):
        for snapshot in registry:
            for domain in sorted(firm.domains):
                entries = archive.query_domain_captures(
                    domain, snapshot, cfg.index_endpoint, client=client, stats=stats)
                for entry in archive.select_subpages(entries, keywords):
                    tasks.append((firm.firm_id, snapshot.id, entry))

    def fetch_one(task):
        firm_id, snapshot_id, entry = task
        try:
            return archive.fetch_capture(entry, cfg.archive_endpoint,
                                         firm_id=firm_id, snapshot=snapshot_id,
                                         client=client)
        except (DigestMismatchError, RecordParseError) as exc:
            log.warning("discarding capture %s: %s", entry.url, exc)
            stats["discarded_captures"] = stats.get("discarded_captures", 0) + 1
            return None

    with ThreadPoolExecutor(max_workers=8) as pool:
        captures = [c for c in pool.map(fetch_one, tasks) if c is not None]
    captures.sort(key=lambda c: (c.firm_id, c.snapshot, c.url))
    stats["rows"] = _write_lines(cfg.output_dir / "captures.jsonl",
                                 (c.to_json() for c in captures))


def stage_extract(cfg: PipelineConfig, stats: dict) -> None:
    keywords = extract.load_keyword_table(cfg.keywords)
    captures = _read_jsonl(cfg.output_dir / "captures.jsonl", archive.PageCapture.from_json)
    paragraphs = []
    for capture in captures:
        paragraphs.extend(extract.paragraphs_from_capture(capture, keywords))
    stats["rows"] = _write_lines(cfg.output_dir / "paragraphs.jsonl",
                                 (p.to_json() for p in paragraphs))


def stage_classify(cfg: PipelineConfig, stats: dict) -> None:
    firms = {f.firm_id: f for f in archive.load_firms(cfg.firms)}
    captures = _read_jsonl(cfg.output_dir / "captures.jsonl", archive.PageCapture.from_json)
    paragraphs = _read_jsonl(cfg.output_dir / "paragraphs.jsonl", extract.Paragraph.from_json)

    if cfg.backend == "stub":
        backend = classify.stub_classify
    else:
        params = classify.ModelParams(endpoint=cfg.model_endpoint,
                                      model_name=cfg.model_name,
                                      **cfg.model_overrides)
        client = HttpClient()

        def backend(p):
            return classify.classify_paragraph(p, params, client=client)

    records = []
    per_cell: dict[tuple, list] = {}
    for para in sorted(paragraphs, key=lambda p: (p.firm_id, p.snapshot, p.url)):
        try:
            cls = backend(para)
        except Exception as exc:
            log.warning("classification failed for %s: %s", para.url, exc)
            stats["classify_failures"] = stats.get("classify_failures", 0) + 1
            continue
        firm = firms[para.firm_id]
        domain = _firm_domain_for(para.url, firm)
        per_cell.setdefault((para.firm_id, para.snapshot), []).append((domain, cls))
        records.append(json.dumps(
            {"firm_id": para.firm_id, "snapshot": para.snapshot, "url": para.url,
             "domain": domain, "affected": cls.affected,
             "categories": sorted(cls.categories), "tags": list(cls.tags),
             "raw_output": cls.raw_output},
            ensure_ascii=False, sort_keys=True))
    stats["rows"] = _write_lines(cfg.output_dir / "classifications.jsonl", records)

    analyzed = sorted({(c.firm_id, c.snapshot) for c in captures})
    indicators = []
    for firm_id, snapshot in analyzed:
        indicators.append(classify.aggregate_firm_period(
            per_cell.get((firm_id, snapshot), []), firms[firm_id], snapshot))
    stats["indicators"] = _write_lines(cfg.output_dir / "indicators.jsonl",
                                       (i.to_json() for i in indicators))


def _load_indicators(cfg: PipelineConfig):
    return _read_jsonl(cfg.output_dir / "indicators.jsonl",
                       classify.FirmPeriodIndicator.from_json)


def stage_aggregate(cfg: PipelineConfig, stats: dict) -> None:
    firms = archive.load_firms(cfg.firms)
    coverage = indicator.load_coverage(cfg.coverage)
    umbrellas = indicator.load_umbrella_table(cfg.umbrellas)
    indicators = _load_indicators(cfg)

    kept, excluded = indicator.filter_sample(firms, coverage, mode=cfg.filter_mode)
    kept_map = {f.firm_id: f for f in kept}
    indicators = [i for i in indicators if i.firm_id in kept_map]
    _write_csv(cfg.output_dir / "exclusions.csv", ["firm_id", "reason"], excluded)

    series = indicator.region_series(indicators, kept_map, cfg.region_level,
                                     severity_threshold=cfg.severity_threshold)
    stats["rows"] = _write_csv(
        cfg.output_dir / "region_series.csv",
        ["region", "snapshot", "n_firms", "share_severe", "share_mention"],
        ((s.code, p.snapshot, p.n_firms, f"{p.share_severe:.6f}", f"{p.share_mention:.6f}")
         for s in series for p in s.points))

    shares = indicator.industry_shares(indicators, kept_map,
                                       severity_threshold=cfg.severity_threshold)
    _write_csv(cfg.output_dir / "industry_shares.csv",
               ["industry_group", "employee_weighted_severe_share"],
               ((g, f"{v:.6f}") for g, v in shares.items()))

    tag_shares = indicator.tag_country_shares(indicators, kept_map, umbrellas)
    _write_csv(cfg.output_dir / "tag_shares.csv",
               ["country", "umbrella", "share"],
               ((c, u, f"{v:.6f}") for c, by_u in tag_shares.items()
                for u, v in by_u.items()))


def stage_correlate(cfg: PipelineConfig, stats: dict) -> None:
    if cfg.policy is None:
        raise WebshockError("correlate needs a policy CSV path")
    firms = {f.firm_id: f for f in archive.load_firms(cfg.firms)}
    registry = archive.load_snapshot_registry(cfg.registry)
    indicators = _load_indicators(cfg)
    wai_series = indicator.region_series(indicators, firms, cfg.region_level,
                                         severity_threshold=cfg.severity_threshold)
    policies = policy_mod.load_policy_series(cfg.policy, cfg.region_level)

    rows = policy_mod.correlation_report(wai_series, policies, registry)
    stats["rows"] = _write_csv(cfg.output_dir / "correlations.csv",
                               ["region", "n_firms", "r"],
                               ((region, n, f"{r:.6f}") for region, n, r in rows))

    by_region = {p.region: p for p in policies}
    for series in wai_series:
        pol = by_region.get(series.code)
        if pol is None:
            continue
        pairs = policy_mod.align_periods(series, pol, registry)
        _write_csv(cfg.output_dir / "paired" / f"{series.code}.csv",
                   ["snapshot", "wai_share_severe", "stringency_mean", "n_firms"],
                   ((s, f"{w:.6f}", f"{x:.6f}", n) for s, w, x, n in pairs))


def stage_panel(cfg: PipelineConfig, stats: dict) -> None:
    if cfg.financials is None or cfg.fx is None or cfg.policy is None:
        raise WebshockError("panel needs financials, fx, and policy CSV paths")
    firms = {f.firm_id: f for f in archive.load_firms(cfg.firms)}
    registry = archive.load_snapshot_registry(cfg.registry)
    indicators = _load_indicators(cfg)
    financials = panel_mod.load_financials(cfg.financials)
    fx = panel_mod.load_fx(cfg.fx)
    policies = policy_mod.load_policy_series(cfg.policy, "country")

    df = panel_mod.build_panel(financials, fx, indicators, registry, policies, firms)
    df = df.sort_values(["firm_id", "year", "q"]).reset_index(drop=True)
    path = cfg.output_dir / "panel.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    stats["rows"] = len(df)


DEFAULT_SPECS = [
    ("sales_growth", regression.spec_eq1, "sales eq1"),
    ("sales_growth", regression.spec_eq2, "sales eq2"),
    ("sales_growth", regression.spec_eq3, "sales eq3"),
    ("stock_return", regression.spec_eq1, "returns eq1"),
    ("stock_return", regression.spec_eq2, "returns eq2"),
    ("stock_return", regression.spec_eq3, "returns eq3"),
]


def stage_regress(cfg: PipelineConfig, stats: dict) -> None:
    import pandas as pd

    path = cfg.output_dir / "panel.csv"
    if not path.exists():
        raise FileNotFoundError(f"expected {path}; run the panel stage first")
    df = pd.read_csv(path, dtype={"firm_id": str, "quarter": str, "country": str})

    results = []
    for dependent, builder, label in DEFAULT_SPECS:
        spec = builder(dependent=dependent, label=label)
        try:
            results.append(regression.run_spec(df, spec))
        except WebshockError as exc:
            log.warning("spec %s skipped: %s", label, exc)
            stats.setdefault("skipped_specs", []).append(f"{label}: {exc}")

    payload = [{
        "label": r.label, "coefficients": r.coefficients,
        "clustered_se": r.clustered_se, "n_firms": r.n_firms, "n_obs": r.n_obs,
        "r2_within": r.r2_within, "fe_iterations": r.fe_iterations,
        "diagnostics": r.residual_diagnostics, "dropped": list(r.dropped),
    } for r in results]
    out = cfg.output_dir / "regression.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    _write_csv(cfg.output_dir / "regression.csv",
               ["spec", "term", "coefficient", "clustered_se"],
               ((r.label, name, f"{r.coefficients[name]:.10g}",
                 f"{r.clustered_se[name]:.10g}")
                for r in results for name in r.coefficients))
    (cfg.output_dir / "regression_table.txt").write_text(
        regression.render_table(results) + "\n", encoding="utf-8")
    stats["rows"] = len(results)


STAGES = {
    "ingest": stage_ingest,
    "extract": stage_extract,
    "classify": stage_classify,
    "aggregate": stage_aggregate,
    "correlate": stage_correlate,
    "panel": stage_panel,
    "regress": stage_regress,
}


def run_pipeline(cfg: PipelineConfig, stages=None) -> dict:
    """Run the requested stages in order and write the run manifest.

    The manifest holds input digests, per-stage row counts and warnings,
    and output digests; wall-clock durations go to run_log.json so the
    manifest stays byte-stable across reruns.
    """
    requested = list(stages or cfg.stages or STAGE_ORDER)
    unknown = [s for s in requested if s not in STAGES]
    if unknown:
        raise WebshockError(f"unknown stages: {unknown}")
    ordered = [s for s in STAGE_ORDER if s in requested]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    inputs = {}
    for name in ("firms", "registry", "keywords", "umbrellas", "coverage",
                 "policy", "financials", "fx", "concordance"):
        path = getattr(cfg, name)
        if path is not None and Path(path).exists():
            inputs[name] = _sha256(Path(path))

    manifest = {"inputs": inputs, "stages": {}, "outputs": {}}
    durations = {}
    for stage in ordered:
        stats: dict = {}
        started = time.monotonic()
        try:
            STAGES[stage](cfg, stats)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        durations[stage] = round(time.monotonic() - started, 3)
        manifest["stages"][stage] = stats

    for path in sorted(cfg.output_dir.rglob("*")):
        if path.is_file() and path.name not in ("manifest.json", "run_log.json"):
            manifest["outputs"][str(path.relative_to(cfg.output_dir))] = _sha256(path)

    (cfg.output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (cfg.output_dir / "run_log.json").write_text(
        json.dumps({"durations_sec": durations}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return manifest
