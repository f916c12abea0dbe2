"""Pipeline configuration: one YAML document driving every stage."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError


def packaged_data(name: str) -> Path:
    return Path(str(resources.files("webshock.data") / name))


@dataclass
class PipelineConfig:
    """Validated view of the YAML config file."""

    output_dir: Path
    firms: Path
    registry: Path
    keywords: Path
    umbrellas: Path
    coverage: Path
    policy: Path | None = None
    financials: Path | None = None
    fx: Path | None = None
    concordance: Path | None = None

    index_endpoint: str = ""
    archive_endpoint: str = ""
    model_endpoint: str = ""
    model_name: str = ""

    backend: str = "stub"            # stub | remote
    severity_threshold: int = 3
    internet_threshold_pct: float = 82.76
    region_level: str = "country"
    filter_mode: str = "baseline"
    stages: tuple = ()               # empty = all
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in ("stub", "remote"):
            raise ConfigError(f"backend must be 'stub' or 'remote', got {self.backend!r}")
        if self.backend == "remote" and not self.model_endpoint:
            raise ConfigError("remote backend requires a model endpoint")
        for name in ("firms", "registry", "keywords", "umbrellas", "coverage"):
            path = getattr(self, name)
            if not Path(path).exists():
                raise ConfigError(f"missing {name} file: {path}")


def _endpoint(value: str, base: Path) -> str:
    """Local directory endpoints resolve relative to the config file."""
    value = str(value or "")
    if not value or value.startswith(("http://", "https://", "file://")):
        return value
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    paths = raw.get("paths") or {}
    endpoints = raw.get("endpoints") or {}
    thresholds = raw.get("thresholds") or {}
    model = raw.get("model") or {}

    def _path(key, default=None):
        value = paths.get(key)
        if value is None:
            return default
        p = Path(value)
        return p if p.is_absolute() else (path.parent / p)

    firms = _path("firms")
    if firms is None:
        raise ConfigError("config missing required path: firms")
    output_dir = _path("output_dir")
    if output_dir is None:
        raise ConfigError("config missing required path: output_dir")

    return PipelineConfig(
        output_dir=output_dir,
        firms=firms,
        registry=_path("registry", packaged_data("snapshots.csv")),
        keywords=_path("keywords", packaged_data("keywords.tsv")),
        umbrellas=_path("umbrellas", packaged_data("umbrellas.tsv")),
        coverage=_path("coverage", packaged_data("country_coverage.csv")),
        policy=_path("policy"),
        financials=_path("financials"),
        fx=_path("fx"),
        concordance=_path("concordance"),
        index_endpoint=_endpoint(endpoints.get("index", ""), path.parent),
        archive_endpoint=_endpoint(endpoints.get("archive", ""), path.parent),
        model_endpoint=str(endpoints.get("model", "")),
        model_name=str(model.get("name", "")),
        backend=str(raw.get("backend", "stub")),
        severity_threshold=int(thresholds.get("severity", 3)),
        internet_threshold_pct=float(thresholds.get("internet_pct", 82.76)),
        region_level=str(raw.get("region_level", "country")),
        filter_mode=str(raw.get("filter_mode", "baseline")),
        stages=tuple(raw.get("stages") or ()),
        model_overrides={k: v for k, v in model.items() if k != "name"},
    )
