"""Score keyword paragraphs 0-3 with a language-model backend.

One completion request per paragraph; the prompt is a golden few-shot
template with the paragraph inserted. A deterministic stub backend replays
the template's own worked examples so the whole stage runs offline.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional

from .errors import ModelOutputError
from .net import HttpClient

log = logging.getLogger(__name__)

VALID_CATEGORIES = ("demand", "production", "supply")

_TEMPLATE: Optional[str] = None


def prompt_template() -> str:
    """The golden few-shot prompt template shipped with the package."""
    global _TEMPLATE
    if _TEMPLATE is None:
        _TEMPLATE = (resources.files("webshock.data") / "prompt_template.txt"
                     ).read_text(encoding="utf-8")
    return _TEMPLATE


@dataclass(frozen=True)
class ModelParams:
    """Decoding parameters for the completion backend."""

    endpoint: str = ""
    model_name: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 64
    seed: int = 42
    stop_sequences: tuple = ("0", "}")

    def __post_init__(self):
        if self.temperature != 0.0:
            log.warning("non-zero temperature %s overrides the default", self.temperature)
        if self.max_output_tokens != 64:
            log.warning("max_output_tokens %s overrides the default", self.max_output_tokens)
        if tuple(self.stop_sequences) != ("0", "}"):
            log.warning("stop_sequences %s override the default", self.stop_sequences)


@dataclass(frozen=True)
class Classification:
    """Per-passage verdict: severity 0-3, categories, free-form tags."""

    affected: int
    categories: frozenset
    tags: tuple
    raw_output: str = ""

    def __post_init__(self):
        if self.affected not in (0, 1, 2, 3):
            raise ValueError(f"affected score {self.affected} outside 0..3")
        if any(not t for t in self.tags):
            raise ValueError("empty tag")
        if self.affected == 0 and (self.categories or self.tags):
            raise ValueError("score-0 classifications must carry no categories or tags")


@dataclass(frozen=True)
class FirmPeriodIndicator:
    """Max/union aggregate of passage classifications per firm and snapshot."""

    firm_id: str
    snapshot: str
    mention: bool
    score: int
    categories: frozenset
    tags: frozenset
    n_passages: int

    def to_json(self) -> str:
        return json.dumps(
            {"firm_id": self.firm_id, "snapshot": self.snapshot,
             "mention": self.mention, "score": self.score,
             "categories": sorted(self.categories), "tags": sorted(self.tags),
             "n_passages": self.n_passages},
            ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "FirmPeriodIndicator":
        d = json.loads(line)
        return cls(d["firm_id"], d["snapshot"], d["mention"], d["score"],
                   frozenset(d["categories"]), frozenset(d["tags"]), d["n_passages"])


def build_prompt(paragraph_text: str) -> str:
    """Insert the paragraph into the golden template. Byte-stable."""
    if not paragraph_text:
        raise ValueError("empty paragraph")
    return prompt_template().replace("<Input paragraph>", paragraph_text)


def _split_list(raw: str) -> list[str]:
    return [part.strip().lower() for part in raw.split(",") if part.strip()]


def parse_model_output(raw: str) -> Classification:
    """Parse a model completion into a Classification.

    Repairs the two known truncation shapes: a bare ``{"affected": `` prefix
    (the score-0 stop character fired) becomes a zero classification, and a
    missing final brace (the ``}`` stop character fired) is closed and parsed.
    """
    text = raw.strip()
    if re.fullmatch(r'\{\s*"affected"\s*:\s*', text):
        return Classification(0, frozenset(), (), raw_output=raw)
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = json.loads(text + "}")
        except json.JSONDecodeError as exc:
            raise ModelOutputError(f"unparseable model output: {raw!r}") from exc
    if not isinstance(data, dict) or "affected" not in data:
        raise ModelOutputError(f"model output missing 'affected': {raw!r}")
    try:
        affected = int(data["affected"])
    except (TypeError, ValueError) as exc:
        raise ModelOutputError(f"non-integer affected score: {raw!r}") from exc
    if affected not in (0, 1, 2, 3):
        raise ModelOutputError(f"affected score {affected} outside 0..3")

    categories = set()
    for cat in _split_list(str(data.get("affectedness_category") or "")):
        if cat in VALID_CATEGORIES:
            categories.add(cat)
        else:
            log.warning("dropping unknown affectedness category %r", cat)
    tags = tuple(_split_list(str(data.get("tags") or "")))
    if affected == 0:
        categories, tags = set(), ()
    return Classification(affected, frozenset(categories), tags, raw_output=raw)


def render_classification(c: Classification) -> str:
    """Inverse of parse_model_output for well-formed values."""
    return json.dumps({
        "affected": c.affected,
        "affectedness_category": ", ".join(sorted(c.categories)),
        "tags": ", ".join(c.tags),
    })


def classify_paragraph(paragraph, params: ModelParams,
                       client: Optional[HttpClient] = None) -> Classification:
    """Send one completion request and parse the generated text."""
    client = client or HttpClient()
    payload = {
        "model": params.model_name,
        "prompt": build_prompt(paragraph.text),
        "temperature": params.temperature,
        "max_tokens": params.max_output_tokens,
        "seed": params.seed,
        "stop": list(params.stop_sequences),
    }
    resp = client.post_json(params.endpoint, payload)
    body = resp.json()
    text = body.get("text", body.get("completion", ""))
    return parse_model_output(text)


def _template_examples() -> list[tuple[str, Classification]]:
    """Worked (input, output) pairs parsed out of the golden template."""
    pairs = []
    pattern = re.compile(r'Input: "(.+?)"\n\nOutput: (\{.*?\})\n', re.DOTALL)
    for text, output in pattern.findall(prompt_template()):
        pairs.append((text, parse_model_output(output)))
    return pairs


_STUB_TABLE: Optional[dict] = None


def stub_classify(paragraph) -> Classification:
    """Deterministic offline backend.

    Replays the golden template's five worked examples by exact text lookup;
    anything else scores 0.
    """
    global _STUB_TABLE
    if _STUB_TABLE is None:
        _STUB_TABLE = {text: cls for text, cls in _template_examples()}
    text = paragraph if isinstance(paragraph, str) else paragraph.text
    return _STUB_TABLE.get(text, Classification(0, frozenset(), (), raw_output="stub"))


def aggregate_firm_period(classifications: Iterable[tuple[str, Classification]],
                          firm, snapshot: str) -> FirmPeriodIndicator:
    """Max score and union of categories/tags over all passages of a firm.

    ``classifications`` pairs each verdict with the domain it came from;
    multiple domains of one firm aggregate together.
    """
    score = 0
    categories: set = set()
    tags: set = set()
    n = 0
    for domain, cls in classifications:
        if domain not in firm.domains:
            raise ValueError(f"domain {domain} does not belong to firm {firm.firm_id}")
        n += 1
        score = max(score, cls.affected)
        categories |= cls.categories
        tags |= set(cls.tags)
    return FirmPeriodIndicator(firm_id=firm.firm_id, snapshot=snapshot,
                               mention=n > 0, score=score,
                               categories=frozenset(categories),
                               tags=frozenset(tags), n_passages=n)
