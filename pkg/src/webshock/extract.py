"""Turn HTML captures into text blocks and keep the crisis-keyword ones.

Block extraction is lenient (stdlib HTMLParser, never fatal); keyword
matching is word-boundary aware for space-delimited scripts and plain
substring for scripts without word delimiters (CJK, Thai, ...).
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import Sequence

from .errors import KeywordTableError

BLOCK_TAGS = {
    "p", "li", "h1", "h2", "h3", "h4", "h5", "h6", "td", "th", "div",
    "section", "article", "blockquote", "pre", "dt", "dd", "caption", "br",
}
SKIP_TAGS = {"script", "style", "noscript", "template"}

MAX_PARAGRAPH_CHARS = 4000
TRUNCATION_MARKER = " [...]"

# Scripts written without word delimiters: match keywords as raw substrings.
_NON_DELIMITED_RANGES = (
    (0x2E80, 0x9FFF),    # CJK radicals, Han
    (0x3040, 0x30FF),    # Hiragana, Katakana
    (0xF900, 0xFAFF),    # CJK compatibility
    (0x0E00, 0x0E7F),    # Thai
    (0x0E80, 0x0EFF),    # Lao
    (0x1000, 0x109F),    # Myanmar
    (0x1780, 0x17FF),    # Khmer
)


@dataclass(frozen=True)
class KeywordTable:
    """Per-language keyword lists, all lowercased."""

    entries: tuple  # of (language, tuple of keywords)

    def __post_init__(self):
        if not self.entries:
            raise KeywordTableError("keyword table is empty")
        for lang, kws in self.entries:
            if not kws or any(not k for k in kws):
                raise KeywordTableError(f"empty keyword in language {lang!r}")


@dataclass(frozen=True)
class Paragraph:
    """One keyword-bearing text block from a capture."""

    firm_id: str
    snapshot: str
    url: str
    text: str
    matched_keywords: tuple  # of (language, keyword), nonempty

    def to_json(self) -> str:
        return json.dumps(
            {"firm_id": self.firm_id, "snapshot": self.snapshot, "url": self.url,
             "text": self.text, "matches": [list(m) for m in self.matched_keywords]},
            ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Paragraph":
        d = json.loads(line)
        return cls(d["firm_id"], d["snapshot"], d["url"], d["text"],
                   tuple((m[0], m[1]) for m in d["matches"]))


class _BlockExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._buf: list[str] = []
        self._skip_depth = 0

    def _flush(self):
        text = re.sub(r"\s+", " ", "".join(self._buf)).strip()
        self._buf = []
        if text:
            self.blocks.append(text)

    def handle_starttag(self, tag, attrs):
        if tag in SKIP_TAGS:
            self._skip_depth += 1
        elif tag in BLOCK_TAGS:
            self._flush()

    def handle_startendtag(self, tag, attrs):
        if tag in BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag in BLOCK_TAGS:
            self._flush()

    def handle_data(self, data):
        if not self._skip_depth:
            self._buf.append(data)

    def close(self):
        super().close()
        self._flush()


def extract_paragraphs(body: str) -> list[str]:
    """Split HTML into plain-text blocks in document order.

    Script/style/comment content is dropped, entities decoded, whitespace
    collapsed; empty blocks are omitted. Malformed HTML never raises.
    """
    parser = _BlockExtractor()
    try:
        parser.feed(body)
        parser.close()
    except Exception:
        parser._flush()
    return parser.blocks


def load_keyword_table(path) -> KeywordTable:
    """Read a UTF-8 TSV of ``language<TAB>comma-separated keywords``."""
    path = Path(path)
    if not path.exists():
        raise KeywordTableError(f"keyword table not found: {path}")
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            lang, kws = line.split("\t", 1)
        except ValueError as exc:
            raise KeywordTableError(f"bad keyword row: {line!r}") from exc
        keywords = []
        for kw in kws.split(","):
            kw = kw.strip().casefold()
            if kw and kw not in keywords:
                keywords.append(kw)
        if keywords:
            entries.append((lang.strip(), tuple(keywords)))
    return KeywordTable(tuple(entries))


def _is_non_delimited(keyword: str) -> bool:
    return any(lo <= ord(ch) <= hi for ch in keyword for lo, hi in _NON_DELIMITED_RANGES)


def _is_word_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("L", "N")


def _keyword_positions(text: str, keyword: str, bounded: bool) -> list[int]:
    positions = []
    start = 0
    while True:
        idx = text.find(keyword, start)
        if idx < 0:
            return positions
        if not bounded:
            positions.append(idx)
        else:
            before_ok = idx == 0 or not _is_word_char(text[idx - 1])
            after = idx + len(keyword)
            after_ok = after >= len(text) or not _is_word_char(text[after])
            if before_ok and after_ok:
                positions.append(idx)
        start = idx + 1


def match_keywords(text: str, table: KeywordTable) -> list[tuple[str, str]]:
    """All distinct (language, keyword) matches in a text block.

    Matching is case-insensitive; boundary-checked for delimiter-based
    scripts, plain substring otherwise. When two keywords match at the same
    position, only the longest is kept ("covid-19" suppresses "covid").
    """
    folded = text.casefold()
    hits: list[tuple[int, str, str]] = []  # (position, keyword, language)
    for lang, keywords in table.entries:
        for kw in keywords:
            bounded = not _is_non_delimited(kw)
            for pos in _keyword_positions(folded, kw, bounded):
                hits.append((pos, kw, lang))

    longest_at: dict[int, int] = {}
    for pos, kw, _ in hits:
        longest_at[pos] = max(longest_at.get(pos, 0), len(kw))

    matches: list[tuple[str, str]] = []
    for pos, kw, lang in hits:
        if len(kw) == longest_at[pos] and (lang, kw) not in matches:
            matches.append((lang, kw))
    return matches


def paragraphs_from_capture(capture, table: KeywordTable,
                            max_chars: int = MAX_PARAGRAPH_CHARS) -> list[Paragraph]:
    """Extract keyword-bearing paragraphs from one capture."""
    out = []
    for block in extract_paragraphs(capture.body):
        if len(block) > max_chars:
            block = block[: max_chars - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
        found = match_keywords(block, table)
        if found:
            out.append(Paragraph(capture.firm_id, capture.snapshot, capture.url,
                                 block, tuple(found)))
    return out
