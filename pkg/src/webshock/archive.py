"""Archive ingest: resolve firm domains to archived captures.

Looks up domains in a per-crawl index (one JSON object per line), selects
the subpages worth analyzing, range-reads the archived records, and computes
crawl-coverage statistics (Jaccard domain overlap, content-change heartbeat).

Index and data endpoints may be HTTP(S) URLs or local directories holding
fixture files with the same layout:

    <index_endpoint>/<snapshot_id>/<domain>.jsonl
    <data_endpoint>/<archive_file>
"""

from __future__ import annotations

import base64
import csv
import gzip
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DigestMismatchError, RecordParseError, RegistryError
from .net import HttpClient, is_remote, local_path

log = logging.getLogger(__name__)

HTML_MIME_MARKERS = ("text/html", "application/xhtml")


@dataclass(frozen=True, order=True)
class SnapshotId:
    """One crawl snapshot: identifier plus the calendar window it covers."""

    period_start: date
    period_end: date
    id: str = ""
    label: str = ""

    def __post_init__(self):
        if self.period_start > self.period_end:
            raise RegistryError(f"snapshot {self.id}: period_start after period_end")


@dataclass(frozen=True)
class FirmRecord:
    """Sampling unit: a firm with its website domains and demographics."""

    firm_id: str
    domains: frozenset
    country: str
    city: str
    nace2: int
    employees: int
    state: str = ""

    def __post_init__(self):
        if not self.domains:
            raise ValueError(f"firm {self.firm_id}: needs at least one domain")
        if not 1 <= self.nace2 <= 99:
            raise ValueError(f"firm {self.firm_id}: nace2 {self.nace2} outside 01..99")
        if self.employees < 0:
            raise ValueError(f"firm {self.firm_id}: negative employee count")


@dataclass(frozen=True)
class CdxEntry:
    """One index record: where a capture lives inside the archive files."""

    url: str
    digest: str
    archive_file: str
    offset: int
    length: int
    status: int
    mime: str


@dataclass(frozen=True)
class PageCapture:
    """A decoded archived subpage for one firm in one crawl snapshot."""

    firm_id: str
    snapshot: str
    url: str
    digest: str
    body: str

    def to_json(self) -> str:
        return json.dumps(
            {"firm_id": self.firm_id, "snapshot": self.snapshot,
             "url": self.url, "digest": self.digest, "body": self.body},
            ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "PageCapture":
        d = json.loads(line)
        return cls(d["firm_id"], d["snapshot"], d["url"], d["digest"], d["body"])


def load_snapshot_registry(path) -> list[SnapshotId]:
    """Read the crawl registry CSV (id,label,period_start,period_end).

    Returns snapshots sorted by period start; duplicate ids are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise RegistryError(f"registry file not found: {path}")
    snapshots: list[SnapshotId] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            sid = (row.get("id") or "").strip()
            if not sid:
                raise RegistryError(f"registry row without id: {row}")
            if sid in seen:
                raise RegistryError(f"duplicate snapshot id: {sid}")
            seen.add(sid)
            try:
                start = date.fromisoformat(row["period_start"].strip())
                end = date.fromisoformat(row["period_end"].strip())
            except (KeyError, ValueError) as exc:
                raise RegistryError(f"unparseable period for {sid}: {exc}") from exc
            snapshots.append(SnapshotId(start, end, sid, (row.get("label") or "").strip()))
    if not snapshots:
        raise RegistryError("empty registry")
    return sorted(snapshots, key=lambda s: (s.period_start, s.id))


def load_firms(path) -> list[FirmRecord]:
    """Read the firm list CSV.

    Columns: firm_id, domains (semicolon-separated), country, city, nace2,
    employees, and optionally state.
    """
    path = Path(path)
    if not path.exists():
        raise RegistryError(f"firm list not found: {path}")
    firms = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            firms.append(FirmRecord(
                firm_id=row["firm_id"].strip(),
                domains=frozenset(d.strip() for d in row["domains"].split(";") if d.strip()),
                country=row["country"].strip(),
                city=(row.get("city") or "").strip(),
                nace2=int(row["nace2"]),
                employees=int(row["employees"]),
                state=(row.get("state") or "").strip(),
            ))
    return firms


def _within_domain(url: str, domain: str) -> bool:
    from urllib.parse import urlparse

    host = (urlparse(url).hostname or "").lower()
    domain = domain.lower()
    return host == domain or host.endswith("." + domain)


def _parse_index_line(line: str) -> Optional[CdxEntry]:
    d = json.loads(line)
    return CdxEntry(
        url=d["url"],
        digest=d["digest"],
        archive_file=d["filename"],
        offset=int(d["offset"]),
        length=int(d["length"]),
        status=int(d["status"]),
        mime=d["mime"],
    )


def query_domain_captures(domain: str, snapshot: SnapshotId, index_endpoint: str,
                          client: Optional[HttpClient] = None,
                          stats: Optional[dict] = None) -> list[CdxEntry]:
    """Look up all index entries for a domain (and its subdomains) in one crawl.

    Only status-200 HTML entries inside the queried domain are kept.
    Malformed index lines are skipped with a warning and counted in ``stats``.
    """
    if not domain:
        raise ValueError("empty domain")
    if is_remote(index_endpoint):
        client = client or HttpClient()
        resp = client.get(index_endpoint,
                          params={"domain": domain, "snapshot": snapshot.id})
        text = resp.text
    else:
        fpath = Path(local_path(index_endpoint)) / snapshot.id / f"{domain}.jsonl"
        if not fpath.exists():
            return []
        text = fpath.read_text(encoding="utf-8")

    entries: list[CdxEntry] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            entry = _parse_index_line(line)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            log.warning("skipping malformed index line for %s: %s", domain, exc)
            if stats is not None:
                stats["malformed_index_lines"] = stats.get("malformed_index_lines", 0) + 1
            continue
        if entry.status != 200:
            continue
        if not any(m in entry.mime.lower() for m in HTML_MIME_MARKERS):
            continue
        if not _within_domain(entry.url, domain):
            continue
        entries.append(entry)
    return entries


def select_subpages(entries: Sequence[CdxEntry], keywords,
                    max_shortest: int = 50, path_only: bool = False) -> list[CdxEntry]:
    """Keep the ``max_shortest`` shortest URLs plus every keyword-bearing URL.

    URL length is measured over the full URL text by default (``path_only``
    switches to the path component). Ties break lexicographically; output
    order is deterministic (shortest first).
    """
    from urllib.parse import urlparse

    by_url: dict[str, CdxEntry] = {}
    for e in entries:
        by_url.setdefault(e.url, e)

    def url_len(e: CdxEntry) -> int:
        return len(urlparse(e.url).path) if path_only else len(e.url)

    ordered = sorted(by_url.values(), key=lambda e: (url_len(e), e.url))
    selected = {e.url for e in ordered[:max_shortest]}

    kw_list = [kw for _, kws in keywords.entries for kw in kws]
    for e in ordered:
        low = e.url.lower()
        if any(kw in low for kw in kw_list):
            selected.add(e.url)
    return [e for e in ordered if e.url in selected]


def _sha1_b32(payload: bytes) -> str:
    return base64.b32encode(hashlib.sha1(payload).digest()).decode("ascii")


def _read_range(data_endpoint: str, archive_file: str, offset: int, length: int,
                client: Optional[HttpClient]) -> bytes:
    if is_remote(data_endpoint):
        client = client or HttpClient()
        url = data_endpoint.rstrip("/") + "/" + archive_file
        resp = client.get(url, headers={"Range": f"bytes={offset}-{offset + length - 1}"})
        return resp.content
    with open(Path(local_path(data_endpoint)) / archive_file, "rb") as fh:
        fh.seek(offset)
        return fh.read(length)


def parse_archive_record(member: bytes) -> tuple[dict, bytes]:
    """Split a decompressed archive record into WARC/HTTP headers and body bytes.

    The record envelope is: WARC header block, blank line, HTTP status line
    and headers, blank line, payload.
    """
    sep = b"\r\n\r\n"
    first = member.find(sep)
    if first < 0:
        raise RecordParseError("no WARC header terminator found")
    warc_head = member[:first].decode("latin-1", errors="replace")
    if not warc_head.startswith("WARC/"):
        raise RecordParseError("record does not start with a WARC version line")
    headers: dict[str, str] = {}
    for line in warc_head.split("\r\n")[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()

    rest = member[first + len(sep):]
    second = rest.find(sep)
    if second < 0:
        raise RecordParseError("no HTTP header terminator found")
    http_head = rest[:second].decode("latin-1", errors="replace")
    for line in http_head.split("\r\n")[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers.setdefault("http:" + k.strip().lower(), v.strip())
    body = rest[second + len(sep):]
    # WARC records end with two CRLFs that are not part of the payload
    if body.endswith(b"\r\n\r\n"):
        body = body[:-4]
    return headers, body


def _declared_charset(headers: dict) -> Optional[str]:
    ctype = headers.get("http:content-type", "")
    for part in ctype.split(";"):
        part = part.strip()
        if part.lower().startswith("charset="):
            return part.split("=", 1)[1].strip("\"' ")
    return None


def decode_body(body: bytes, headers: dict) -> str:
    """Decode payload bytes: declared charset, then UTF-8, then lossy UTF-8."""
    charset = _declared_charset(headers)
    if charset:
        try:
            return body.decode(charset)
        except (LookupError, UnicodeDecodeError):
            pass
    try:
        return body.decode("utf-8")
    except UnicodeDecodeError:
        return body.decode("utf-8", errors="replace")


def fetch_capture(entry: CdxEntry, data_endpoint: str, firm_id: str, snapshot: str,
                  client: Optional[HttpClient] = None) -> PageCapture:
    """Range-read one archived record and decode it to a text capture.

    Raises ``DigestMismatchError`` when the payload does not hash to the
    index digest; callers discard the capture and count the event.
    """
    if entry.length <= 0:
        raise ValueError(f"entry for {entry.url} has non-positive length")
    raw = _read_range(data_endpoint, entry.archive_file, entry.offset, entry.length, client)
    try:
        member = gzip.decompress(raw)
    except (OSError, EOFError) as exc:
        raise RecordParseError(f"gzip member for {entry.url} is corrupt: {exc}") from exc
    headers, body = parse_archive_record(member)
    digest = _sha1_b32(body)
    expected = entry.digest.split(":", 1)[-1]
    if digest != expected:
        raise DigestMismatchError(
            f"{entry.url}: payload digest {digest} != index digest {expected}")
    return PageCapture(firm_id=firm_id, snapshot=snapshot, url=entry.url,
                       digest=entry.digest, body=decode_body(body, headers))


def jaccard_overlap(domains_a: Iterable, domains_b: Iterable) -> float:
    """|A∩B| / |A∪B|; two empty sets count as identical (1.0)."""
    a, b = set(domains_a), set(domains_b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def content_heartbeat(digest_sets: Sequence, total_crawls: int) -> float:
    """Share of analyzed crawls between which a firm's content changed.

    ``digest_sets`` holds one digest collection per snapshot the firm appears
    in, in snapshot order; snapshots where the firm is absent (None or empty)
    are excluded from the comparison. The denominator is the number of
    analyzed crawls, matching the published normalization (18 changes over
    24 crawls gives 0.75).
    """
    if total_crawls < 1:
        raise ValueError("total_crawls must be >= 1")
    present = [frozenset(s) for s in digest_sets if s]
    changes = sum(1 for prev, cur in zip(present, present[1:]) if prev != cur)
    return changes / total_crawls
