"""HTTP request log parsing and ad-exchange detection.

Input logs are line-delimited JSON objects as emitted by instrumented-browser
crawls (one third-party request per line).  Detection matches request URLs
against per-platform serving prefixes and aggregates the result into a
page x platform monitor matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator
from urllib.parse import urlsplit, urlunsplit

__all__ = [
    "HttpRequestRecord",
    "LogParseResult",
    "AdxRuleset",
    "MonitorMatrix",
    "parse_request_log",
    "detect_platforms",
    "build_monitor_matrix",
    "intersect_pages",
    "filter_language",
    "normalize_page_url",
    "cjk_ratio",
]

_REQUIRED_FIELDS = ("url", "top_level_url", "referrer")


@dataclass
class HttpRequestRecord:
    """One logged HTTP request issued while a page was loading."""

    url: str
    top_level_url: str
    referrer: str = ""
    method: str = "GET"
    id: int = 0
    crawl_id: int = 0
    visit_id: int = 0
    headers: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class LogParseResult:
    """Parsed records plus a skip report for malformed lines."""

    records: list[HttpRequestRecord]
    skips: list[tuple[int, str]] = field(default_factory=list)

    @property
    def skip_count(self) -> int:
        return len(self.skips)


def _is_absolute_url(value: str) -> bool:
    try:
        parts = urlsplit(value)
    except ValueError:
        return False
    return bool(parts.scheme) and bool(parts.netloc)


def parse_request_log(source: Iterable[str] | IO[str]) -> LogParseResult:
    """Parse a line-delimited request log.

    Malformed lines (bad JSON, missing url/top_level_url/referrer, relative
    URLs) are skipped and recorded as (line_number, reason) pairs; record
    order follows input order.
    """
    result = LogParseResult(records=[])
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            result.skips.append((lineno, f"invalid json: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            result.skips.append((lineno, "not an object"))
            continue
        missing = [k for k in _REQUIRED_FIELDS if not isinstance(obj.get(k), str)]
        if missing:
            result.skips.append((lineno, "missing field(s): " + ", ".join(missing)))
            continue
        if not _is_absolute_url(obj["url"]) or not _is_absolute_url(obj["top_level_url"]):
            result.skips.append((lineno, "url fields must be absolute URLs"))
            continue
        headers_raw = obj.get("headers") or []
        headers = []
        if isinstance(headers_raw, list):
            for item in headers_raw:
                if isinstance(item, (list, tuple)) and len(item) == 2:
                    headers.append((str(item[0]), str(item[1])))
        result.records.append(
            HttpRequestRecord(
                url=obj["url"],
                top_level_url=obj["top_level_url"],
                referrer=obj["referrer"],
                method=str(obj.get("method", "GET")),
                id=int(obj.get("id", 0) or 0),
                crawl_id=int(obj.get("crawl_id", 0) or 0),
                visit_id=int(obj.get("visit_id", 0) or 0),
                headers=headers,
            )
        )
    return result


@dataclass(frozen=True)
class _CompiledPrefix:
    platform: str
    scheme: str
    netloc: str
    path: str


class AdxRuleset:
    """Per-platform URL serving prefixes.

    A URL matches a prefix when scheme and host are equal ignoring case and
    the path starts with the prefix path (case-sensitive).  Host equality
    rather than plain string prefixing keeps lookalike hosts such as
    ``pos.baidu.com.evil.example`` out.
    """

    def __init__(self, rules: Iterable[tuple[str, Iterable[str]]]):
        self.platforms: list[str] = []
        self.prefixes: dict[str, list[str]] = {}
        self._compiled: list[_CompiledPrefix] = []
        seen_prefix: dict[str, str] = {}
        for platform, prefixes in rules:
            platform = platform.strip()
            if not platform:
                raise ValueError("platform id must be non-empty")
            if platform in self.prefixes:
                raise ValueError(f"duplicate platform id: {platform!r}")
            plist = [p.strip() for p in prefixes]
            if not plist:
                raise ValueError(f"platform {platform!r} has no prefixes")
            for prefix in plist:
                if not (prefix.startswith("http://") or prefix.startswith("https://")):
                    raise ValueError(
                        f"prefix {prefix!r} for {platform!r} must start with a scheme"
                    )
                owner = seen_prefix.get(prefix)
                if owner is not None and owner != platform:
                    raise ValueError(
                        f"prefix {prefix!r} listed under both {owner!r} and {platform!r}"
                    )
                seen_prefix[prefix] = platform
                parts = urlsplit(prefix)
                self._compiled.append(
                    _CompiledPrefix(
                        platform=platform,
                        scheme=parts.scheme.lower(),
                        netloc=parts.netloc.lower(),
                        path=parts.path,
                    )
                )
            self.platforms.append(platform)
            self.prefixes[platform] = plist

    def match(self, url: str) -> set[str]:
        """Platforms whose serving prefix matches ``url``."""
        try:
            parts = urlsplit(url)
        except ValueError:
            return set()
        scheme = parts.scheme.lower()
        netloc = parts.netloc.lower()
        path = parts.path
        hits = set()
        for pref in self._compiled:
            if scheme == pref.scheme and netloc == pref.netloc and path.startswith(pref.path):
                hits.add(pref.platform)
        return hits

    def first_prefix(self, platform: str) -> str:
        return self.prefixes[platform][0]

    @classmethod
    def from_jsonl(cls, lines: Iterable[str]) -> "AdxRuleset":
        rules = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"ruleset line {lineno}: invalid json ({exc.msg})") from exc
            if not isinstance(obj, dict) or "platform" not in obj or "prefixes" not in obj:
                raise ValueError(f"ruleset line {lineno}: expected {{platform, prefixes}}")
            rules.append((obj["platform"], obj["prefixes"]))
        return cls(rules)

    @classmethod
    def load(cls, path) -> "AdxRuleset":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh)


def normalize_page_url(url: str) -> str:
    """Canonical page key: fragment stripped, query kept, scheme/host lowered."""
    parts = urlsplit(url)
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path, parts.query, ""))


def detect_platforms(records: Iterable[HttpRequestRecord], ruleset: AdxRuleset) -> set[str]:
    """Platforms that monitor the page the records belong to.

    Only the request ``url`` is matched; a platform showing up solely in the
    referrer does not count as monitoring.
    """
    found: set[str] = set()
    for rec in records:
        found |= ruleset.match(rec.url)
    return found


@dataclass
class MonitorMatrix:
    """Page x platform presence matrix; rows sorted by normalized page URL."""

    pages: list[str]
    platforms: list[str]
    cells: list[list[bool]]

    def row(self, page: str) -> dict[str, bool]:
        idx = self.pages.index(page)
        return dict(zip(self.platforms, self.cells[idx]))

    def platforms_for(self, page: str) -> list[str]:
        idx = self.pages.index(page)
        return [p for p, hit in zip(self.platforms, self.cells[idx]) if hit]

    def to_jsonl(self) -> Iterator[str]:
        for page, row in zip(self.pages, self.cells):
            platforms = [p for p, hit in zip(self.platforms, row) if hit]
            yield json.dumps({"page": page, "platforms": platforms}, ensure_ascii=False, sort_keys=True)

    def to_csv(self) -> Iterator[str]:
        yield ",".join(["page"] + self.platforms)
        for page, row in zip(self.pages, self.cells):
            yield ",".join([page] + ["1" if hit else "0" for hit in row])


def build_monitor_matrix(records: Iterable[HttpRequestRecord], ruleset: AdxRuleset) -> MonitorMatrix:
    """Group records by normalized top-level page and detect per page."""
    by_page: dict[str, set[str]] = {}
    for rec in records:
        page = normalize_page_url(rec.top_level_url)
        by_page.setdefault(page, set()).update(ruleset.match(rec.url))
    pages = sorted(by_page)
    cells = [[platform in by_page[page] for platform in ruleset.platforms] for page in pages]
    return MonitorMatrix(pages=pages, platforms=list(ruleset.platforms), cells=cells)


def intersect_pages(matrix: MonitorMatrix, platforms: Iterable[str]) -> list[str]:
    """Pages monitored by every platform given, in matrix row order."""
    wanted = list(platforms)
    for platform in wanted:
        if platform not in matrix.platforms:
            raise ValueError(f"unknown platform: {platform!r}")
    idx = [matrix.platforms.index(p) for p in wanted]
    return [page for page, row in zip(matrix.pages, matrix.cells) if all(row[i] for i in idx)]


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x2A6DF
    )


def cjk_ratio(text: str) -> float:
    """Share of CJK codepoints among letter codepoints (0.0 when no letters)."""
    letters = 0
    cjk = 0
    for ch in text:
        if ch.isalpha():
            letters += 1
            if _is_cjk(ch):
                cjk += 1
    if letters == 0:
        return 0.0
    return cjk / letters


def filter_language(
    pages: Iterable[tuple[str, str]], min_cjk_ratio: float = 0.30
) -> list[tuple[str, str]]:
    """Keep (url, text) pages whose CJK letter share meets the threshold."""
    return [(url, text) for url, text in pages if cjk_ratio(text) >= min_cjk_ratio]
