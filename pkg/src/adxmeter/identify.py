"""Ad landing-page identification.

Given a landing-page snapshot, extract the keywords that describe what the ad
sells.  Image-dominant pages go straight to an image-labeling service; pages
with text run a short-circuiting cascade: title terms, then a per-platform
product-detail extraction rule, then a keyword-planner service.  The first
stage that yields keywords wins and later stages are never invoked.  Whatever
keywords result are mapped onto a taxonomy category by maximum overlap.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser
from typing import Iterable, Optional, Protocol

from .taxonomy import Taxonomy, match_category, UNCATEGORIZED
from .textprep import DEFAULT_STOPWORDS, GreedyDictTokenizer, parse_page

logger = logging.getLogger(__name__)

__all__ = [
    "LandingSnapshot",
    "Method",
    "AdLabel",
    "ProductDetailRule",
    "ClientError",
    "FixtureImageClient",
    "FixtureKeywordClient",
    "HttpImageClient",
    "HttpKeywordClient",
    "AdIdentifier",
    "build_snapshot",
    "is_image_dominant",
    "identify_by_title",
    "identify_by_product_detail",
    "identify_via_image_service",
    "identify_via_keyword_service",
    "image_fixture_key",
    "load_product_rules",
    "DEFAULT_TITLE_BLOCKLIST",
    "KEYWORD_SERVICE_LIMIT",
]

# Storefront boilerplate titles that identify the marketplace, not the product.
DEFAULT_TITLE_BLOCKLIST = frozenset({"淘宝热卖", "淘宝网", "京东商城", "苏宁易购"})

IMAGE_TEXT_THRESHOLD = 100
KEYWORD_SERVICE_LIMIT = 5
TITLE_KEYWORD_LIMIT = 10


@dataclass
class LandingSnapshot:
    """Capture of an ad's landing page at fetch time."""

    final_url: str
    title: str
    body_text: str
    image_refs: list[str]
    html: str = ""

    @classmethod
    def empty(cls, url: str) -> "LandingSnapshot":
        return cls(final_url=url, title="", body_text="", image_refs=[])


def build_snapshot(final_url: str, html: str) -> LandingSnapshot:
    page = parse_page(html)
    return LandingSnapshot(
        final_url=final_url,
        title=page.title,
        body_text=page.text,
        image_refs=page.images,
        html=html,
    )


class Method(str, Enum):
    TITLE = "TITLE"
    PRODUCT_DETAIL = "PRODUCT_DETAIL"
    IMAGE = "IMAGE"
    KEYWORD_SERVICE = "KEYWORD_SERVICE"
    UNRESOLVED = "UNRESOLVED"


@dataclass
class AdLabel:
    """Identification outcome for one ad observation."""

    observation_id: str
    keywords: list[str]
    category: str
    method: Method
    note: str = ""

    def __post_init__(self):
        if (self.method == Method.UNRESOLVED) != (not self.keywords):
            raise ValueError("UNRESOLVED exactly when no keywords were extracted")


# --------------------------------------------------------------------------
# external services


class ClientError(Exception):
    """An identification service call failed (timeout, transport, bad reply)."""


class ImageClient(Protocol):
    def labels_for(self, image_ref: str) -> list[str]: ...


class KeywordClient(Protocol):
    def keywords_for(self, url: str) -> list[str]: ...


def image_fixture_key(image_ref: str) -> str:
    return hashlib.sha256(image_ref.encode("utf-8")).hexdigest()


class FixtureImageClient:
    """Recorded image labels keyed by the sha256 of the image reference."""

    def __init__(self, store: dict[str, list[str]]):
        self.store = dict(store)
        self.calls: list[str] = []

    def labels_for(self, image_ref: str) -> list[str]:
        self.calls.append(image_ref)
        return list(self.store.get(image_fixture_key(image_ref), []))

    @classmethod
    def load(cls, path) -> "FixtureImageClient":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


class FixtureKeywordClient:
    """Recorded keyword-planner responses keyed by landing URL."""

    def __init__(self, store: dict[str, list[str]]):
        self.store = dict(store)
        self.calls: list[str] = []

    def keywords_for(self, url: str) -> list[str]:
        self.calls.append(url)
        return list(self.store.get(url, []))

    @classmethod
    def load(cls, path) -> "FixtureKeywordClient":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


class _HttpJsonClient:
    """POST a JSON payload to a configured endpoint; used by live adapters."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except Exception as exc:  # transport and decode failures alike
            raise ClientError(str(exc)) from exc


class HttpImageClient(_HttpJsonClient):
    def labels_for(self, image_ref: str) -> list[str]:
        reply = self._post({"image": image_ref})
        labels = reply.get("labels")
        if not isinstance(labels, list):
            raise ClientError("malformed image service reply")
        return [str(x) for x in labels]


class HttpKeywordClient(_HttpJsonClient):
    def keywords_for(self, url: str) -> list[str]:
        reply = self._post({"url": url})
        keywords = reply.get("keywords")
        if not isinstance(keywords, list):
            raise ClientError("malformed keyword service reply")
        return [str(x) for x in keywords]


# --------------------------------------------------------------------------
# cascade stages


def is_image_dominant(snapshot: LandingSnapshot, text_threshold: int = IMAGE_TEXT_THRESHOLD) -> bool:
    """True when the page is essentially one creative image with no copy."""
    return len(snapshot.body_text.strip()) < text_threshold and len(snapshot.image_refs) >= 1


def identify_by_title(
    snapshot: LandingSnapshot,
    tokenizer: GreedyDictTokenizer,
    blocklist: Iterable[str] = DEFAULT_TITLE_BLOCKLIST,
    stopwords: Iterable[str] = DEFAULT_STOPWORDS,
) -> Optional[list[str]]:
    """Keywords from the landing title; None for empty or boilerplate titles."""
    title = snapshot.title.strip()
    if not title or title in set(blocklist):
        return None
    stop = set(stopwords)
    keywords = [t for t in tokenizer.tokenize(title) if t not in stop]
    return keywords[:TITLE_KEYWORD_LIMIT] or None


@dataclass
class ProductDetailRule:
    """Extraction pattern over landing markup for one platform's ad pages.

    kind "element": path is a space-separated descendant chain of
    ``tag`` / ``tag.class`` steps; the first matching element's text wins.
    kind "delimiter": text between the first ``start``/``end`` pair, tags
    stripped.
    """

    platform: str
    kind: str
    path: str = ""
    start: str = ""
    end: str = ""

    def __post_init__(self):
        if self.kind not in ("element", "delimiter"):
            raise ValueError(f"unknown rule kind: {self.kind!r}")
        if self.kind == "element" and not self.path:
            raise ValueError("element rule needs a path")
        if self.kind == "delimiter" and (not self.start or not self.end):
            raise ValueError("delimiter rule needs start and end markers")


def load_product_rules(path) -> dict[str, ProductDetailRule]:
    rules = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            obj = json.loads(line)
            rule = ProductDetailRule(
                platform=obj["platform"],
                kind=obj["kind"],
                path=obj.get("path", ""),
                start=obj.get("start", ""),
                end=obj.get("end", ""),
            )
            rules[rule.platform] = rule
    return rules


class _ElementPathExtractor(HTMLParser):
    """Collect text of elements matching a descendant path like 'div.details h2 a'."""

    def __init__(self, steps: list[tuple[str, Optional[str]]]):
        super().__init__(convert_charrefs=True)
        self._steps = steps
        # Per open element: how many leading path steps its ancestor chain satisfies.
        self._depths: list[int] = []
        self._collect_depth = 0
        self.matches: list[str] = []
        self._current: list[str] = []

    def _step_matches(self, idx: int, tag: str, classes: set[str]) -> bool:
        want_tag, want_class = self._steps[idx]
        if tag != want_tag:
            return False
        return want_class is None or want_class in classes

    def handle_starttag(self, tag, attrs):
        parent = self._depths[-1] if self._depths else 0
        classes = set()
        for name, value in attrs:
            if name == "class" and value:
                classes.update(value.split())
        depth = parent
        if parent < len(self._steps) and self._step_matches(parent, tag, classes):
            depth = parent + 1
        self._depths.append(depth)
        if depth == len(self._steps) and self._collect_depth == 0:
            self._collect_depth = len(self._depths)

    def handle_endtag(self, tag):
        if not self._depths:
            return
        if self._collect_depth == len(self._depths):
            text = " ".join(self._current).strip()
            if text:
                self.matches.append(text)
            self._current = []
            self._collect_depth = 0
        self._depths.pop()

    def handle_data(self, data):
        if self._collect_depth:
            stripped = data.strip()
            if stripped:
                self._current.append(stripped)


def _parse_path(path: str) -> list[tuple[str, Optional[str]]]:
    steps = []
    for step in path.split():
        if "." in step:
            tag, cls = step.split(".", 1)
            steps.append((tag.lower(), cls))
        else:
            steps.append((step.lower(), None))
    return steps


_TAG_RE = re.compile(r"<[^>]*>")


def identify_by_product_detail(
    snapshot: LandingSnapshot,
    platform: str,
    rules: dict[str, ProductDetailRule],
    tokenizer: GreedyDictTokenizer,
) -> Optional[list[str]]:
    """Product text extracted via the attributed platform's rule, tokenized."""
    rule = rules.get(platform)
    if rule is None:
        return None
    text = None
    if rule.kind == "element":
        extractor = _ElementPathExtractor(_parse_path(rule.path))
        extractor.feed(snapshot.html)
        extractor.close()
        for match in extractor.matches:
            if match:
                text = match
                break
    else:
        start = snapshot.html.find(rule.start)
        if start >= 0:
            start += len(rule.start)
            end = snapshot.html.find(rule.end, start)
            if end >= 0:
                text = _TAG_RE.sub(" ", snapshot.html[start:end]).strip()
    if not text:
        return None
    keywords = tokenizer.tokenize(text)
    return keywords or None


def identify_via_image_service(image_ref: str, client: ImageClient) -> list[str]:
    """Labels for the creative image; ClientError propagates to the caller."""
    return client.labels_for(image_ref)


def identify_via_keyword_service(url: str, client: KeywordClient) -> list[str]:
    """First few planner keywords for the landing URL."""
    return client.keywords_for(url)[:KEYWORD_SERVICE_LIMIT]


# --------------------------------------------------------------------------
# cascade


@dataclass
class AdIdentifier:
    """Stateless identification cascade; safe to share across worker threads."""

    tokenizer: GreedyDictTokenizer
    taxonomy: Taxonomy
    product_rules: dict[str, ProductDetailRule] = field(default_factory=dict)
    image_client: Optional[ImageClient] = None
    keyword_client: Optional[KeywordClient] = None
    text_threshold: int = IMAGE_TEXT_THRESHOLD
    title_blocklist: frozenset[str] = DEFAULT_TITLE_BLOCKLIST

    def identify(self, snapshot: LandingSnapshot, platform: str, observation_id: str) -> AdLabel:
        keywords: Optional[list[str]] = None
        method = Method.UNRESOLVED
        note = ""
        if is_image_dominant(snapshot, self.text_threshold):
            if self.image_client is None:
                note = "image-dominant page but no image service configured"
            else:
                try:
                    labels = identify_via_image_service(snapshot.image_refs[0], self.image_client)
                except ClientError as exc:
                    note = f"image service failed: {exc}"
                else:
                    if labels:
                        keywords, method = labels, Method.IMAGE
                    else:
                        note = "image service returned no labels"
        else:
            keywords = identify_by_title(snapshot, self.tokenizer, self.title_blocklist)
            if keywords:
                method = Method.TITLE
            else:
                keywords = identify_by_product_detail(
                    snapshot, platform, self.product_rules, self.tokenizer
                )
                if keywords:
                    method = Method.PRODUCT_DETAIL
                elif self.keyword_client is not None:
                    try:
                        planner = identify_via_keyword_service(
                            snapshot.final_url, self.keyword_client
                        )
                    except ClientError as exc:
                        note = f"keyword service failed: {exc}"
                        planner = []
                    if planner:
                        keywords, method = planner, Method.KEYWORD_SERVICE
        if keywords:
            keywords = [k.strip().lower() for k in keywords if k.strip()]
        if not keywords:
            keywords = []
            method = Method.UNRESOLVED
            note = note or "no stage produced keywords"
            category = UNCATEGORIZED
        else:
            category, _, ties = match_category(keywords, self.taxonomy)
            if ties:
                note = "category tie with " + ", ".join(ties)
        return AdLabel(
            observation_id=observation_id,
            keywords=keywords,
            category=category,
            method=method,
            note=note,
        )
