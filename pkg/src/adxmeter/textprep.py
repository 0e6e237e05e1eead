"""Page text extraction and tokenization.

Markup handling is tolerant of broken HTML (stdlib HTMLParser).  CJK runs are
segmented by greedy longest match against a pluggable word list; anything the
dictionary does not cover falls back to single characters.  Latin/alphanumeric
runs are split on non-word boundaries and lowercased.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable

from .detect import _is_cjk

__all__ = [
    "TokenizedDocument",
    "GreedyDictTokenizer",
    "ParsedPage",
    "parse_page",
    "extract_text",
    "load_dictionary",
    "DEFAULT_STOPWORDS",
]

# Terms carrying no topical signal; title keyword extraction drops these.
DEFAULT_STOPWORDS = frozenset(
    {
        "的", "了", "和", "与", "在", "是", "我", "你", "他", "她", "它",
        "们", "这", "那", "有", "就", "不", "也", "都", "个",
        "a", "an", "and", "the", "of", "to", "in", "for", "or", "on", "at", "is",
    }
)


@dataclass
class TokenizedDocument:
    """A document reduced to its token stream and term counts."""

    url: str
    tokens: list[str]
    term_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.term_counts:
            self.term_counts = dict(Counter(self.tokens))

    @property
    def length(self) -> int:
        return len(self.tokens)


class GreedyDictTokenizer:
    """Longest-match segmentation over a word list, single-char fallback."""

    def __init__(self, words: Iterable[str] = ()):
        self.words = {w.strip() for w in words if w and w.strip()}
        self._max_len = max((len(w) for w in self.words), default=1)

    def tokenize(self, text: str) -> list[str]:
        tokens: list[str] = []
        i = 0
        n = len(text)
        while i < n:
            ch = text[i]
            if _is_cjk(ch):
                matched = None
                limit = min(self._max_len, n - i)
                for length in range(limit, 1, -1):
                    cand = text[i : i + length]
                    if cand in self.words:
                        matched = cand
                        break
                if matched is None:
                    matched = ch
                tokens.append(matched)
                i += len(matched)
            elif ch.isalnum():
                j = i
                while j < n and text[j].isalnum() and not _is_cjk(text[j]):
                    j += 1
                tokens.append(text[i:j].lower())
                i = j
            else:
                i += 1
        return tokens


@dataclass
class ParsedPage:
    """Distilled view of one HTML document."""

    title: str = ""
    text: str = ""
    images: list[str] = field(default_factory=list)
    frames: list[str] = field(default_factory=list)
    links: list[str] = field(default_factory=list)


class _PageParser(HTMLParser):
    _SKIP = {"script", "style"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self._skip_depth = 0
        self._in_title = False
        self._title_parts: list[str] = []
        self._text_parts: list[str] = []
        self.images: list[str] = []
        self.frames: list[str] = []
        self.links: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1
            return
        if tag == "title":
            self._in_title = True
            return
        attr = dict(attrs)
        if tag == "img" and attr.get("src"):
            self.images.append(attr["src"])
        elif tag in ("iframe", "frame") and attr.get("src"):
            self.frames.append(attr["src"])
        elif tag == "a" and attr.get("href"):
            self.links.append(attr["href"])

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth:
            self._skip_depth -= 1
        elif tag == "title":
            self._in_title = False

    def handle_data(self, data):
        if self._skip_depth:
            return
        if self._in_title:
            self._title_parts.append(data)
            return
        stripped = data.strip()
        if stripped:
            self._text_parts.append(stripped)


def parse_page(html: str) -> ParsedPage:
    """Strip tags and script/style bodies; collect title, images, frames, links.

    Title text is kept out of the body text so image-heavy pages with a bare
    title still read as having no body.
    """
    parser = _PageParser()
    parser.feed(html)
    parser.close()
    return ParsedPage(
        title=" ".join(p.strip() for p in parser._title_parts if p.strip()),
        text=" ".join(parser._text_parts),
        images=parser.images,
        frames=parser.frames,
        links=parser.links,
    )


def extract_text(html: str, tokenizer: GreedyDictTokenizer, url: str = "") -> TokenizedDocument:
    """Tokenize the visible text of an HTML document (or plain text)."""
    page = parse_page(html)
    tokens = tokenizer.tokenize(page.text)
    return TokenizedDocument(url=url, tokens=tokens)


def load_dictionary(path: str | Path) -> set[str]:
    """One word per line; blank lines and # comments ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word and not word.startswith("#"):
                words.add(word)
    return words
