"""Interest taxonomy: named categories with keyword lists.

Categories are matched by keyword overlap; ties always resolve to the
lexicographically smaller category name so labeling stays deterministic.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cluster import Clustering

logger = logging.getLogger(__name__)

__all__ = [
    "Taxonomy",
    "match_category",
    "label_clusters",
    "label_clusters_detailed",
    "UNCATEGORIZED",
]

UNCATEGORIZED = "uncategorized"


def _norm(term: str) -> str:
    return term.strip().lower()


@dataclass
class Category:
    name: str
    keywords: list[str]


class Taxonomy:
    """Mapping of category name -> keyword set (normalized for matching)."""

    def __init__(self, categories: Iterable[tuple[str, Iterable[str]]]):
        self.categories: list[Category] = []
        self._keyword_sets: dict[str, frozenset[str]] = {}
        for name, keywords in categories:
            name = name.strip()
            kws = [k.strip() for k in keywords if k and k.strip()]
            if not name:
                raise ValueError("category name must be non-empty")
            if name in self._keyword_sets:
                raise ValueError(f"duplicate category: {name!r}")
            if not kws:
                raise ValueError(f"category {name!r} has an empty keyword list")
            self.categories.append(Category(name=name, keywords=kws))
            self._keyword_sets[name] = frozenset(_norm(k) for k in kws)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.categories]

    def keywords(self, name: str) -> frozenset[str]:
        return self._keyword_sets[name]

    def __contains__(self, name: str) -> bool:
        return name in self._keyword_sets

    def overlap(self, name: str, terms: Iterable[str]) -> int:
        normalized = {_norm(t) for t in terms}
        return len(normalized & self._keyword_sets[name])

    @classmethod
    def from_jsonl(cls, lines: Iterable[str]) -> "Taxonomy":
        cats = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"taxonomy line {lineno}: invalid json ({exc.msg})") from exc
            if not isinstance(obj, dict) or "category" not in obj or "keywords" not in obj:
                raise ValueError(f"taxonomy line {lineno}: expected {{category, keywords}}")
            cats.append((obj["category"], obj["keywords"]))
        return cls(cats)

    @classmethod
    def load(cls, path) -> "Taxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh)


def match_category(terms: Iterable[str], taxonomy: Taxonomy) -> tuple[str, int, list[str]]:
    """Best-overlap category for a term set.

    Returns (name, overlap, tied_names).  Zero overlap everywhere maps to
    UNCATEGORIZED; ties pick the lexicographically smaller name and report
    the competing names.
    """
    terms = list(terms)
    best_names: list[str] = []
    best_overlap = 0
    for name in taxonomy.names:
        ov = taxonomy.overlap(name, terms)
        if ov > best_overlap:
            best_overlap = ov
            best_names = [name]
        elif ov == best_overlap and ov > 0:
            best_names.append(name)
    if best_overlap == 0:
        return UNCATEGORIZED, 0, []
    best_names.sort()
    ties = best_names[1:]
    return best_names[0], best_overlap, ties


@dataclass
class ClusterLabel:
    cluster: int
    category: str
    overlap: int
    top_terms: list[str]
    tied_with: list[str]


def _top_centroid_terms(centroid: np.ndarray, vocabulary: list[str], top_terms: int) -> list[str]:
    order = sorted(range(len(vocabulary)), key=lambda i: (-centroid[i], vocabulary[i]))
    return [vocabulary[i] for i in order[:top_terms]]


def label_clusters_detailed(
    clustering: Clustering,
    vocabulary: list[str],
    taxonomy: Taxonomy,
    top_terms: int = 10,
) -> list[ClusterLabel]:
    """Label every cluster by its top centroid terms' taxonomy overlap."""
    labels = []
    for c in range(clustering.k):
        terms = _top_centroid_terms(np.asarray(clustering.centroids[c]), vocabulary, top_terms)
        category, overlap, ties = match_category(terms, taxonomy)
        if ties:
            logger.warning(
                "cluster %d: category tie between %s; keeping %s",
                c, [category] + ties, category,
            )
        labels.append(
            ClusterLabel(cluster=c, category=category, overlap=overlap, top_terms=terms, tied_with=ties)
        )
    return labels


def label_clusters(
    clustering: Clustering,
    vocabulary: list[str],
    taxonomy: Taxonomy,
    top_terms: int = 10,
) -> dict[int, str]:
    """Map cluster index -> category name (UNCATEGORIZED when nothing overlaps)."""
    return {
        lab.cluster: lab.category
        for lab in label_clusters_detailed(clustering, vocabulary, taxonomy, top_terms)
    }
