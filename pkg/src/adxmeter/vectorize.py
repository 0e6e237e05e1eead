"""Corpus vectorization.

Weights follow the normalized-count / log2 inverse-document-frequency form
with no smoothing: weight = (n_td / len(d)) * log2(|D| / df_t).  Each document
keeps only its top-weighted terms (ties broken lexicographically) and the
shared vocabulary is the sorted union of those selections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .textprep import TokenizedDocument

__all__ = [
    "TfIdfModel",
    "DocumentVector",
    "tfidf_weight",
    "TfidfFeaturizer",
    "vectorize_corpus",
]


@dataclass
class TfIdfModel:
    """Corpus statistics needed to weight any term of the corpus."""

    corpus_size: int
    doc_freq: dict[str, int]
    vocabulary: list[str]


@dataclass
class DocumentVector:
    """A document's weights over the shared vocabulary."""

    url: str
    weights: np.ndarray


def tfidf_weight(term: str, doc: TokenizedDocument, model: TfIdfModel) -> float:
    """Weight of ``term`` in ``doc``; 0.0 when the doc does not contain it.

    Raises ValueError for terms absent from the whole corpus (undefined idf).
    """
    df = model.doc_freq.get(term)
    if not df:
        raise ValueError(f"term {term!r} does not occur in the corpus")
    count = doc.term_counts.get(term, 0)
    if count == 0:
        return 0.0
    return (count / doc.length) * math.log2(model.corpus_size / df)


class TfidfFeaturizer(TransformerMixin, BaseEstimator):
    """Fit corpus statistics, transform documents to weight vectors.

    Fitted attributes: ``corpus_size_``, ``doc_freq_``, ``vocabulary_``,
    ``selected_terms_`` (the per-document feature cut, aligned with the fit
    corpus) and ``model_``.
    """

    def __init__(self, per_doc_features: int = 20):
        self.per_doc_features = per_doc_features

    def fit(self, docs: list[TokenizedDocument], y=None):
        if self.per_doc_features < 1:
            raise ValueError("per_doc_features must be >= 1")
        docs = list(docs)
        if len(docs) < 2:
            raise ValueError("need at least 2 documents")
        if all(doc.length == 0 for doc in docs):
            raise ValueError("all documents are empty")
        doc_freq: dict[str, int] = {}
        for doc in docs:
            for term in doc.term_counts:
                doc_freq[term] = doc_freq.get(term, 0) + 1
        self.corpus_size_ = len(docs)
        self.doc_freq_ = doc_freq
        model = TfIdfModel(corpus_size=len(docs), doc_freq=doc_freq, vocabulary=[])
        selected: list[list[str]] = []
        for doc in docs:
            ranked = sorted(
                doc.term_counts,
                key=lambda t: (-tfidf_weight(t, doc, model), t),
            )
            selected.append(ranked[: self.per_doc_features])
        self.selected_terms_ = selected
        vocabulary = sorted(set().union(*selected)) if selected else []
        self.vocabulary_ = vocabulary
        model.vocabulary = vocabulary
        self.model_ = model
        self._vocab_index = {t: i for i, t in enumerate(vocabulary)}
        return self

    def transform(self, docs: list[TokenizedDocument]) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ValueError("featurizer is not fitted")
        X = np.zeros((len(docs), len(self.vocabulary_)))
        for row, doc in enumerate(docs):
            if doc.length == 0:
                continue
            for term, count in doc.term_counts.items():
                col = self._vocab_index.get(term)
                if col is None:
                    continue
                df = self.doc_freq_[term]
                X[row, col] = (count / doc.length) * math.log2(self.corpus_size_ / df)
        return X


def vectorize_corpus(
    docs: list[TokenizedDocument], per_doc_features: int = 20
) -> tuple[TfIdfModel, list[DocumentVector]]:
    """Fit on the corpus and return (model, one vector per document)."""
    featurizer = TfidfFeaturizer(per_doc_features=per_doc_features)
    X = featurizer.fit(docs).transform(docs)
    vectors = [DocumentVector(url=doc.url, weights=X[i]) for i, doc in enumerate(docs)]
    return featurizer.model_, vectors
