"""Cosine k-means clustering with silhouette-driven cluster-count selection.

Distance is cosine distance with an explicit zero-vector convention: an
all-zero vector is at distance 1 from every nonzero vector and at distance 0
from other zero vectors.  Seeding is farthest-point from a seeded generator,
ties always resolve to the lowest index, and the centroid update minimizes the
within-cluster cosine cost exactly, so the objective never increases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .vectorize import DocumentVector

__all__ = [
    "Clustering",
    "CosineKMeans",
    "KSelector",
    "cosine_distance_matrix",
    "kmeans",
    "silhouette",
    "select_k",
]


def cosine_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances with the zero-vector convention."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    dots = A @ B.T
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    dist = 1.0 - sims
    zero_a = na == 0
    zero_b = nb == 0
    if zero_a.any() or zero_b.any():
        dist[zero_a, :] = 1.0
        dist[:, zero_b] = 1.0
        dist[np.ix_(zero_a, zero_b)] = 0.0
    return np.clip(dist, 0.0, 2.0)


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return X / safe


class CosineKMeans(ClusterMixin, BaseEstimator):
    """Lloyd iterations under cosine distance.

    Runs ``n_restarts`` seeded restarts, keeping the best objective (sum of
    distances to the assigned centroid).  Empty clusters are repaired by
    reseeding them with the point farthest from its current centroid.

    Fitted attributes: ``labels_``, ``cluster_centers_``, ``inertia_``,
    ``objective_history_`` (per-iteration objective of the winning restart).
    """

    def __init__(self, n_clusters: int = 2, seed: int = 0, n_restarts: int = 5, max_iter: int = 100):
        self.n_clusters = n_clusters
        self.seed = seed
        self.n_restarts = n_restarts
        self.max_iter = max_iter

    # -- internals ---------------------------------------------------------
    def _seed_centers(self, X: np.ndarray, unit: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        first = int(rng.integers(n))
        chosen = [first]
        while len(chosen) < self.n_clusters:
            d = cosine_distance_matrix(X, X[chosen]).min(axis=1)
            d[chosen] = -1.0
            chosen.append(int(np.argmax(d)))
        return X[chosen].copy()

    def _update_centers(self, X, unit, labels, centers):
        k = self.n_clusters
        new_centers = centers.copy()
        zero = np.zeros(X.shape[1])
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            mean_dir = unit[members].mean(axis=0)
            if np.linalg.norm(mean_dir) == 0:
                new_centers[c] = zero
                continue
            # A zero centroid can beat the mean direction when the cluster is
            # dominated by zero vectors (they sit at distance 0 from it), and
            # the objective must never increase on an update.
            if (np.linalg.norm(X[members], axis=1) == 0).any():
                cost_mean = cosine_distance_matrix(X[members], mean_dir[None, :]).sum()
                cost_zero = cosine_distance_matrix(X[members], zero[None, :]).sum()
                if cost_zero < cost_mean:
                    new_centers[c] = zero
                    continue
            new_centers[c] = mean_dir
        return new_centers

    def _run_once(self, X, unit, rng):
        n = X.shape[0]
        k = self.n_clusters
        centers = self._seed_centers(X, unit, rng)
        labels = np.full(n, -1)
        history: list[float] = []
        for _ in range(self.max_iter):
            D = cosine_distance_matrix(X, centers)
            new_labels = D.argmin(axis=1)
            # Repair empty clusters with the globally worst-placed point,
            # skipping donors that would become empty themselves.
            counts = np.bincount(new_labels, minlength=k)
            for c in range(k):
                if counts[c] > 0:
                    continue
                own = D[np.arange(n), new_labels]
                order = np.argsort(-own, kind="stable")
                for p in order:
                    if counts[new_labels[p]] > 1:
                        counts[new_labels[p]] -= 1
                        new_labels[p] = c
                        counts[c] = 1
                        break
            centers = self._update_centers(X, unit, new_labels, centers)
            objective = float(
                cosine_distance_matrix(X, centers)[np.arange(n), new_labels].sum()
            )
            history.append(objective)
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        return labels, centers, history

    # -- estimator API -----------------------------------------------------
    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        n = X.shape[0]
        if not 1 <= self.n_clusters <= n:
            raise ValueError(f"n_clusters must be in [1, {n}], got {self.n_clusters}")
        unit = _normalize_rows(X)
        best = None
        for restart in range(self.n_restarts):
            rng = np.random.default_rng((self.seed, restart))
            labels, centers, history = self._run_once(X, unit, rng)
            objective = history[-1]
            if best is None or objective < best[0]:
                best = (objective, labels, centers, history)
        self.inertia_ = best[0]
        self.labels_ = best[1]
        self.cluster_centers_ = best[2]
        self.objective_history_ = best[3]
        return self

    def predict(self, X):
        X = check_array(X, dtype=float)
        return cosine_distance_matrix(X, self.cluster_centers_).argmin(axis=1)


@dataclass
class Clustering:
    """A clustering of URL-keyed document vectors."""

    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    mean_silhouette: Optional[float] = None


def kmeans(vectors: list[DocumentVector], k: int, seed: int = 0) -> Clustering:
    """Cluster document vectors into k groups (deterministic per seed)."""
    if not vectors:
        raise ValueError("no vectors to cluster")
    X = np.vstack([v.weights for v in vectors])
    est = CosineKMeans(n_clusters=k, seed=seed).fit(X)
    assignments = {v.url: int(label) for v, label in zip(vectors, est.labels_)}
    return Clustering(k=k, assignments=assignments, centroids=est.cluster_centers_)


def silhouette_from_labels(X: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-point silhouette scores and their mean under cosine distance.

    Points in singleton clusters score 0, as does any point where both the
    intra and inter mean distances are 0.
    """
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    n = X.shape[0]
    D = cosine_distance_matrix(X, X)
    clusters = sorted(set(labels.tolist()))
    members = {c: np.flatnonzero(labels == c) for c in clusters}
    scores = np.zeros(n)
    for i in range(n):
        own = members[labels[i]]
        if own.size == 1:
            scores[i] = 0.0
            continue
        a = D[i, own].sum() / (own.size - 1)
        b = min(D[i, members[c]].mean() for c in clusters if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return scores, float(scores.mean())


def silhouette(vectors: list[DocumentVector], clustering: Clustering) -> tuple[list[float], float]:
    """Silhouette of a Clustering over its vectors."""
    X = np.vstack([v.weights for v in vectors])
    labels = np.array([clustering.assignments[v.url] for v in vectors])
    scores, mean = silhouette_from_labels(X, labels)
    return scores.tolist(), mean


def select_k(
    vectors: list[DocumentVector],
    k_min: int = 2,
    k_max: Optional[int] = None,
    seed: int = 0,
) -> tuple[int, Clustering, list[tuple[int, float]]]:
    """Pick the cluster count maximizing mean silhouette; ties go small.

    The scan range defaults to [2, min(30, #vectors)]; k = 1 stays out since
    the silhouette is undefined there.
    """
    m = len(vectors)
    if m < 2:
        raise ValueError("need at least 2 vectors to select k")
    if k_max is None:
        k_max = min(30, m)
    k_max = min(k_max, m)
    if k_min < 2:
        raise ValueError("k_min must be >= 2")
    if k_min > k_max:
        raise ValueError(f"empty k range [{k_min}, {k_max}]")
    table: list[tuple[int, float]] = []
    best: Optional[tuple[int, Clustering]] = None
    best_score = -np.inf
    for k in range(k_min, k_max + 1):
        clustering = kmeans(vectors, k, seed=seed)
        _, mean = silhouette(vectors, clustering)
        clustering.mean_silhouette = mean
        table.append((k, mean))
        if mean > best_score:
            best_score = mean
            best = (k, clustering)
    assert best is not None
    return best[0], best[1], table


class KSelector(BaseEstimator):
    """Estimator wrapper around select_k for matrix inputs.

    Fitted attributes: ``best_k_``, ``labels_``, ``cluster_centers_``,
    ``score_table_``.
    """

    def __init__(self, k_min: int = 2, k_max: Optional[int] = None, seed: int = 0):
        self.k_min = k_min
        self.k_max = k_max
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        vectors = [DocumentVector(url=str(i), weights=row) for i, row in enumerate(X)]
        best_k, clustering, table = select_k(vectors, self.k_min, self.k_max, self.seed)
        self.best_k_ = best_k
        self.labels_ = np.array([clustering.assignments[str(i)] for i in range(X.shape[0])])
        self.cluster_centers_ = clustering.centroids
        self.score_table_ = table
        return self
