"""Cosine k-means, silhouette scoring, and cluster-count selection."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adxmeter.cluster import (
    CosineKMeans,
    KSelector,
    cosine_distance_matrix,
    kmeans,
    select_k,
    silhouette,
    silhouette_from_labels,
)
from adxmeter.vectorize import DocumentVector


def _vectors(X):
    return [DocumentVector(url=str(i), weights=np.asarray(row, dtype=float)) for i, row in enumerate(X)]


def blob_matrix(seed: int, per: int = 15, dims: int = 6, noise: float = 0.05) -> np.ndarray:
    """Four tight blobs along distinct axes; separation is angular."""
    rng = np.random.default_rng(seed)
    rows = []
    for axis in range(4):
        center = np.zeros(dims)
        center[axis] = 1.0
        for _ in range(per):
            rows.append(center + rng.normal(0.0, noise, dims))
    return np.vstack(rows)


# -- distance conventions ------------------------------------------------------


def test_cosine_distance_conventions():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0], [-2.0, 0.0], [0.0, 0.0]])
    D = cosine_distance_matrix(a, b)
    assert D[0, 0] == pytest.approx(0.0)  # parallel
    assert D[0, 1] == pytest.approx(1.0)  # orthogonal
    assert D[0, 2] == pytest.approx(2.0)  # opposite
    assert D[0, 3] == 1.0  # nonzero vs zero
    assert D[1, 0] == 1.0  # zero vs nonzero
    assert D[1, 3] == 0.0  # zero vs zero


def test_cosine_distance_scale_invariant():
    a = np.array([[3.0, 4.0]])
    b = np.array([[0.3, 0.4]])
    assert cosine_distance_matrix(a, b)[0, 0] == pytest.approx(0.0, abs=1e-12)


# -- k-means ---------------------------------------------------------------------


def test_two_pair_partition():
    X = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    for seed in range(5):
        est = CosineKMeans(n_clusters=2, seed=seed).fit(X)
        assert est.labels_[0] == est.labels_[1]
        assert est.labels_[2] == est.labels_[3]
        assert est.labels_[0] != est.labels_[2]


def test_k_equals_n_isolates_every_point():
    X = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    est = CosineKMeans(n_clusters=3, seed=0).fit(X)
    assert sorted(est.labels_.tolist()) == [0, 1, 2]
    assert est.inertia_ == pytest.approx(0.0, abs=1e-12)


def test_same_seed_reproduces_fit():
    X = blob_matrix(3)
    a = CosineKMeans(n_clusters=4, seed=11).fit(X)
    b = CosineKMeans(n_clusters=4, seed=11).fit(X)
    assert np.array_equal(a.labels_, b.labels_)
    assert a.inertia_ == b.inertia_


def test_predict_agrees_with_training_labels():
    X = blob_matrix(1)
    est = CosineKMeans(n_clusters=4, seed=0).fit(X)
    assert np.array_equal(est.predict(X), est.labels_)


def test_empty_clusters_get_repaired():
    # Five copies of one direction and a single outlier; k=3 forces at least
    # one would-be-empty cluster every iteration.
    X = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]])
    est = CosineKMeans(n_clusters=3, seed=0).fit(X)
    counts = np.bincount(est.labels_, minlength=3)
    assert (counts >= 1).all()


def test_fit_validates_cluster_count():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="n_clusters"):
        CosineKMeans(n_clusters=3).fit(X)
    with pytest.raises(ValueError, match="n_clusters"):
        CosineKMeans(n_clusters=0).fit(X)


def test_kmeans_wrapper_keys_by_url():
    clustering = kmeans(_vectors([[1, 0], [0.9, 0.1], [0, 1]]), k=2, seed=0)
    assert set(clustering.assignments) == {"0", "1", "2"}
    assert clustering.assignments["0"] == clustering.assignments["1"]
    assert clustering.assignments["0"] != clustering.assignments["2"]
    with pytest.raises(ValueError, match="no vectors"):
        kmeans([], k=2)


@settings(deadline=None, max_examples=40)
@given(
    st.integers(min_value=2, max_value=3),
    st.lists(
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3),
        min_size=4,
        max_size=9,
    ),
)
def test_objective_never_increases(k, rows):
    X = np.array(rows)
    est = CosineKMeans(n_clusters=k, seed=0, n_restarts=2).fit(X)
    history = est.objective_history_
    for prev, cur in zip(history, history[1:]):
        assert cur <= prev + 1e-9


# -- silhouette ---------------------------------------------------------------------

HAND_POINTS = np.array(
    [[1.0, 0.0], [0.9, 0.1], [0.8, 0.2], [0.0, 1.0], [0.1, 0.9], [0.2, 0.8]]
)
HAND_LABELS = np.array([0, 0, 0, 1, 1, 1])
# Worked out by hand from (b - a) / max(a, b) under cosine distance; the
# configuration is mirror-symmetric, so the two clusters score identically.
HAND_SCORES = [
    0.9796146663634244,
    0.9902295327367492,
    0.9699293771092451,
    0.9796146663634244,
    0.9902295327367492,
    0.9699293771092451,
]
HAND_MEAN = 0.9799245254031396


def brute_silhouette(points, labels):
    """Triple-loop evaluator straight from the definition."""

    def dist(p, q):
        np_, nq = math.hypot(*p), math.hypot(*q)
        if np_ == 0 and nq == 0:
            return 0.0
        if np_ == 0 or nq == 0:
            return 1.0
        return 1.0 - (p[0] * q[0] + p[1] * q[1]) / (np_ * nq)

    out = []
    for i, p in enumerate(points):
        own = [j for j in range(len(points)) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(dist(p, points[j]) for j in own) / len(own)
        other = [j for j in range(len(points)) if labels[j] != labels[i]]
        b = sum(dist(p, points[j]) for j in other) / len(other)
        out.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return out


def test_silhouette_matches_hand_case_and_brute_force():
    scores, mean = silhouette_from_labels(HAND_POINTS, HAND_LABELS)
    for got, frozen, brute in zip(scores, HAND_SCORES, brute_silhouette(HAND_POINTS, HAND_LABELS)):
        assert got == pytest.approx(frozen, abs=1e-9)
        assert got == pytest.approx(brute, abs=1e-9)
    assert mean == pytest.approx(HAND_MEAN, abs=1e-9)


def test_silhouette_singleton_cluster_scores_zero():
    X = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    scores, _ = silhouette_from_labels(X, np.array([0, 0, 1]))
    assert scores[2] == 0.0


def test_silhouette_identical_points_score_zero():
    X = np.array([[1.0, 0.0]] * 4)
    scores, mean = silhouette_from_labels(X, np.array([0, 0, 1, 1]))
    assert scores.tolist() == [0.0] * 4
    assert mean == 0.0


def test_silhouette_needs_two_clusters():
    with pytest.raises(ValueError, match="2 clusters"):
        silhouette_from_labels(HAND_POINTS, np.zeros(6, dtype=int))


def test_silhouette_scores_bounded():
    X = blob_matrix(5)
    clustering = kmeans(_vectors(X), k=4, seed=0)
    scores, mean = silhouette(_vectors(X), clustering)
    assert all(-1.0 <= s <= 1.0 for s in scores)
    assert -1.0 <= mean <= 1.0


# -- cluster-count selection ------------------------------------------------------------


def test_select_k_finds_blob_count():
    best_k, clustering, table = select_k(_vectors(blob_matrix(0)), 2, 8, seed=0)
    assert best_k == 4
    assert clustering.k == 4
    assert clustering.mean_silhouette is not None
    assert [k for k, _ in table] == list(range(2, 9))
    assert all(-1.0 <= s <= 1.0 for _, s in table)


def test_select_k_tie_prefers_smaller_k():
    # All points identical: every k scores 0, so the first (smallest) k wins.
    best_k, _, table = select_k(_vectors([[1.0, 0.0]] * 5), 2, 4, seed=0)
    assert best_k == 2
    assert all(s == 0.0 for _, s in table)


def test_select_k_range_validation():
    vecs = _vectors(blob_matrix(0, per=2))
    with pytest.raises(ValueError, match="k_min"):
        select_k(vecs, 1, 4)
    with pytest.raises(ValueError, match="empty k range"):
        select_k(vecs, 9, 8)
    with pytest.raises(ValueError, match="at least 2"):
        select_k(_vectors([[1.0, 0.0]]))


def test_select_k_caps_range_at_vector_count():
    vecs = _vectors([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    _, _, table = select_k(vecs, 2, 30, seed=0)
    assert [k for k, _ in table] == [2, 3]


def test_kselector_estimator():
    X = blob_matrix(2)
    sel = KSelector(k_min=2, k_max=8, seed=0).fit(X)
    assert sel.best_k_ == 4
    assert sel.labels_.shape == (60,)
    assert sel.cluster_centers_.shape[0] == 4
    assert dict(sel.score_table_)[4] == max(s for _, s in sel.score_table_)
    assert KSelector(k_max=8).get_params() == {"k_min": 2, "k_max": 8, "seed": 0}
