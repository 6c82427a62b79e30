"""User-based collaborative filtering over overlay or global neighborhoods.

Recommendation is majority voting: every neighbor casts one vote per
training item it has rated, items the active user already rated are removed,
and the N items with most votes win.  The same aggregation runs in two
architectures: over a peer's current overlay neighborhood (local knowledge
only) and over the global top-k most similar users, which serves as the
centralized reference.

The reference implementations here work on sparse per-user dicts; the
matrix-backed batch paths (used by the simulator and the harness at scale)
are cross-checked against them in the test suite.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .pushpull import PeerId
from .swarmix import RatingProfile, significance_weighted_similarity

# Ordered (item id, vote count) pairs, votes descending, item id ascending.
RecommendationList = list[tuple[int, int]]


class DeadPeer(Exception):
    """Recommendations were requested for a failed peer."""


class RatingMatrix:
    """Sparse users-by-items rating matrix with integer ratings in 1..5.

    Peers are row indices 0..n-1, assigned in ascending order of the original
    user keys.  Cells are immutable once constructed.
    """

    def __init__(self, by_user: Mapping[int, Mapping[int, int]]):
        if not by_user:
            raise ValueError("rating matrix needs at least one user")
        self.user_keys: list[int] = sorted(by_user)
        self.rows: list[dict[int, int]] = []
        items: set[int] = set()
        for key in self.user_keys:
            row = dict(by_user[key])
            if not row:
                raise ValueError(f"user {key!r} has no ratings")
            for item, value in row.items():
                if not 1 <= value <= 5:
                    raise ValueError(f"rating {value!r} outside 1..5")
            self.rows.append(row)
            items.update(row)
        self.item_ids: list[int] = sorted(items)

    @property
    def n_users(self) -> int:
        return len(self.rows)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_ratings(self) -> int:
        return sum(len(r) for r in self.rows)

    def profile(self, peer: PeerId) -> RatingProfile:
        return RatingProfile(self.rows[peer])

    def profiles(self) -> list[RatingProfile]:
        return [RatingProfile(row) for row in self.rows]


@dataclass
class TrainingArrays:
    """Dense working arrays derived from a training matrix.

    ``similarity[v, w]`` is the plain cosine between full rating rows (self
    similarity on the diagonal).  ``binary`` is the rated/unrated indicator
    used for vote tallies, ``rated_cols[v]`` the column indices peer v rated.
    """

    matrix: RatingMatrix
    item_ids: np.ndarray
    item_col: dict[int, int]
    values: np.ndarray
    binary: np.ndarray
    rated_cols: list[np.ndarray]
    similarity: np.ndarray


def build_training_arrays(matrix: RatingMatrix) -> TrainingArrays:
    n, m = matrix.n_users, matrix.n_items
    item_ids = np.asarray(matrix.item_ids, dtype=np.int64)
    item_col = {item: col for col, item in enumerate(matrix.item_ids)}
    values = np.zeros((n, m), dtype=np.float64)
    for v, row in enumerate(matrix.rows):
        for item, value in row.items():
            values[v, item_col[item]] = value
    binary = (values > 0).astype(np.uint8)
    rated_cols = [np.flatnonzero(binary[v]).astype(np.int32) for v in range(n)]
    norms = np.sqrt((values * values).sum(axis=1))
    unit = values / norms[:, None]
    similarity = unit @ unit.T
    np.clip(similarity, 0.0, 1.0, out=similarity)
    return TrainingArrays(
        matrix=matrix,
        item_ids=item_ids,
        item_col=item_col,
        values=values,
        binary=binary,
        rated_cols=rated_cols,
        similarity=similarity,
    )


def overlap_matrix(arrays: TrainingArrays) -> np.ndarray:
    b = arrays.binary.astype(np.float32)
    return np.rint(b @ b.T).astype(np.int32)


def weighted_similarity_matrix(arrays: TrainingArrays, threshold: int) -> np.ndarray:
    """Significance-weighted similarity for every user pair."""
    if threshold < 1:
        raise ValueError("threshold must be positive")
    counts = overlap_matrix(arrays)
    weight = np.minimum(counts, threshold) / float(threshold)
    return arrays.similarity * weight


def top_m_mean_table(similarity: np.ndarray, k: int) -> np.ndarray:
    """Per peer, mean similarity of its m globally most similar peers.

    Column m-1 holds the top-m mean (self excluded), for m = 1..k.  Because
    the global top-m maximizes the mean over every m-subset of candidates,
    these values bound any overlay neighborhood of matching size.
    """
    s = similarity.copy()
    np.fill_diagonal(s, -np.inf)
    top = -np.sort(-s, axis=1)[:, :k]
    return np.cumsum(top, axis=1) / np.arange(1, k + 1, dtype=np.float64)


def centralized_neighborhoods(weighted: np.ndarray, k: int) -> np.ndarray:
    """Global top-k neighbors per peer by (weighted similarity desc, id asc)."""
    n = weighted.shape[0]
    s = weighted.copy()
    np.fill_diagonal(s, -np.inf)
    ids = np.arange(n)
    out = np.empty((n, min(k, n - 1)), dtype=np.int32)
    for v in range(n):
        order = np.lexsort((ids, -s[v]))
        out[v] = order[: out.shape[1]]
    return out


def tally_votes(arrays: TrainingArrays, neighbor_rows: Iterable[int]) -> np.ndarray:
    """One vote per neighbor per training item it rated."""
    rows = np.asarray(list(neighbor_rows), dtype=np.intp)
    if rows.size == 0:
        return np.zeros(arrays.binary.shape[1], dtype=np.int64)
    return arrays.binary[rows].sum(axis=0, dtype=np.int64)


def top_n_from_votes(
    votes: np.ndarray,
    exclude_cols: np.ndarray,
    n_top: int,
    item_ids: np.ndarray,
) -> RecommendationList:
    """Top-N voted items, ties to the smaller item id, zero-vote items dropped."""
    m = votes.shape[0]
    votes = votes.copy()
    votes[exclude_cols] = 0
    # Composite key makes (votes desc, column asc) a strict total order.
    key = votes * np.int64(m + 1) + (np.int64(m) - np.arange(m, dtype=np.int64))
    take = min(n_top, m)
    part = np.argpartition(-key, take - 1)[:take] if take < m else np.arange(m)
    order = part[np.argsort(-key[part], kind="stable")]
    out: RecommendationList = []
    for col in order[:n_top]:
        if votes[col] == 0:
            break
        out.append((int(item_ids[col]), int(votes[col])))
    return out


def most_frequent_items(
    active: PeerId,
    neighbors: Iterable[PeerId],
    ratings: RatingMatrix,
    n_top: int,
) -> RecommendationList:
    """Reference majority-vote aggregation over per-user rating dicts."""
    if n_top < 1:
        raise ValueError("n_top must be positive")
    votes: Counter[int] = Counter()
    for w in neighbors:
        if w == active:
            raise ValueError("active user cannot vote for itself")
        votes.update(ratings.rows[w].keys())
    seen = ratings.rows[active].keys()
    ranked = sorted(
        ((item, count) for item, count in votes.items() if item not in seen),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[:n_top]


def centralized_recommend(
    active: PeerId,
    all_peers: Iterable[PeerId],
    ratings: RatingMatrix,
    k: int,
    n_top: int,
    threshold: int = 50,
) -> RecommendationList:
    """Reference oracle: global top-k neighborhood, then majority voting.

    Similarities are significance weighted; neighbor ties fall back to the
    smaller peer id.  Pure function of its inputs.
    """
    if k < 1:
        raise ValueError("k must be positive")
    profile = ratings.profile(active)
    scored = []
    for w in all_peers:
        if w == active:
            continue
        sim = significance_weighted_similarity(profile, ratings.profile(w), threshold)
        scored.append((-sim, w))
    scored.sort()
    neighborhood = [w for _, w in scored[:k]]
    return most_frequent_items(active, neighborhood, ratings, n_top)


def overlay_recommend(active: PeerId, state, ratings: RatingMatrix, n_top: int) -> RecommendationList:
    """Recommendations from the peer's current cache, local knowledge only."""
    if not state.alive[active]:
        raise DeadPeer(f"peer {active} is not alive")
    neighbors = [item.src for item in state.caches[active]]
    return most_frequent_items(active, neighbors, ratings, n_top)
