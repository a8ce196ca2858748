"""Richer-semantics enrichment: exact k-NN over catalog embeddings and a
k-means codebook producing discrete semantic ids.

The k-NN is a deliberate brute-force scan; at catalog sizes of a few
thousand an approximate index buys nothing and costs exactness.  The
quantizer is plain k-means (k-means++ init, Lloyd iterations) and the
semantic id of an embedding is its nearest centroid, ties to the lowest
index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AttributeBudgetError, ConfigError, IdError, OutOfRangeError
from .events import MAX_ATTRIBUTES, Event, ITEM_ID_ATTRIBUTE, dense_attr
from .numeric import read_section, write_section

ENRICHED_ATTRIBUTE = "knn_embedding"


@dataclass(frozen=True)
class KnnIndex:
    """Item embeddings with their ids, queried by exact L2 distance."""

    ids: np.ndarray         # (M,) int64
    embeddings: np.ndarray  # (M, d) float64

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != ids.shape[0] or ids.shape[0] < 1:
            raise ConfigError("index needs aligned, non-empty ids and embeddings")
        if not np.all(np.isfinite(emb)):
            raise ConfigError("index embeddings must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def embedding_of(self, item_id: int) -> np.ndarray:
        rows = np.where(self.ids == item_id)[0]
        if rows.size == 0:
            raise IdError(f"item {item_id} not in index")
        return self.embeddings[rows[0]]


def knn_query(index: KnnIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Ids of the k nearest items by L2 distance, ascending; distance ties
    break by ascending item id."""
    if not (1 <= k <= len(index)):
        raise OutOfRangeError(f"k={k} outside [1, {len(index)}]")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.embeddings.shape[1]:
        raise ConfigError(
            f"query dim {q.shape[0]} != index dim {index.embeddings.shape[1]}"
        )
    diffs = index.embeddings - q
    dists = np.einsum("md,md->m", diffs, diffs)
    order = np.lexsort((index.ids, dists))
    return index.ids[order[:k]].copy()


@dataclass(frozen=True)
class Codebook:
    """k-means centroids; produced by train_codebook only."""

    centroids: np.ndarray                    # (C, d) float64
    wcss_history: tuple[float, ...] = ()     # per Lloyd iteration

    def __post_init__(self) -> None:
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ConfigError("codebook needs at least one centroid")
        if not np.all(np.isfinite(c)):
            raise ConfigError("centroids must be finite")
        object.__setattr__(self, "centroids", c)

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clamped at zero against rounding.
    sq = (
        np.sum(points * points, axis=1, keepdims=True)
        - 2.0 * points @ centers.T
        + np.sum(centers * centers, axis=1)
    )
    return np.maximum(sq, 0.0)


def train_codebook(
    embeddings: np.ndarray, size: int, iterations: int = 25, seed: int = 0
) -> Codebook:
    """k-means++ initialization followed by Lloyd iterations.

    The within-cluster sum of squares is recorded per iteration and is
    non-increasing; empty clusters keep their previous centroid.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError("embeddings must be a non-empty 2-D array")
    distinct = np.unique(x, axis=0).shape[0]
    if size > distinct:
        raise ConfigError(
            f"codebook size {size} exceeds {distinct} distinct embeddings"
        )
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((size, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(x.shape[0])]
    closest = _pairwise_sq_dists(x, centers[:1]).reshape(-1)
    for c in range(1, size):
        total = closest.sum()
        if total <= 0:
            # all mass already covered; pick any point not yet a centroid
            probs = np.full(x.shape[0], 1.0 / x.shape[0])
        else:
            probs = closest / total
        pick = rng.choice(x.shape[0], p=probs)
        centers[c] = x[pick]
        closest = np.minimum(
            closest, _pairwise_sq_dists(x, centers[c : c + 1]).reshape(-1)
        )

    history: list[float] = []
    for _ in range(iterations):
        d2 = _pairwise_sq_dists(x, centers)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(x.shape[0]), assign].sum()))
        for c in range(size):
            members = x[assign == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
    return Codebook(centroids=centers, wcss_history=tuple(history))


def assign_semantic_id(codebook: Codebook, embedding: np.ndarray) -> int:
    """Nearest-centroid index, ties to the lowest index."""
    e = np.asarray(embedding, dtype=np.float64).reshape(1, -1)
    if e.shape[1] != codebook.centroids.shape[1]:
        raise ConfigError(
            f"embedding dim {e.shape[1]} != codebook dim "
            f"{codebook.centroids.shape[1]}"
        )
    d2 = _pairwise_sq_dists(e, codebook.centroids)[0]
    return int(np.argmin(d2))


def assign_semantic_ids(codebook: Codebook, embeddings: np.ndarray) -> np.ndarray:
    """Vectorized nearest-centroid assignment for many embeddings."""
    x = np.asarray(embeddings, dtype=np.float64)
    d2 = _pairwise_sq_dists(x, codebook.centroids)
    return np.argmin(d2, axis=1).astype(np.int64)


def neighbor_mean(index: KnnIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Unweighted mean embedding of the k nearest items to the query."""
    ids = knn_query(index, query, k)
    rows = np.searchsorted(index.ids, ids) if _ids_sorted(index) else None
    if rows is None:
        stacked = np.stack([index.embedding_of(int(i)) for i in ids])
    else:
        stacked = index.embeddings[rows]
    return stacked.mean(axis=0)


def _ids_sorted(index: KnnIndex) -> bool:
    return bool(np.all(np.diff(index.ids) > 0))


def enrich_event(
    event: Event, index: KnnIndex, codebook: Codebook | None, k: int = 5
) -> Event:
    """Append one dense attribute: the mean of the k nearest catalog
    embeddings to the event's own item.

    Guards the 10-attribute budget and refuses to enrich twice.  When a
    codebook is given and the event carries a ``semantic_id`` attribute,
    that id is refreshed to stay consistent with the active codebook.
    """
    if len(event.attributes) >= MAX_ATTRIBUTES:
        raise AttributeBudgetError(
            f"event already has {len(event.attributes)} attributes"
        )
    if any(a.name == ENRICHED_ATTRIBUTE for a in event.attributes):
        raise AttributeBudgetError("event is already enriched")
    item_attr = ITEM_ID_ATTRIBUTE[event.source]
    item_id = event.attribute(item_attr).cat
    emb = index.embedding_of(item_id)
    mean = neighbor_mean(index, emb, k)
    attrs = list(event.attributes)
    if codebook is not None:
        for i, a in enumerate(attrs):
            if a.name == "semantic_id":
                attrs[i] = type(a)(name=a.name, cat=assign_semantic_id(codebook, emb))
    attrs.append(dense_attr(ENRICHED_ATTRIBUTE, mean))
    return Event(
        user_id=event.user_id,
        source=event.source,
        timestamp=event.timestamp,
        attributes=tuple(attrs),
    )


# ----------------------------------------------------------------------
# COF1 persistence with section tags
# ----------------------------------------------------------------------

KNN_TAG = b"KNNI"
CODEBOOK_TAG = b"CDBK"


def save_index(index: KnnIndex, path) -> None:
    write_section(
        path,
        KNN_TAG,
        {
            "ids": index.ids.astype(np.float64).reshape(1, -1),
            "embeddings": index.embeddings,
        },
    )


def load_index(path) -> KnnIndex:
    entries = read_section(path, KNN_TAG)
    return KnnIndex(
        ids=entries["ids"].reshape(-1).astype(np.int64),
        embeddings=entries["embeddings"],
    )


def save_codebook(codebook: Codebook, path) -> None:
    write_section(path, CODEBOOK_TAG, {"centroids": codebook.centroids})


def load_codebook(path) -> Codebook:
    entries = read_section(path, CODEBOOK_TAG)
    return Codebook(centroids=entries["centroids"])
