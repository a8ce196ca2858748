"""Seeded synthetic universe: users with latent intents, content/ad
catalogs, engagement event logs and click labels.

Everything here is invented dynamics with PLANTED structure, chosen so
the qualitative behaviours the harness measures are guaranteed by
construction, not discovered:

* users/items live on a shared unit sphere of latent topic space; item
  choice concentrates on the user's intent (softmax with temperature
  ``beta``);
* click probability is sigmoid(w0 + w1*<intent, ad> + w2*s_ad + w3*s_org)
  where s_ad / s_org are recency-weighted mean affinities of the user's
  past ad-impression / organic-impression events to the candidate ad, and
  the default weights satisfy w2 > w3 > 0.  That inequality is what makes
  ad-impression history the highest-ROI source: it is planted.

Random streams are split per purpose (world / events / requests / labels)
so that, e.g., adding requests never perturbs world generation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .enrichment import Codebook, assign_semantic_ids, train_codebook
from .errors import ConfigError, EventLogParseError, IdError
from .events import (
    DWELL_EDGES_SECONDS,
    ITEM_ID_ATTRIBUTE,
    CatalogSizes,
    EventLog,
    SourceTable,
    SourceType,
)

DAY_SECONDS = 86_400

# Named substreams of the master seed.
_STREAM_WORLD = 0
_STREAM_EVENTS = 1
_STREAM_REQUESTS = 2
_STREAM_LABELS = 3
_STREAM_CODEBOOK = 4


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass(frozen=True)
class WorldConfig:
    """Knobs of the synthetic universe; see README for the full key list."""

    users: int = 600
    contents: int = 400
    ads: int = 120
    topics: int = 10
    d_z: int = 8
    d_c: int = 16
    horizon_days: float = 21.0
    activity_rate: float = 90.0      # mean events/day per user, all sources
    activity_sigma: float = 0.35     # lognormal spread of per-user rates
    requests_per_user: int = 170
    request_start_frac: float = 2.0 / 3.0
    w0: float = -3.8                 # keeps base CTR near 0.2
    w1: float = 0.8
    w2: float = 12.0                 # ad-history weight; planted > w3
    w3: float = 4.0                  # organic-history weight; planted > 0
    tau_days: float = 1.6
    affinity_kappa: float = 3.0      # sharpness of event-to-ad affinity
    beta: float = 2.5                # organic item-choice sharpness
    beta_ad: float = 0.0             # ad delivery is untargeted
    beta_video: float = 1.5          # video feeds explore more
    topic_spread: float = 0.75       # topics share a popularity axis
    codebook_size: int = 32
    knn_k: int = 5
    n_authors: int = 300
    n_pages: int = 8
    intent_noise: float = 0.35
    embed_noise: float = 0.15
    dwell_base: float = 1.6          # log-seconds at zero affinity
    dwell_gain: float = 1.2
    dwell_sigma: float = 0.9
    seed: int = 42

    def __post_init__(self) -> None:
        if min(self.users, self.contents, self.ads, self.topics) < 1:
            raise ConfigError("users/contents/ads/topics must all be >= 1")
        if self.d_z < 2:
            raise ConfigError("d_z must be >= 2")
        if self.horizon_days < 1:
            raise ConfigError("horizon_days must be >= 1")
        if not (0.0 <= self.request_start_frac < 1.0):
            raise ConfigError("request_start_frac must lie in [0, 1)")
        if self.codebook_size > self.ads:
            raise ConfigError("codebook_size cannot exceed the ad count")

    def catalog_sizes(self) -> CatalogSizes:
        return CatalogSizes(
            contents=self.contents,
            ads=self.ads,
            semantic_codes=self.codebook_size,
            authors=self.n_authors,
            pages=self.n_pages,
            embedding_dim=self.d_c,
        )


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    intent: tuple[float, ...]
    activity_rate: float


@dataclass(frozen=True)
class ContentItem:
    item_id: int
    topic_affinity: tuple[float, ...]
    content_embedding: tuple[float, ...]
    author_id: int
    media_type: int


@dataclass(frozen=True)
class AdItem:
    item_id: int
    topic_affinity: tuple[float, ...]
    content_embedding: tuple[float, ...]
    semantic_id: int


@dataclass(frozen=True)
class TrainingExample:
    user_id: int
    ad_id: int
    timestamp: int
    label: int


class World:
    """Deterministic function of (WorldConfig, seed); columnar inside."""

    def __init__(
        self,
        config: WorldConfig,
        seed: int,
        user_intent: np.ndarray,
        user_rate: np.ndarray,
        content_affinity: np.ndarray,
        content_embedding: np.ndarray,
        content_author: np.ndarray,
        content_media: np.ndarray,
        ad_affinity: np.ndarray,
        ad_embedding: np.ndarray,
        ad_semantic: np.ndarray,
        codebook: Codebook,
    ):
        self.config = config
        self.seed = seed
        self.topics = config.topics
        self.user_intent = user_intent
        self.user_rate = user_rate
        self.content_affinity = content_affinity
        self.content_embedding = content_embedding
        self.content_author = content_author
        self.content_media = content_media
        self.ad_affinity = ad_affinity
        self.ad_embedding = ad_embedding
        self.ad_semantic = ad_semantic
        self.codebook = codebook

    @property
    def n_users(self) -> int:
        return self.user_intent.shape[0]

    @cached_property
    def users(self) -> list[UserProfile]:
        return [
            UserProfile(u, tuple(self.user_intent[u]), float(self.user_rate[u]))
            for u in range(self.n_users)
        ]

    @cached_property
    def contents(self) -> list[ContentItem]:
        return [
            ContentItem(
                i,
                tuple(self.content_affinity[i]),
                tuple(self.content_embedding[i]),
                int(self.content_author[i]),
                int(self.content_media[i]),
            )
            for i in range(self.content_affinity.shape[0])
        ]

    @cached_property
    def ads(self) -> list[AdItem]:
        return [
            AdItem(
                i,
                tuple(self.ad_affinity[i]),
                tuple(self.ad_embedding[i]),
                int(self.ad_semantic[i]),
            )
            for i in range(self.ad_affinity.shape[0])
        ]

    def catalog_sizes(self) -> CatalogSizes:
        return self.config.catalog_sizes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, World):
            return NotImplemented
        return (
            self.config == other.config
            and self.seed == other.seed
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in (
                    "user_intent",
                    "user_rate",
                    "content_affinity",
                    "content_embedding",
                    "content_author",
                    "content_media",
                    "ad_affinity",
                    "ad_embedding",
                    "ad_semantic",
                )
            )
            and np.array_equal(self.codebook.centroids, other.codebook.centroids)
        )


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms


def _sample_on_topics(
    rng: np.random.Generator,
    centroids: np.ndarray,
    count: int,
    noise: float,
) -> np.ndarray:
    topics = rng.integers(centroids.shape[0], size=count)
    raw = centroids[topics] + noise * rng.normal(size=(count, centroids.shape[1]))
    return _unit_rows(raw)


def generate_world(config: WorldConfig, seed: int | None = None) -> World:
    """Build the catalogs and user population; deterministic in (config, seed)."""
    seed = config.seed if seed is None else seed
    rng = _stream(seed, _STREAM_WORLD)

    # Topic centroids share a popularity axis so that the affinity cosine
    # between unrelated items stays positive on average; relatedness is
    # then a lift over that baseline rather than a sign change.
    axis = np.zeros(config.d_z)
    axis[0] = 1.0
    centroids = _unit_rows(
        axis + config.topic_spread * rng.normal(size=(config.topics, config.d_z))
    )
    projection = rng.normal(size=(config.d_z, config.d_c))

    user_intent = _sample_on_topics(rng, centroids, config.users, config.intent_noise)
    mu = np.log(config.activity_rate) - config.activity_sigma**2 / 2.0
    user_rate = rng.lognormal(mean=mu, sigma=config.activity_sigma, size=config.users)

    def catalog(count: int) -> tuple[np.ndarray, np.ndarray]:
        affinity = _sample_on_topics(rng, centroids, count, config.intent_noise)
        emb = _unit_rows(
            affinity @ projection
            + config.embed_noise * rng.normal(size=(count, config.d_c))
        )
        return affinity, emb

    content_affinity, content_embedding = catalog(config.contents)
    content_author = rng.integers(config.n_authors, size=config.contents)
    content_media = rng.integers(3, size=config.contents)

    ad_affinity, ad_embedding = catalog(config.ads)
    codebook = train_codebook(
        ad_embedding,
        config.codebook_size,
        iterations=25,
        seed=int(_stream(seed, _STREAM_CODEBOOK).integers(2**31)),
    )
    ad_semantic = assign_semantic_ids(codebook, ad_embedding)

    return World(
        config=config,
        seed=seed,
        user_intent=user_intent,
        user_rate=user_rate,
        content_affinity=content_affinity,
        content_embedding=content_embedding,
        content_author=content_author,
        content_media=content_media,
        ad_affinity=ad_affinity,
        ad_embedding=ad_embedding,
        ad_semantic=ad_semantic,
        codebook=codebook,
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def _dwell_buckets(
    rng: np.random.Generator, affinity_cos: np.ndarray, config: WorldConfig
) -> np.ndarray:
    log_dwell = (
        config.dwell_base
        + config.dwell_gain * affinity_cos
        + config.dwell_sigma * rng.normal(size=affinity_cos.shape[0])
    )
    dwell = np.exp(log_dwell)
    buckets = np.searchsorted(DWELL_EDGES_SECONDS, dwell, side="right") - 1
    return np.clip(buckets, 0, DWELL_EDGES_SECONDS.shape[0] - 2)


_SOURCE_MIX = (
    (SourceType.ORGANIC_IMPRESSION, 1.0 / 3.0),
    (SourceType.AD_IMPRESSION, 1.0 / 3.0),
    (SourceType.VIDEO_VIEW, 1.0 / 3.0),
)


def simulate_events(
    world: World, horizon_days: float | None = None, seed: int | None = None
) -> EventLog:
    """Emit the full engagement log for every user over the horizon.

    Per user the total event count is Poisson(activity_rate * horizon);
    each event gets a uniform timestamp, a source from the fixed mix, and
    an item drawn with probability proportional to
    softmax(beta * <intent, item affinity>) within its catalog.
    Dwell times are log-normal with mean increasing in affinity.
    """
    config = world.config
    horizon = config.horizon_days if horizon_days is None else horizon_days
    if horizon < 1:
        raise ConfigError("horizon_days must be >= 1")
    seed = (
        int(_stream(world.seed, _STREAM_EVENTS).integers(2**31))
        if seed is None
        else seed
    )
    rng = np.random.default_rng(seed)
    horizon_sec = int(horizon * DAY_SECONDS)
    sources = [s for s, _ in _SOURCE_MIX]
    mix = np.array([w for _, w in _SOURCE_MIX])

    per_source: dict[SourceType, dict[str, list[np.ndarray]]] = {
        s: {"user": [], "ts": [], "idx": [], "item": [], "dwell": [],
            "extra1": [], "extra2": []}
        for s in sources
    }
    next_idx = 0
    for u in range(world.n_users):
        n = int(rng.poisson(world.user_rate[u] * horizon))
        if n == 0:
            continue
        ts = rng.integers(1, horizon_sec + 1, size=n)
        src = rng.choice(len(sources), size=n, p=mix)
        idx = np.arange(next_idx, next_idx + n)
        next_idx += n

        content_align = world.content_affinity @ world.user_intent[u]
        p_content = _softmax(config.beta * content_align)
        p_video = _softmax(config.beta_video * content_align)
        p_ad = _softmax(config.beta_ad * (world.ad_affinity @ world.user_intent[u]))

        for s_i, source in enumerate(sources):
            rows = np.where(src == s_i)[0]
            if rows.size == 0:
                continue
            cols = per_source[source]
            cols["user"].append(np.full(rows.size, u))
            cols["ts"].append(ts[rows])
            cols["idx"].append(idx[rows])
            if source is SourceType.AD_IMPRESSION:
                items = rng.choice(config.ads, size=rows.size, p=p_ad)
                cols["item"].append(items)
            else:
                p_items = (
                    p_content
                    if source is SourceType.ORGANIC_IMPRESSION
                    else p_video
                )
                items = rng.choice(config.contents, size=rows.size, p=p_items)
                cols["item"].append(items)
                cos = content_align[items]
                cols["dwell"].append(_dwell_buckets(rng, cos, config))
                if source is SourceType.ORGANIC_IMPRESSION:
                    cols["extra1"].append(rng.integers(16, size=rows.size))  # position
                else:
                    cols["extra1"].append(rng.integers(config.n_pages, size=rows.size))
                    cols["extra2"].append(
                        (rng.random(rows.size) < 0.1).astype(np.int64)  # content_type
                    )

    def _cat(chunks: list[np.ndarray]) -> np.ndarray:
        return (
            np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        )

    tables: dict[SourceType, SourceTable] = {}
    organic = per_source[SourceType.ORGANIC_IMPRESSION]
    items = _cat(organic["item"])
    tables[SourceType.ORGANIC_IMPRESSION] = SourceTable(
        SourceType.ORGANIC_IMPRESSION,
        _cat(organic["user"]),
        _cat(organic["ts"]),
        _cat(organic["idx"]),
        cats={
            "content_id": items,
            "dwell_time": _cat(organic["dwell"]),
            "media_type": world.content_media[items] if items.size else items,
            "position": _cat(organic["extra1"]),
        },
        denses={},
        n_users=world.n_users,
    )
    ad = per_source[SourceType.AD_IMPRESSION]
    ad_items = _cat(ad["item"])
    tables[SourceType.AD_IMPRESSION] = SourceTable(
        SourceType.AD_IMPRESSION,
        _cat(ad["user"]),
        _cat(ad["ts"]),
        _cat(ad["idx"]),
        cats={
            "semantic_id": world.ad_semantic[ad_items] if ad_items.size else ad_items,
            "ad_id": ad_items,
        },
        denses={},
        n_users=world.n_users,
    )
    video = per_source[SourceType.VIDEO_VIEW]
    v_items = _cat(video["item"])
    tables[SourceType.VIDEO_VIEW] = SourceTable(
        SourceType.VIDEO_VIEW,
        _cat(video["user"]),
        _cat(video["ts"]),
        _cat(video["idx"]),
        cats={
            "video_id": v_items,
            "author_id": world.content_author[v_items] if v_items.size else v_items,
            "post_id": v_items,
            "dwell_time": _cat(video["dwell"]),
            "page_id": _cat(video["extra1"]),
            "content_type": _cat(video["extra2"]),
        },
        denses={},
        n_users=world.n_users,
    )
    return EventLog(tables, world.n_users)


# ----------------------------------------------------------------------
# Requests and labels
# ----------------------------------------------------------------------


class ExampleSet(Sequence):
    """Columnar (user, ad, timestamp, label) records; a Sequence of
    TrainingExample for callers that want objects."""

    def __init__(
        self,
        user: np.ndarray,
        ad: np.ndarray,
        ts: np.ndarray,
        label: np.ndarray | None = None,
        p_true: np.ndarray | None = None,
    ):
        self.user = np.asarray(user, dtype=np.int64)
        self.ad = np.asarray(ad, dtype=np.int64)
        self.ts = np.asarray(ts, dtype=np.int64)
        n = self.user.shape[0]
        if self.ad.shape[0] != n or self.ts.shape[0] != n:
            raise ValueError("misaligned request columns")
        self.label = (
            np.asarray(label, dtype=np.int64) if label is not None else None
        )
        self.p_true = (
            np.asarray(p_true, dtype=np.float64) if p_true is not None else None
        )

    def __len__(self) -> int:
        return int(self.user.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ExampleSet(
                self.user[i],
                self.ad[i],
                self.ts[i],
                None if self.label is None else self.label[i],
                None if self.p_true is None else self.p_true[i],
            )
        return TrainingExample(
            user_id=int(self.user[i]),
            ad_id=int(self.ad[i]),
            timestamp=int(self.ts[i]),
            label=int(self.label[i]) if self.label is not None else -1,
        )

    def take(self, rows: np.ndarray) -> "ExampleSet":
        return ExampleSet(
            self.user[rows],
            self.ad[rows],
            self.ts[rows],
            None if self.label is None else self.label[rows],
            None if self.p_true is None else self.p_true[rows],
        )

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(len(self)):
                row = {
                    "user_id": int(self.user[i]),
                    "ad_id": int(self.ad[i]),
                    "timestamp": int(self.ts[i]),
                }
                if self.label is not None:
                    row["label"] = int(self.label[i])
                if self.p_true is not None:
                    row["p_true"] = float(self.p_true[i])
                fh.write(json.dumps(row, separators=(",", ":")))
                fh.write("\n")

    @staticmethod
    def from_jsonl(path) -> "ExampleSet":
        users, ads, tss, labels, ps = [], [], [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                    users.append(obj["user_id"])
                    ads.append(obj["ad_id"])
                    tss.append(obj["timestamp"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise EventLogParseError(i, f"bad request line: {exc}") from exc
                labels.append(obj.get("label"))
                ps.append(obj.get("p_true"))
        has_labels = all(v is not None for v in labels) and labels
        has_p = all(v is not None for v in ps) and ps
        return ExampleSet(
            np.array(users, dtype=np.int64),
            np.array(ads, dtype=np.int64),
            np.array(tss, dtype=np.int64),
            np.array(labels, dtype=np.int64) if has_labels else None,
            np.array(ps, dtype=np.float64) if has_p else None,
        )


def generate_requests(world: World, seed: int | None = None) -> ExampleSet:
    """Unlabeled (user, ad, t) triples, uniform over the request window."""
    config = world.config
    seed = (
        int(_stream(world.seed, _STREAM_REQUESTS).integers(2**31))
        if seed is None
        else seed
    )
    rng = np.random.default_rng(seed)
    horizon_sec = int(config.horizon_days * DAY_SECONDS)
    start = int(config.request_start_frac * horizon_sec)
    users = np.repeat(np.arange(world.n_users), config.requests_per_user)
    ts = rng.integers(start, horizon_sec + 1, size=users.shape[0])
    # per-user ascending times, keeping the user-major layout
    for u in range(world.n_users):
        lo = u * config.requests_per_user
        hi = lo + config.requests_per_user
        ts[lo:hi] = np.sort(ts[lo:hi])
    ads = rng.integers(config.ads, size=users.shape[0])
    return ExampleSet(users, ads, ts)


def _as_request_arrays(
    requests, n_users: int, n_ads: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(requests, ExampleSet):
        user, ad, ts = requests.user, requests.ad, requests.ts
    else:
        triples = [(int(u), int(a), int(t)) for u, a, t in requests]
        if not triples:
            raise ConfigError("requests must be non-empty")
        arr = np.array(triples, dtype=np.int64)
        user, ad, ts = arr[:, 0], arr[:, 1], arr[:, 2]
    if user.size == 0:
        raise ConfigError("requests must be non-empty")
    if user.min() < 0 or user.max() >= n_users:
        raise IdError(f"request references unknown user {int(user.max())}")
    if ad.min() < 0 or ad.max() >= n_ads:
        raise IdError(f"request references unknown ad {int(ad.max())}")
    return user, ad, ts


def history_scores(
    world: World,
    events: EventLog,
    user: np.ndarray,
    ad: np.ndarray,
    ts: np.ndarray,
    source: SourceType,
) -> np.ndarray:
    """Recency-weighted mean affinity of a user's past events from one
    source to each candidate ad; 0 for an empty history.

    Per-event affinity to the ad is the peaked similarity
    exp(kappa * (cos - 1)) of the item's topic vector to the ad's, so the
    score is dominated by the most related recent events rather than the
    bulk of the history.
    """
    table = events.table(source)
    if source is SourceType.AD_IMPRESSION:
        item_affinity = world.ad_affinity
    else:
        item_affinity = world.content_affinity
    config = world.config
    tau_sec = config.tau_days * DAY_SECONDS
    out = np.zeros(user.shape[0])
    items = table.cats[ITEM_ID_ATTRIBUTE[source]]
    for r in range(user.shape[0]):
        u = int(user[r])
        lo = int(table.user_offsets[u])
        hi = int(table.user_offsets[u + 1])
        cut = lo + int(np.searchsorted(table.ts[lo:hi], ts[r], side="left"))
        if cut == lo:
            continue
        cos = item_affinity[items[lo:cut]] @ world.ad_affinity[int(ad[r])]
        match = np.exp(config.affinity_kappa * (cos - 1.0))
        w = np.exp(-(ts[r] - table.ts[lo:cut]) / tau_sec)
        out[r] = float(np.dot(w, match) / w.sum())
    return out


def click_probabilities(
    world: World, events: EventLog, user: np.ndarray, ad: np.ndarray, ts: np.ndarray
) -> np.ndarray:
    """The generative P(click) for each request; the labels' ground truth."""
    c = world.config
    direct = np.einsum("rd,rd->r", world.user_intent[user], world.ad_affinity[ad])
    s_ad = history_scores(world, events, user, ad, ts, SourceType.AD_IMPRESSION)
    s_org = history_scores(
        world, events, user, ad, ts, SourceType.ORGANIC_IMPRESSION
    )
    logit = c.w0 + c.w1 * direct + c.w2 * s_ad + c.w3 * s_org
    return 1.0 / (1.0 + np.exp(-logit))


def simulate_labels(
    world: World, requests, events: EventLog, seed: int | None = None
) -> ExampleSet:
    """Bernoulli click labels for each request, from the planted model."""
    user, ad, ts = _as_request_arrays(requests, world.n_users, world.config.ads)
    seed = (
        int(_stream(world.seed, _STREAM_LABELS).integers(2**31))
        if seed is None
        else seed
    )
    rng = np.random.default_rng(seed)
    p = click_probabilities(world, events, user, ad, ts)
    labels = (rng.random(p.shape[0]) < p).astype(np.int64)
    return ExampleSet(user, ad, ts, labels, p)


# ----------------------------------------------------------------------
# World serialization (JSONL, same conventions as event logs)
# ----------------------------------------------------------------------


def save_world(world: World, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            json.dumps(
                {
                    "kind": "config",
                    "world_seed": world.seed,
                    "config": asdict(world.config),
                },
                separators=(",", ":"),
                sort_keys=True,
            )
        )
        fh.write("\n")
        for u in range(world.n_users):
            fh.write(
                json.dumps(
                    {
                        "kind": "user",
                        "user_id": u,
                        "intent": list(world.user_intent[u]),
                        "activity_rate": float(world.user_rate[u]),
                    },
                    separators=(",", ":"),
                )
            )
            fh.write("\n")
        for i in range(world.content_affinity.shape[0]):
            fh.write(
                json.dumps(
                    {
                        "kind": "content",
                        "item_id": i,
                        "topic_affinity": list(world.content_affinity[i]),
                        "content_embedding": list(world.content_embedding[i]),
                        "author_id": int(world.content_author[i]),
                        "media_type": int(world.content_media[i]),
                    },
                    separators=(",", ":"),
                )
            )
            fh.write("\n")
        for i in range(world.ad_affinity.shape[0]):
            fh.write(
                json.dumps(
                    {
                        "kind": "ad",
                        "item_id": i,
                        "topic_affinity": list(world.ad_affinity[i]),
                        "content_embedding": list(world.ad_embedding[i]),
                        "semantic_id": int(world.ad_semantic[i]),
                    },
                    separators=(",", ":"),
                )
            )
            fh.write("\n")
        fh.write(
            json.dumps(
                {
                    "kind": "codebook",
                    "centroids": [list(row) for row in world.codebook.centroids],
                },
                separators=(",", ":"),
            )
        )
        fh.write("\n")


def load_world(path) -> World:
    config = None
    seed = None
    users: list[dict] = []
    contents: list[dict] = []
    ads: list[dict] = []
    centroids = None
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                kind = obj.pop("kind")
            except (json.JSONDecodeError, KeyError) as exc:
                raise EventLogParseError(i, f"bad world line: {exc}") from exc
            if kind == "config":
                seed = obj["world_seed"]
                config = WorldConfig(**obj["config"])
            elif kind == "user":
                users.append(obj)
            elif kind == "content":
                contents.append(obj)
            elif kind == "ad":
                ads.append(obj)
            elif kind == "codebook":
                centroids = np.array(obj["centroids"], dtype=np.float64)
            else:
                raise EventLogParseError(i, f"unknown record kind {kind!r}")
    if config is None or centroids is None:
        raise EventLogParseError(0, "world file missing config or codebook")
    users.sort(key=lambda r: r["user_id"])
    contents.sort(key=lambda r: r["item_id"])
    ads.sort(key=lambda r: r["item_id"])
    return World(
        config=config,
        seed=seed,
        user_intent=np.array([r["intent"] for r in users], dtype=np.float64),
        user_rate=np.array([r["activity_rate"] for r in users], dtype=np.float64),
        content_affinity=np.array(
            [r["topic_affinity"] for r in contents], dtype=np.float64
        ),
        content_embedding=np.array(
            [r["content_embedding"] for r in contents], dtype=np.float64
        ),
        content_author=np.array([r["author_id"] for r in contents], dtype=np.int64),
        content_media=np.array([r["media_type"] for r in contents], dtype=np.int64),
        ad_affinity=np.array([r["topic_affinity"] for r in ads], dtype=np.float64),
        ad_embedding=np.array(
            [r["content_embedding"] for r in ads], dtype=np.float64
        ),
        ad_semantic=np.array([r["semantic_id"] for r in ads], dtype=np.int64),
        codebook=Codebook(centroids=centroids),
    )
