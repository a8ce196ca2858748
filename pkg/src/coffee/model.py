"""Sequence-learning click model.

Per event: each categorical attribute is embedded (d_attr each) and each
dense attribute passes through its own linear map to d_attr; the K
attribute embeddings concatenate and are linearly compressed to one
event embedding (d_event), which is then concatenated with a sinusoidal
recency encoding and linearly projected back to d_event.  Per enabled
source, single-query cross-attention (query = candidate ad embedding)
pools the event representations into a context vector; contexts plus the
ad embedding feed a tanh MLP head that emits P(click).

Everything runs batched over examples with padding masks; the public
single-example ``forward``/``backward_example`` wrap a batch of one.
The backward pass is composed by hand from the numeric kernels and is
finite-difference checked in the tests.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numeric
from .errors import CausalityError, ConfigError, OutOfRangeError
from .events import (
    SOURCE_ORDER,
    CatalogSizes,
    Event,
    EventSequence,
    SourceType,
    build_schemas,
)
from .numeric import ParamStore

HOUR_SECONDS = 3600.0
NINETY_DAYS_SECONDS = 90.0 * 86_400.0
MAX_ONLINE_LEN = 10_000
ENRICHED_ATTRIBUTE = "knn_embedding"

# Output probabilities are clipped into the open interval.
P_CLIP = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and feature knobs; saved as the checkpoint sidecar."""

    catalog: CatalogSizes
    sources: tuple[SourceType, ...] = SOURCE_ORDER
    max_len: tuple[tuple[SourceType, int], ...] = 100
    d_attr: int = 8
    d_event: int = 16
    d_time: int = 8
    d_key: int = 16
    mlp_hidden: tuple[int, ...] = (32, 16)
    enrichment: bool = False
    window_days: float = 14.0

    def __post_init__(self) -> None:
        sources = tuple(s for s in SOURCE_ORDER if s in set(self.sources))
        object.__setattr__(self, "sources", sources)
        if isinstance(self.max_len, int):
            lens = tuple((s, self.max_len) for s in SOURCE_ORDER)
        elif isinstance(self.max_len, Mapping):
            lens = tuple((s, int(self.max_len.get(s, 100))) for s in SOURCE_ORDER)
        else:
            given = dict(self.max_len)
            lens = tuple((s, int(given.get(s, 100))) for s in SOURCE_ORDER)
        object.__setattr__(self, "max_len", lens)
        for s, r in lens:
            if not (1 <= r <= MAX_ONLINE_LEN):
                raise ConfigError(f"max_len[{s.value}]={r} outside [1, {MAX_ONLINE_LEN}]")
        for name in ("d_attr", "d_event", "d_time", "d_key"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_time % 2:
            raise ConfigError("d_time must be even (sin/cos pairs)")
        if any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("mlp hidden widths must be >= 1")
        if self.window_days <= 0:
            raise ConfigError("window_days must be positive")

    def r_for(self, source: SourceType) -> int:
        return dict(self.max_len)[source]

    def to_dict(self) -> dict:
        return {
            "catalog": dict(
                (f.name, getattr(self.catalog, f.name))
                for f in dataclasses.fields(self.catalog)
            ),
            "sources": [s.value for s in self.sources],
            "max_len": {s.value: r for s, r in self.max_len},
            "d_attr": self.d_attr,
            "d_event": self.d_event,
            "d_time": self.d_time,
            "d_key": self.d_key,
            "mlp_hidden": list(self.mlp_hidden),
            "enrichment": self.enrichment,
            "window_days": self.window_days,
        }

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        return ModelConfig(
            catalog=CatalogSizes(**data["catalog"]),
            sources=tuple(SourceType(v) for v in data["sources"]),
            max_len={SourceType(k): v for k, v in data["max_len"].items()},
            d_attr=data["d_attr"],
            d_event=data["d_event"],
            d_time=data["d_time"],
            d_key=data["d_key"],
            mlp_hidden=tuple(data["mlp_hidden"]),
            enrichment=data["enrichment"],
            window_days=data["window_days"],
        )


@dataclass(frozen=True)
class AttrDef:
    name: str
    kind: str  # "categorical" | "dense"
    size: int  # cardinality or dimension


def attribute_layout(config: ModelConfig, source: SourceType) -> tuple[AttrDef, ...]:
    """Ordered attribute definitions the model consumes for one source."""
    schema = build_schemas(config.catalog)[source]
    defs = [
        AttrDef(s.name, s.kind, s.cardinality if s.kind == "categorical" else s.dim)
        for s in schema.value_specs
    ]
    if config.enrichment:
        defs.append(AttrDef(ENRICHED_ATTRIBUTE, "dense", config.catalog.embedding_dim))
    return tuple(defs)


# ----------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters for every source (enabled or not), the candidate-ad
    table, and a head sized for the enabled sources."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    store = ParamStore()
    for source in SOURCE_ORDER:
        tag = source.value
        defs = attribute_layout(config, source)
        for d in defs:
            if d.kind == "categorical":
                store.add(
                    f"{tag}/emb/{d.name}",
                    numeric.embedding_init(rng, d.size, config.d_attr),
                )
            else:
                store.add(
                    f"{tag}/dense/{d.name}/w",
                    numeric.glorot_uniform(rng, d.size, config.d_attr),
                )
                store.add(f"{tag}/dense/{d.name}/b", np.zeros((1, config.d_attr)))
        k_width = len(defs) * config.d_attr
        store.add(
            f"{tag}/compress/w", numeric.glorot_uniform(rng, k_width, config.d_event)
        )
        store.add(f"{tag}/compress/b", np.zeros((1, config.d_event)))
        store.add(
            f"{tag}/time/w",
            numeric.glorot_uniform(
                rng, config.d_event + config.d_time, config.d_event
            ),
        )
        store.add(f"{tag}/time/b", np.zeros((1, config.d_event)))
        store.add(
            f"{tag}/attn/wq", numeric.glorot_uniform(rng, config.d_event, config.d_key)
        )
        store.add(
            f"{tag}/attn/wk", numeric.glorot_uniform(rng, config.d_event, config.d_key)
        )
        store.add(
            f"{tag}/attn/wv",
            numeric.glorot_uniform(rng, config.d_event, config.d_event),
        )
        store.add(f"{tag}/null", np.zeros((1, config.d_event)))
    store.add(
        "ad/emb", numeric.embedding_init(rng, config.catalog.ads, config.d_event)
    )
    store.add(
        "ad/content/w",
        numeric.glorot_uniform(rng, config.catalog.embedding_dim, config.d_event),
    )
    width = (len(config.sources) + 1) * config.d_event
    for i, hidden in enumerate(config.mlp_hidden):
        store.add(f"head/{i}/w", numeric.glorot_uniform(rng, width, hidden))
        store.add(f"head/{i}/b", np.zeros((1, hidden)))
        width = hidden
    store.add("head/out/w", numeric.glorot_uniform(rng, width, 1))
    store.add("head/out/b", np.zeros((1, 1)))
    return store


# ----------------------------------------------------------------------
# Timestamp encoding
# ----------------------------------------------------------------------


def encode_deltas(deltas: np.ndarray, d_time: int) -> np.ndarray:
    """Sinusoidal recency features over geometrically spaced periods from
    one hour to ninety days; interleaved (sin, cos) per period."""
    periods = np.geomspace(HOUR_SECONDS, NINETY_DAYS_SECONDS, d_time // 2)
    phase = np.asarray(deltas, dtype=np.float64)[..., None] / periods
    out = np.empty(phase.shape[:-1] + (d_time,), dtype=np.float64)
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def encode_timestamp(event_ts: int, request_ts: int, d_time: int = 8) -> np.ndarray:
    """Recency encoding of one event; the event must not postdate the request."""
    if event_ts > request_ts:
        raise CausalityError(
            f"event at {event_ts} is later than request at {request_ts}"
        )
    return encode_deltas(np.array([request_ts - event_ts], dtype=np.float64), d_time)[0]


# ----------------------------------------------------------------------
# Packed batches
# ----------------------------------------------------------------------


@dataclass
class PackedSource:
    """Padded per-source arrays for a batch: ids/vectors, recency and mask."""

    cats: dict[str, np.ndarray]      # each (B, L) int64
    denses: dict[str, np.ndarray]    # each (B, L, dim) float64
    deltas: np.ndarray               # (B, L) float64, >= 0 where mask
    mask: np.ndarray                 # (B, L) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class PackedBatch:
    sources: dict[SourceType, PackedSource]
    ad_ids: np.ndarray               # (B,)
    size: int
    # candidate-ad content embeddings, (B, embedding_dim); zeros when the
    # caller has no catalog at hand
    ad_content: np.ndarray | None = None


def empty_packed(
    config: ModelConfig, source: SourceType, batch_size: int
) -> PackedSource:
    """A zero-length packed source with the right attribute columns."""
    defs = attribute_layout(config, source)
    return PackedSource(
        cats={
            d.name: np.zeros((batch_size, 0), dtype=np.int64)
            for d in defs
            if d.kind == "categorical"
        },
        denses={
            d.name: np.zeros((batch_size, 0, d.size))
            for d in defs
            if d.kind == "dense"
        },
        deltas=np.zeros((batch_size, 0)),
        mask=np.zeros((batch_size, 0), dtype=bool),
    )


def pack_examples(
    per_example_sequences: list[Mapping[SourceType, EventSequence]],
    ad_ids: list[int],
    request_ts: list[int],
    config: ModelConfig,
    ad_content: np.ndarray | None = None,
) -> PackedBatch:
    """Pack Event-object sequences into padded arrays (the object path;
    the trainer has a columnar fast path that produces the same layout)."""
    batch_size = len(per_example_sequences)
    sources: dict[SourceType, PackedSource] = {}
    for source in config.sources:
        defs = attribute_layout(config, source)
        r_cap = config.r_for(source)
        seqs = []
        for i, mapping in enumerate(per_example_sequences):
            seq = mapping.get(source)
            if seq is not None and len(seq) > r_cap:
                raise ConfigError(
                    f"sequence of {len(seq)} events exceeds max_len {r_cap}"
                )
            seqs.append(seq)
        length = max((len(s) for s in seqs if s is not None), default=0)
        cats = {
            d.name: np.zeros((batch_size, length), dtype=np.int64)
            for d in defs
            if d.kind == "categorical"
        }
        denses = {
            d.name: np.zeros((batch_size, length, d.size))
            for d in defs
            if d.kind == "dense"
        }
        deltas = np.zeros((batch_size, length))
        mask = np.zeros((batch_size, length), dtype=bool)
        for i, seq in enumerate(seqs):
            if seq is None:
                continue
            for j, event in enumerate(seq.events):
                if event.timestamp > request_ts[i]:
                    raise CausalityError(
                        f"event at {event.timestamp} after request {request_ts[i]}"
                    )
                if len(event.attributes) != len(defs):
                    raise ConfigError(
                        f"{source.value} event has {len(event.attributes)} "
                        f"attributes; this config expects {len(defs)}"
                    )
                mask[i, j] = True
                deltas[i, j] = request_ts[i] - event.timestamp
                for d, attr in zip(defs, event.attributes):
                    if d.kind == "categorical":
                        cats[d.name][i, j] = attr.cat
                    else:
                        denses[d.name][i, j] = attr.dense
        sources[source] = PackedSource(cats, denses, deltas, mask)
    ids = np.asarray(ad_ids, dtype=np.int64)
    if ad_content is not None:
        ad_content = np.asarray(ad_content, dtype=np.float64)
    return PackedBatch(
        sources=sources, ad_ids=ids, size=batch_size, ad_content=ad_content
    )


# ----------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------


def _encode_source(
    packed: PackedSource,
    params: ParamStore,
    config: ModelConfig,
    source: SourceType,
    cache: dict,
) -> np.ndarray:
    """Event representations H (B, L, d_event) for one source."""
    tag = source.value
    defs = attribute_layout(config, source)
    batch_size, length = packed.shape
    parts = []
    for d in defs:
        if d.kind == "categorical":
            table = params[f"{tag}/emb/{d.name}"]
            ids = packed.cats[d.name]
            parts.append(numeric.embedding_lookup(table, ids.reshape(-1)))
        else:
            x = packed.denses[d.name].reshape(batch_size * length, d.size)
            parts.append(
                numeric.linear_forward(
                    x, params[f"{tag}/dense/{d.name}/w"], params[f"{tag}/dense/{d.name}/b"]
                )
            )
    concat = (
        np.concatenate(parts, axis=1)
        if parts
        else np.zeros((batch_size * length, 0))
    )
    compressed = numeric.linear_forward(
        concat, params[f"{tag}/compress/w"], params[f"{tag}/compress/b"]
    )
    time_enc = encode_deltas(packed.deltas, config.d_time).reshape(
        batch_size * length, config.d_time
    )
    joined = np.concatenate([compressed, time_enc], axis=1)
    final = numeric.linear_forward(
        joined, params[f"{tag}/time/w"], params[f"{tag}/time/b"]
    )
    cache[tag] = {
        "defs": defs,
        "concat": concat,
        "compressed": compressed,
        "time_enc": time_enc,
        "joined": joined,
    }
    return final.reshape(batch_size, length, config.d_event)


def forward_batch(
    batch: PackedBatch, params: ParamStore, config: ModelConfig
) -> tuple[np.ndarray, dict]:
    """Click probabilities (B,) plus the cache the backward pass needs."""
    if batch.ad_ids.size and int(batch.ad_ids.max()) >= config.catalog.ads:
        raise OutOfRangeError(
            f"ad id {int(batch.ad_ids.max())} outside vocabulary of "
            f"{config.catalog.ads}"
        )
    for source in batch.sources:
        if source not in config.sources:
            warnings.warn(
                f"source {source.value} is disabled in this config; ignoring it"
            )
    cache: dict = {"source_cache": {}}
    ad_content = batch.ad_content
    if ad_content is None:
        ad_content = np.zeros((batch.size, config.catalog.embedding_dim))
    ad_emb = (
        numeric.embedding_lookup(params["ad/emb"], batch.ad_ids)
        + ad_content @ params["ad/content/w"]
    )
    cache["ad_content"] = ad_content
    contexts = []
    for source in config.sources:
        tag = source.value
        packed = batch.sources.get(source)
        if packed is None:
            packed = empty_packed(config, source, batch.size)
        h = _encode_source(packed, params, config, source, cache["source_cache"])
        q = ad_emb @ params[f"{tag}/attn/wq"]
        flat = h.reshape(-1, config.d_event)
        keys = (flat @ params[f"{tag}/attn/wk"]).reshape(
            batch.size, -1, config.d_key
        )
        vals = (flat @ params[f"{tag}/attn/wv"]).reshape(
            batch.size, -1, config.d_event
        )
        ctx, weights = numeric.attention_forward(q, keys, vals, packed.mask)
        empty = ~packed.mask.any(axis=1)
        if empty.any():
            ctx = np.where(empty[:, None], params[f"{tag}/null"], ctx)
        contexts.append(ctx)
        cache["source_cache"][tag].update(
            packed=packed,
            h=h,
            q=q,
            keys=keys,
            vals=vals,
            weights=weights,
            ctx=ctx,
            empty=empty,
        )
    mlp_in = np.concatenate(contexts + [ad_emb], axis=1)
    hs = [mlp_in]
    for i in range(len(config.mlp_hidden)):
        z = numeric.linear_forward(hs[-1], params[f"head/{i}/w"], params[f"head/{i}/b"])
        hs.append(np.tanh(z))
    logit = numeric.linear_forward(hs[-1], params["head/out/w"], params["head/out/b"])
    logit = logit.reshape(-1)
    p = numeric.sigmoid(logit)
    cache.update(ad_emb=ad_emb, mlp_in=mlp_in, hs=hs, logit=logit)
    return np.clip(p, P_CLIP, 1.0 - P_CLIP), cache


def backward_batch(
    batch: PackedBatch,
    labels: np.ndarray,
    cache: dict,
    params: ParamStore,
    config: ModelConfig,
) -> float:
    """Accumulate gradients of the mean sigmoid-BCE loss into params.grads;
    returns the mean loss."""
    y = np.asarray(labels, dtype=np.float64)
    logit = cache["logit"]
    _, losses = numeric.sigmoid_bce(logit, y)
    loss = float(np.mean(losses))
    d_logit = (numeric.sigmoid_bce_backward(logit, y) / y.shape[0]).reshape(-1, 1)

    hs = cache["hs"]
    upstream = d_logit
    d_out_x, dw, db = numeric.linear_backward(hs[-1], params["head/out/w"], upstream)
    params.add_grad("head/out/w", dw)
    params.add_grad("head/out/b", db)
    upstream = d_out_x
    for i in reversed(range(len(config.mlp_hidden))):
        upstream = upstream * (1.0 - hs[i + 1] ** 2)  # through tanh
        dx, dw, db = numeric.linear_backward(hs[i], params[f"head/{i}/w"], upstream)
        params.add_grad(f"head/{i}/w", dw)
        params.add_grad(f"head/{i}/b", db)
        upstream = dx

    d_ad_emb = np.zeros_like(cache["ad_emb"])
    offset = 0
    for source in config.sources:
        tag = source.value
        sc = cache["source_cache"][tag]
        d_ctx = upstream[:, offset : offset + config.d_event]
        offset += config.d_event
        empty = sc["empty"]
        if empty.any():
            params.add_grad(f"{tag}/null", d_ctx[empty].sum(axis=0, keepdims=True))
            d_ctx = np.where(empty[:, None], 0.0, d_ctx)
        dq, dkeys, dvals = numeric.attention_backward(
            sc["q"], sc["keys"], sc["vals"], sc["weights"], d_ctx
        )
        params.add_grad(f"{tag}/attn/wq", cache["ad_emb"].T @ dq)
        d_ad_emb += dq @ params[f"{tag}/attn/wq"].T
        flat_h = sc["h"].reshape(-1, config.d_event)
        dk2 = dkeys.reshape(-1, config.d_key)
        dv2 = dvals.reshape(-1, config.d_event)
        params.add_grad(f"{tag}/attn/wk", flat_h.T @ dk2)
        params.add_grad(f"{tag}/attn/wv", flat_h.T @ dv2)
        d_h = dk2 @ params[f"{tag}/attn/wk"].T + dv2 @ params[f"{tag}/attn/wv"].T

        d_joined, dw, db = numeric.linear_backward(
            sc["joined"], params[f"{tag}/time/w"], d_h
        )
        params.add_grad(f"{tag}/time/w", dw)
        params.add_grad(f"{tag}/time/b", db)
        d_compressed = d_joined[:, : config.d_event]
        d_concat, dw, db = numeric.linear_backward(
            sc["concat"], params[f"{tag}/compress/w"], d_compressed
        )
        params.add_grad(f"{tag}/compress/w", dw)
        params.add_grad(f"{tag}/compress/b", db)

        packed: PackedSource = sc["packed"]
        col = 0
        for d in sc["defs"]:
            d_part = d_concat[:, col : col + config.d_attr]
            col += config.d_attr
            if d.kind == "categorical":
                ids = packed.cats[d.name].reshape(-1)
                table = params[f"{tag}/emb/{d.name}"]
                params.add_grad(
                    f"{tag}/emb/{d.name}",
                    numeric.embedding_backward(table, ids, d_part),
                )
            else:
                x = packed.denses[d.name].reshape(-1, d.size)
                _, dw, db = numeric.linear_backward(
                    x, params[f"{tag}/dense/{d.name}/w"], d_part
                )
                params.add_grad(f"{tag}/dense/{d.name}/w", dw)
                params.add_grad(f"{tag}/dense/{d.name}/b", db)

    d_ad_emb += upstream[:, offset : offset + config.d_event]
    params.add_grad(
        "ad/emb",
        numeric.embedding_backward(params["ad/emb"], batch.ad_ids, d_ad_emb),
    )
    params.add_grad("ad/content/w", cache["ad_content"].T @ d_ad_emb)
    return loss


# ----------------------------------------------------------------------
# Single-example surfaces
# ----------------------------------------------------------------------


@dataclass
class ForwardResult:
    p_click: float
    attention: dict[SourceType, np.ndarray]  # weights over the actual events


def event_module_forward(
    event: Event, params: ParamStore, config: ModelConfig, request_ts: int
) -> np.ndarray:
    """Representation of one event (d_event,)."""
    if event.timestamp > request_ts:
        raise CausalityError(
            f"event at {event.timestamp} after request {request_ts}"
        )
    defs = attribute_layout(config, event.source)
    packed = PackedSource(
        cats={
            d.name: np.array([[event.attribute(d.name).cat]], dtype=np.int64)
            for d in defs
            if d.kind == "categorical"
        },
        denses={
            d.name: np.array([[event.attribute(d.name).dense]])
            for d in defs
            if d.kind == "dense"
        },
        deltas=np.array([[request_ts - event.timestamp]], dtype=np.float64),
        mask=np.ones((1, 1), dtype=bool),
    )
    h = _encode_source(packed, params, config, event.source, {})
    return h[0, 0]


def forward(
    sequences: Mapping[SourceType, EventSequence],
    ad_id: int,
    params: ParamStore,
    config: ModelConfig,
    request_ts: int,
    ad_content: np.ndarray | None = None,
) -> ForwardResult:
    """Score one (user history, candidate ad) pair.

    Disabled sources present in ``sequences`` are ignored with a warning;
    an entirely empty history is valid and degrades to the ad-only prior.
    ``ad_content`` is the candidate's catalog content embedding; without
    it the candidate is represented by its id embedding alone.
    """
    enabled = {}
    for source, seq in sequences.items():
        if source not in config.sources:
            warnings.warn(
                f"source {source.value} is disabled in this config; ignoring it"
            )
            continue
        enabled[source] = seq
    content = None if ad_content is None else np.asarray(ad_content)[None, :]
    batch = pack_examples([enabled], [ad_id], [request_ts], config, content)
    p, cache = forward_batch(batch, params, config)
    attention = {}
    for source in config.sources:
        sc = cache["source_cache"][source.value]
        n = int(sc["packed"].mask[0].sum())
        attention[source] = sc["weights"][0, :n].copy()
    return ForwardResult(p_click=float(p[0]), attention=attention)


def backward_example(
    sequences: Mapping[SourceType, EventSequence],
    ad_id: int,
    label: int,
    params: ParamStore,
    config: ModelConfig,
    request_ts: int,
) -> dict[str, np.ndarray]:
    """Gradients of the single-example loss for every parameter.

    Runs a batch of one and returns copies; params.grads is left zeroed.
    """
    enabled = {s: q for s, q in sequences.items() if s in config.sources}
    batch = pack_examples([enabled], [ad_id], [request_ts], config)
    params.zero_grads()
    _, cache = forward_batch(batch, params, config)
    backward_batch(batch, np.array([label]), cache, params, config)
    grads = {name: g.copy() for name, g in params.grads.items()}
    params.zero_grads()
    return grads
