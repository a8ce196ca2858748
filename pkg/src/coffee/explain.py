"""Cross-attention explanations: which history events the model attends
to for a (user, ad) pair, and whether the attended events are actually
related to the candidate ad.

Relatedness uses the synthetic world's ground truth: the cosine between
the event item's topic affinity and the candidate ad's.  attention_lift
summarizes a whole eval set as (mean cosine of top-attended events) /
(mean cosine of uniformly sampled history events); values above 1 mean
the attention finds intent-relevant history.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdError
from .events import ITEM_ID_ATTRIBUTE, EventLog, SourceType
from .model import ModelConfig, forward_batch
from .numeric import ParamStore
from .trainer import SequenceProvider
from .world import ExampleSet, World


@dataclass(frozen=True)
class AttributedEvent:
    timestamp: int
    weight: float
    attributes: dict[str, int]
    item_id: int
    affinity_cosine: float


@dataclass(frozen=True)
class AttributionReport:
    user_id: int
    ad_id: int
    request_ts: int
    p_click: float
    per_source: dict[SourceType, tuple[AttributedEvent, ...]]

    def to_json(self) -> str:
        payload = {
            "user_id": self.user_id,
            "ad_id": self.ad_id,
            "request_ts": self.request_ts,
            "p_click": self.p_click,
            "sources": {
                source.value: [
                    {
                        "timestamp": e.timestamp,
                        "weight": e.weight,
                        "item_id": e.item_id,
                        "affinity_cosine": e.affinity_cosine,
                        "attributes": e.attributes,
                    }
                    for e in events
                ]
                for source, events in self.per_source.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [
            f"user {self.user_id}  ad {self.ad_id}  "
            f"p_click {self.p_click:.4f}",
        ]
        for source, events in self.per_source.items():
            lines.append(f"  {source.value}:")
            if not events:
                lines.append("    (no history in window)")
                continue
            lines.append(
                f"    {'weight':>8}  {'cos(ad)':>8}  {'item':>6}  {'age_h':>7}"
            )
            for e in events:
                age_h = (self.request_ts - e.timestamp) / 3600.0
                lines.append(
                    f"    {e.weight:8.4f}  {e.affinity_cosine:8.4f}  "
                    f"{e.item_id:6d}  {age_h:7.1f}"
                )
        return "\n".join(lines)


def _item_cosines(
    world: World, source: SourceType, items: np.ndarray, ad_id: int
) -> np.ndarray:
    affinity = (
        world.ad_affinity
        if source is SourceType.AD_IMPRESSION
        else world.content_affinity
    )
    return affinity[items] @ world.ad_affinity[ad_id]


def explain(
    params: ParamStore,
    model_config: ModelConfig,
    world: World,
    events: EventLog,
    user_id: int,
    ad_id: int,
    request_ts: int,
    top_m: int = 5,
    provider: SequenceProvider | None = None,
) -> AttributionReport:
    """Score one pair and return the top-m attended events per source,
    sorted by descending attention weight, with their ground-truth
    relatedness to the candidate ad."""
    if not (0 <= user_id < world.n_users):
        raise IdError(f"unknown user {user_id}")
    if not (0 <= ad_id < world.config.ads):
        raise IdError(f"unknown ad {ad_id}")
    provider = provider or SequenceProvider(world, events, model_config)
    examples = ExampleSet(
        user=np.array([user_id]),
        ad=np.array([ad_id]),
        ts=np.array([request_ts]),
    )
    batch = provider.pack(examples, np.arange(1))
    p, cache = forward_batch(batch, params, model_config)
    per_source: dict[SourceType, tuple[AttributedEvent, ...]] = {}
    for source in model_config.sources:
        packed = batch.sources[source]
        weights = cache["source_cache"][source.value]["weights"][0]
        n = int(packed.mask[0].sum())
        order = np.argsort(-weights[:n], kind="stable")[:top_m]
        table_items = packed.cats[ITEM_ID_ATTRIBUTE[source]][0]
        chosen = []
        for j in order:
            item = int(table_items[j])
            cos = float(
                _item_cosines(world, source, np.array([item]), ad_id)[0]
            )
            chosen.append(
                AttributedEvent(
                    timestamp=int(request_ts - packed.deltas[0, j]),
                    weight=float(weights[j]),
                    attributes={
                        name: int(col[0, j]) for name, col in packed.cats.items()
                    },
                    item_id=item,
                    affinity_cosine=cos,
                )
            )
        per_source[source] = tuple(chosen)
    return AttributionReport(
        user_id=user_id,
        ad_id=ad_id,
        request_ts=request_ts,
        p_click=float(p[0]),
        per_source=per_source,
    )


def attention_lift(
    params: ParamStore,
    model_config: ModelConfig,
    world: World,
    events: EventLog,
    pairs: ExampleSet,
    seed: int = 0,
    batch_size: int = 512,
) -> float:
    """(mean affinity-cosine of each pair's top-1 attended event) over
    (mean cosine of a uniformly drawn event from the same history),
    pooled across enabled sources.  Pairs with empty histories are
    skipped; requires at least 100 usable pairs."""
    if len(pairs) < 100:
        raise ConfigError("attention_lift needs at least 100 eval pairs")
    provider = SequenceProvider(world, events, model_config)
    rng = np.random.default_rng(seed)
    top_cos: list[float] = []
    rand_cos: list[float] = []
    for lo in range(0, len(pairs), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(pairs)))
        batch = provider.pack(pairs, rows)
        _, cache = forward_batch(batch, params, model_config)
        for source in model_config.sources:
            packed = batch.sources[source]
            weights = cache["source_cache"][source.value]["weights"]
            items = packed.cats[ITEM_ID_ATTRIBUTE[source]]
            counts = packed.mask.sum(axis=1)
            for b in range(rows.size):
                n = int(counts[b])
                if n == 0:
                    continue
                ad = int(pairs.ad[rows[b]])
                top = int(np.argmax(weights[b, :n]))
                pick = int(rng.integers(n))
                cos = _item_cosines(
                    world,
                    source,
                    np.array([items[b, top], items[b, pick]]),
                    ad,
                )
                top_cos.append(float(cos[0]))
                rand_cos.append(float(cos[1]))
    if not top_cos:
        raise ConfigError("no pair had any history; lift is undefined")
    return float(np.mean(top_cos) / np.mean(rand_cos))
