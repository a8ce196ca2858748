"""Deterministic minibatch training loop.

Splits examples user-disjointly (hash of user id, so no user's history
leaks across the split), trains with Adam on mean sigmoid-BCE loss, and
records (step, samples consumed, eval NE, eval ROC AUC) snapshots that
the scaling harness turns into curves.

Sequences are built causally: for a request at time t only events with
timestamp < t and within the aggregation window enter the packed batch.
The provider counts any violation of that rule; it must stay at zero.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as model_mod
from .configio import canonical_digest
from .enrichment import KnnIndex, neighbor_mean
from .errors import ConfigError, PoisonedGradientError, SplitError
from .events import ITEM_ID_ATTRIBUTE, EventLog, SourceType
from .metrics import EvalBatch, normalized_entropy, roc_auc
from .model import ModelConfig, PackedBatch, PackedSource
from .numeric import ParamStore, adam_step
from .world import DAY_SECONDS, ExampleSet, World


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 3
    max_steps: int | None = None
    split_fraction: float = 0.8
    seed: int = 7
    snapshots: int = 10
    eval_max: int = 5000

    def __post_init__(self) -> None:
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0 or (self.max_steps is not None and self.max_steps < 0):
            raise ConfigError("epochs/max_steps must be non-negative")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "epochs": self.epochs,
            "max_steps": self.max_steps,
            "split_fraction": self.split_fraction,
            "seed": self.seed,
            "snapshots": self.snapshots,
            "eval_max": self.eval_max,
        }


@dataclass(frozen=True)
class Snapshot:
    step: int
    samples: int
    ne: float
    auc: float


@dataclass(frozen=True)
class RunRecord:
    config_digest: str
    eval_digest: str
    snapshots: tuple[Snapshot, ...]
    wall_time_s: float

    def __post_init__(self) -> None:
        samples = [s.samples for s in self.snapshots]
        if any(b <= a for a, b in zip(samples, samples[1:])):
            raise ValueError("snapshot samples must be strictly increasing")

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def _user_bucket(seed: int, user_id: int) -> float:
    digest = hashlib.blake2b(
        f"{seed}:{user_id}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2**64


def split_examples(
    examples: ExampleSet, fraction: float, seed: int
) -> tuple[ExampleSet, ExampleSet]:
    """User-disjoint split: a user's examples land entirely on one side."""
    if not (0.0 < fraction < 1.0):
        raise ConfigError("fraction must lie in (0, 1)")
    unique_users = np.unique(examples.user)
    buckets = {int(u): _user_bucket(seed, int(u)) for u in unique_users}
    in_train = np.array([buckets[int(u)] < fraction for u in examples.user])
    train = examples.take(np.where(in_train)[0])
    evals = examples.take(np.where(~in_train)[0])
    if len(train) == 0 or len(evals) == 0:
        raise SplitError(
            f"split left an empty side (train={len(train)}, eval={len(evals)})"
        )
    return train, evals


def enriched_item_table(world: World, source: SourceType, k: int) -> np.ndarray:
    """Per-catalog-item k-NN mean embedding; the per-event enrichment
    feature depends only on the event's item, so it is precomputed once."""
    if source is SourceType.AD_IMPRESSION:
        emb = world.ad_embedding
    else:
        emb = world.content_embedding
    index = KnnIndex(ids=np.arange(emb.shape[0]), embeddings=emb)
    return np.stack(
        [neighbor_mean(index, emb[i], k) for i in range(emb.shape[0])]
    )


class SequenceProvider:
    """Packs padded model batches straight from the columnar event log."""

    def __init__(self, world: World, events: EventLog, config: ModelConfig):
        self.world = world
        self.events = events
        self.config = config
        self.window_sec = int(config.window_days * DAY_SECONDS)
        self.causality_violations = 0
        self._keys: dict[SourceType, np.ndarray] = {}
        self._enrich: dict[SourceType, np.ndarray] = {}
        for source in config.sources:
            table = events.table(source)
            # composite (user, ts) key; ts fits well under 2**40
            self._keys[source] = table.user * (1 << 40) + table.ts
            if config.enrichment:
                self._enrich[source] = enriched_item_table(
                    world, source, world.config.knn_k
                )

    def pack(self, examples: ExampleSet, rows: np.ndarray) -> PackedBatch:
        batch_size = rows.size
        req_ts = examples.ts[rows]
        req_user = examples.user[rows]
        sources: dict[SourceType, PackedSource] = {}
        for source in self.config.sources:
            table = self.events.table(source)
            keys = self._keys[source]
            r_cap = self.config.r_for(source)
            t_lo = req_ts - self.window_sec
            t_hi = req_ts - 1  # strictly before the request
            lo = np.searchsorted(keys, req_user * (1 << 40) + t_lo, side="left")
            hi = np.searchsorted(keys, req_user * (1 << 40) + t_hi, side="right")
            start = np.maximum(lo, hi - r_cap)
            ns = hi - start
            length = int(ns.max()) if ns.size else 0
            defs = model_mod.attribute_layout(self.config, source)
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
            total = int(ns.sum())
            if total:
                row_id = np.repeat(np.arange(batch_size), ns)
                offsets = np.concatenate(([0], np.cumsum(ns)))[:-1]
                within = np.arange(total) - np.repeat(offsets, ns)
                # hi-1 downward: most recent first, ties by ascending
                # insertion index thanks to the table's (ts asc, idx desc) sort
                src_pos = np.repeat(hi - 1, ns) - within
                mask[row_id, within] = True
                ts_sel = table.ts[src_pos]
                self.causality_violations += int(
                    np.sum(ts_sel >= req_ts[row_id])
                )
                deltas[row_id, within] = req_ts[row_id] - ts_sel
                for name, col in table.cats.items():
                    cats[name][row_id, within] = col[src_pos]
                for name, col in table.denses.items():
                    denses[name][row_id, within] = col[src_pos]
                if self.config.enrichment:
                    items = table.cats[ITEM_ID_ATTRIBUTE[source]][src_pos]
                    denses[model_mod.ENRICHED_ATTRIBUTE][row_id, within] = (
                        self._enrich[source][items]
                    )
            sources[source] = PackedSource(cats, denses, deltas, mask)
        return PackedBatch(
            sources=sources,
            ad_ids=examples.ad[rows],
            size=batch_size,
            ad_content=self.world.ad_embedding[examples.ad[rows]],
        )


def evaluate(
    params: ParamStore,
    model_config: ModelConfig,
    world: World,
    events: EventLog,
    examples: ExampleSet,
    batch_size: int = 1024,
    provider: SequenceProvider | None = None,
) -> tuple[float, float]:
    """(NE, ROC AUC) over the examples, scored causally."""
    provider = provider or SequenceProvider(world, events, model_config)
    preds = predict(params, model_config, examples, provider, batch_size)
    batch = EvalBatch(predictions=preds, labels=examples.label.astype(np.float64))
    return normalized_entropy(batch), roc_auc(batch)


def predict(
    params: ParamStore,
    model_config: ModelConfig,
    examples: ExampleSet,
    provider: SequenceProvider,
    batch_size: int = 1024,
) -> np.ndarray:
    preds = np.empty(len(examples))
    for lo in range(0, len(examples), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(examples)))
        packed = provider.pack(examples, rows)
        p, _ = model_mod.forward_batch(packed, params, model_config)
        preds[rows] = p
    return preds


def _eval_subset(evals: ExampleSet, cap: int, seed: int) -> ExampleSet:
    if len(evals) <= cap:
        return evals
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    rows = np.sort(rng.choice(len(evals), size=cap, replace=False))
    return evals.take(rows)


def _digest_examples(examples: ExampleSet) -> str:
    h = hashlib.sha256()
    for arr in (examples.user, examples.ad, examples.ts, examples.label):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def train(
    world: World,
    events: EventLog,
    examples: ExampleSet,
    model_config: ModelConfig,
    train_config: TrainConfig,
    progress: Callable[[dict], None] | None = None,
) -> tuple[ParamStore, RunRecord]:
    """Train from scratch; fully deterministic given the seeds.

    Snapshots are taken before the first step and then after every
    (total samples / snapshots) consumed, always including the end.
    """
    t0 = time.perf_counter()
    train_ex, eval_ex = split_examples(
        examples, train_config.split_fraction, train_config.seed
    )
    eval_sub = _eval_subset(eval_ex, train_config.eval_max, train_config.seed)
    params = model_mod.init_params(model_config, seed=train_config.seed)
    provider = SequenceProvider(world, events, model_config)

    n_train = len(train_ex)
    steps_per_epoch = int(np.ceil(n_train / train_config.batch_size))
    total_steps = train_config.epochs * steps_per_epoch
    if train_config.max_steps is not None:
        total_steps = min(total_steps, train_config.max_steps)
    total_samples = min(
        train_config.epochs * n_train, total_steps * train_config.batch_size
    )
    stride = max(1, int(np.ceil(total_samples / max(train_config.snapshots, 1))))

    snapshots: list[Snapshot] = []

    def take_snapshot(step: int, consumed: int) -> None:
        ne, auc = evaluate(
            params, model_config, world, events, eval_sub, provider=provider
        )
        snapshots.append(Snapshot(step=step, samples=consumed, ne=ne, auc=auc))
        if progress is not None:
            progress(
                {"step": step, "samples": consumed, "eval_ne": ne, "eval_auc": auc}
            )

    take_snapshot(0, 0)
    order_rng = np.random.default_rng(
        np.random.SeedSequence(train_config.seed, spawn_key=(13,))
    )
    consumed = 0
    step = 0
    next_snapshot = stride
    done = total_steps == 0
    for _ in range(train_config.epochs):
        if done:
            break
        perm = order_rng.permutation(n_train)
        for lo in range(0, n_train, train_config.batch_size):
            rows = perm[lo : lo + train_config.batch_size]
            packed = provider.pack(train_ex, rows)
            _, cache = model_mod.forward_batch(packed, params, model_config)
            model_mod.backward_batch(
                packed, train_ex.label[rows], cache, params, model_config
            )
            try:
                adam_step(
                    params,
                    lr=train_config.learning_rate,
                    beta1=train_config.beta1,
                    beta2=train_config.beta2,
                    eps=train_config.eps,
                )
            except PoisonedGradientError as exc:
                raise PoisonedGradientError(
                    exc.name, f"aborted at step {step + 1}: {exc}"
                ) from exc
            step += 1
            consumed += rows.size
            if consumed >= next_snapshot or step == total_steps:
                take_snapshot(step, consumed)
                next_snapshot += stride
            if step >= total_steps:
                done = True
                break

    if provider.causality_violations:
        raise AssertionError(
            f"{provider.causality_violations} future events leaked into histories"
        )
    record = RunRecord(
        config_digest=canonical_digest(
            {
                "world": {"seed": world.seed, **_world_config_dict(world)},
                "model": model_config.to_dict(),
                "train": train_config.to_dict(),
            }
        ),
        eval_digest=_digest_examples(eval_sub),
        snapshots=tuple(snapshots),
        wall_time_s=time.perf_counter() - t0,
    )
    return params, record


def _world_config_dict(world: World) -> dict:
    import dataclasses

    return dataclasses.asdict(world.config)


def progress_printer(stream=None) -> Callable[[dict], None]:
    """One JSON object per snapshot to stdout (or the given stream)."""
    import sys

    out = stream or sys.stdout

    def emit(payload: dict) -> None:
        out.write(json.dumps(payload, sort_keys=True) + "\n")
        out.flush()

    return emit
