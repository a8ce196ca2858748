"""Engagement-event schemas and assembly of raw logs into model-ready sequences.

Three event sources are supported (organic impressions, ad impressions,
video views), each with a fixed attribute layout.  An event carries at most
``MAX_ATTRIBUTES`` typed attribute values plus a mandatory timestamp; raw
per-user logs are window-filtered, ordered most-recent-first and truncated
to a maximum length before the model consumes them.

The timestamp appears in every source schema but is stored once, as the
event's own ``timestamp`` field; the ``attributes`` list holds only the
categorical/dense values, in schema order.  The on-disk format is JSON
lines (UTF-8, LF), one event per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    EventLogParseError,
    InvalidWindowError,
    SchemaViolationError,
)

MAX_ATTRIBUTES = 10

# Fixed bucket vocabularies shared by every world.
DWELL_BUCKETS = 8
MEDIA_TYPES = 3
POSITION_BUCKETS = 16
CONTENT_TYPES = 2

# Dwell-time buckets: log-spaced over [250 ms, 1 h].
DWELL_EDGES_SECONDS = np.geomspace(0.25, 3600.0, DWELL_BUCKETS + 1)


class SourceType(str, Enum):
    ORGANIC_IMPRESSION = "organic_impression"
    AD_IMPRESSION = "ad_impression"
    VIDEO_VIEW = "video_view"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


SOURCE_ORDER = (
    SourceType.ORGANIC_IMPRESSION,
    SourceType.AD_IMPRESSION,
    SourceType.VIDEO_VIEW,
)


@dataclass(frozen=True)
class AttributeValue:
    """One typed attribute: exactly one of ``cat`` or ``dense`` is set."""

    name: str
    cat: int | None = None
    dense: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if (self.cat is None) == (self.dense is None):
            raise ValueError(
                f"attribute {self.name!r} must set exactly one of cat/dense"
            )
        if self.dense is not None and not isinstance(self.dense, tuple):
            object.__setattr__(self, "dense", tuple(float(v) for v in self.dense))

    @property
    def is_categorical(self) -> bool:
        return self.cat is not None


def cat_attr(name: str, value: int) -> AttributeValue:
    return AttributeValue(name=name, cat=int(value))


def dense_attr(name: str, values: Iterable[float]) -> AttributeValue:
    return AttributeValue(name=name, dense=tuple(float(v) for v in values))


@dataclass(frozen=True)
class Event:
    """One time-stamped engagement record for a single user and source."""

    user_id: int
    source: SourceType
    timestamp: int
    attributes: tuple[AttributeValue, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.attributes, tuple):
            object.__setattr__(self, "attributes", tuple(self.attributes))

    def attribute(self, name: str) -> AttributeValue:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class AttributeSpec:
    """Schema entry: a categorical (with cardinality), a dense vector
    (with dimension), or the timestamp placeholder."""

    name: str
    kind: str  # "categorical" | "dense" | "timestamp"
    cardinality: int | None = None
    dim: int | None = None


@dataclass(frozen=True)
class SourceSchema:
    source: SourceType
    specs: tuple[AttributeSpec, ...]

    def __post_init__(self) -> None:
        if len(self.specs) > MAX_ATTRIBUTES:
            raise SchemaViolationError(
                f"{self.source.value}: schema exceeds {MAX_ATTRIBUTES} attributes"
            )

    @property
    def value_specs(self) -> tuple[AttributeSpec, ...]:
        """Schema entries that appear in an event's attributes list."""
        return tuple(s for s in self.specs if s.kind != "timestamp")

    def with_dense_attribute(self, name: str, dim: int) -> "SourceSchema":
        """Schema for events carrying one extra appended dense attribute."""
        extra = AttributeSpec(name=name, kind="dense", dim=dim)
        return SourceSchema(source=self.source, specs=self.specs + (extra,))


@dataclass(frozen=True)
class CatalogSizes:
    """Cardinalities that tie schemas to a concrete catalog."""

    contents: int
    ads: int
    semantic_codes: int
    authors: int
    pages: int = 8
    embedding_dim: int = 16


def build_schemas(sizes: CatalogSizes) -> dict[SourceType, SourceSchema]:
    """The three fixed source schemas, sized for one catalog."""
    cat = lambda name, card: AttributeSpec(name, "categorical", cardinality=card)
    ts = AttributeSpec("timestamp", "timestamp")
    return {
        SourceType.ORGANIC_IMPRESSION: SourceSchema(
            SourceType.ORGANIC_IMPRESSION,
            (
                cat("content_id", sizes.contents),
                cat("dwell_time", DWELL_BUCKETS),
                cat("media_type", MEDIA_TYPES),
                cat("position", POSITION_BUCKETS),
                ts,
            ),
        ),
        SourceType.AD_IMPRESSION: SourceSchema(
            SourceType.AD_IMPRESSION,
            (
                cat("semantic_id", sizes.semantic_codes),
                cat("ad_id", sizes.ads),
                ts,
            ),
        ),
        SourceType.VIDEO_VIEW: SourceSchema(
            SourceType.VIDEO_VIEW,
            (
                cat("video_id", sizes.contents),
                cat("author_id", sizes.authors),
                cat("post_id", sizes.contents),
                cat("dwell_time", DWELL_BUCKETS),
                cat("page_id", sizes.pages),
                cat("content_type", CONTENT_TYPES),
                ts,
            ),
        ),
    }


# Attribute carrying the catalog item id, per source.
ITEM_ID_ATTRIBUTE = {
    SourceType.ORGANIC_IMPRESSION: "content_id",
    SourceType.AD_IMPRESSION: "ad_id",
    SourceType.VIDEO_VIEW: "video_id",
}


@dataclass(frozen=True)
class TimeWindow:
    """Closed interval [start, end] in unix seconds."""

    start: int
    end: int


@dataclass(frozen=True)
class EventSequence:
    """Window-filtered, length-capped event list, most recent first."""

    user_id: int
    source: SourceType
    window: TimeWindow
    max_len: int
    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        if len(self.events) > self.max_len:
            raise ValueError("sequence longer than max_len")
        last = None
        for e in self.events:
            if not (self.window.start <= e.timestamp <= self.window.end):
                raise ValueError("event outside window")
            if last is not None and e.timestamp > last:
                raise ValueError("timestamps must be non-increasing")
            last = e.timestamp

    def __len__(self) -> int:
        return len(self.events)


def build_event_sequence(
    events: Sequence[Event],
    window: TimeWindow,
    max_len: int,
    *,
    user_id: int | None = None,
    source: SourceType | None = None,
) -> EventSequence:
    """Filter one user's single-source events to a window and keep the
    ``max_len`` most recent, most recent first.

    Ties on equal timestamps break by ascending position in ``events``.
    ``user_id``/``source`` are only required when ``events`` is empty.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if window.end <= window.start:
        raise InvalidWindowError(f"empty window [{window.start}, {window.end}]")
    if events:
        users = {e.user_id for e in events}
        sources = {e.source for e in events}
        if len(users) > 1 or len(sources) > 1:
            raise SchemaViolationError(
                f"mixed user/source input: users={sorted(users)} "
                f"sources={sorted(s.value for s in sources)}"
            )
        user_id = events[0].user_id
        source = events[0].source
    elif user_id is None or source is None:
        raise ValueError("user_id and source are required for empty input")

    kept = [
        (e, i)
        for i, e in enumerate(events)
        if window.start <= e.timestamp <= window.end
    ]
    kept.sort(key=lambda pair: (-pair[0].timestamp, pair[1]))
    return EventSequence(
        user_id=user_id,
        source=source,
        window=window,
        max_len=max_len,
        events=tuple(e for e, _ in kept[:max_len]),
    )


def validate_event(event: Event, schema: SourceSchema) -> list[str]:
    """Return schema violations (empty list means the event is valid)."""
    violations: list[str] = []
    if event.source != schema.source:
        violations.append(
            f"source {event.source.value} does not match schema "
            f"{schema.source.value}"
        )
    if event.timestamp <= 0:
        violations.append("timestamp must be positive")
    attrs = event.attributes
    if len(attrs) > MAX_ATTRIBUTES:
        violations.append("attribute count exceeds 10")
    specs = schema.value_specs
    if len(attrs) != len(specs):
        violations.append(
            f"expected {len(specs)} attributes, got {len(attrs)}"
        )
    for a, s in zip(attrs, specs):
        if a.name != s.name:
            violations.append(f"attribute {a.name!r} where {s.name!r} expected")
            continue
        if s.kind == "categorical":
            if not a.is_categorical:
                violations.append(f"{s.name}: expected categorical, got dense")
            elif not (0 <= a.cat < s.cardinality):
                violations.append(
                    f"{s.name}: id out of range ({a.cat} not in [0, {s.cardinality}))"
                )
        else:  # dense
            if a.is_categorical:
                violations.append(f"{s.name}: expected dense, got categorical")
            elif len(a.dense) != s.dim:
                violations.append(
                    f"{s.name}: dimension {len(a.dense)} != {s.dim}"
                )
            elif not all(np.isfinite(v) for v in a.dense):
                violations.append(f"{s.name}: non-finite entries")
    return violations


# ----------------------------------------------------------------------
# JSONL event log
# ----------------------------------------------------------------------

_SOURCE_TAGS = {s.value: s for s in SourceType}


def _event_to_json(event: Event) -> str:
    attrs = []
    for a in event.attributes:
        if a.is_categorical:
            attrs.append({"name": a.name, "cat": a.cat})
        else:
            attrs.append({"name": a.name, "dense": list(a.dense)})
    return json.dumps(
        {
            "user_id": event.user_id,
            "source": event.source.value,
            "timestamp": event.timestamp,
            "attributes": attrs,
        },
        separators=(",", ":"),
    )


def _event_from_json(obj: dict, line: int) -> Event:
    try:
        user_id = obj["user_id"]
        tag = obj["source"]
        timestamp = obj["timestamp"]
        raw_attrs = obj["attributes"]
    except (KeyError, TypeError) as exc:
        raise EventLogParseError(line, f"missing field {exc}") from exc
    if tag not in _SOURCE_TAGS:
        raise SchemaViolationError(f"line {line}: unknown source tag {tag!r}")
    attrs = []
    for entry in raw_attrs:
        if not isinstance(entry, dict) or "name" not in entry:
            raise EventLogParseError(line, f"malformed attribute {entry!r}")
        if ("cat" in entry) == ("dense" in entry):
            raise EventLogParseError(
                line, f"attribute {entry.get('name')!r} needs exactly one of cat/dense"
            )
        if "cat" in entry:
            attrs.append(cat_attr(entry["name"], entry["cat"]))
        else:
            attrs.append(dense_attr(entry["name"], entry["dense"]))
    return Event(
        user_id=int(user_id),
        source=_SOURCE_TAGS[tag],
        timestamp=int(timestamp),
        attributes=tuple(attrs),
    )


def write_event_log(events: Iterable[Event], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(_event_to_json(e))
            fh.write("\n")


def read_event_log(path) -> list[Event]:
    events: list[Event] = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise EventLogParseError(i, f"invalid JSON ({exc.msg})") from exc
            events.append(_event_from_json(obj, i))
    return events


# ----------------------------------------------------------------------
# Columnar event store
# ----------------------------------------------------------------------


class SourceTable:
    """Struct-of-arrays view of one source's events.

    Rows are sorted by (user, timestamp asc, insertion index desc) so that
    slicing the last ``r`` rows of a window and reversing yields the
    most-recent-first order with the same tie-break as
    :func:`build_event_sequence`.
    """

    def __init__(
        self,
        source: SourceType,
        user: np.ndarray,
        ts: np.ndarray,
        idx: np.ndarray,
        cats: Mapping[str, np.ndarray],
        denses: Mapping[str, np.ndarray],
        n_users: int,
    ):
        order = np.lexsort((-idx, ts, user))
        self.source = source
        self.user = np.ascontiguousarray(user[order], dtype=np.int64)
        self.ts = np.ascontiguousarray(ts[order], dtype=np.int64)
        self.idx = np.ascontiguousarray(idx[order], dtype=np.int64)
        self.cats = {
            k: np.ascontiguousarray(v[order], dtype=np.int64) for k, v in cats.items()
        }
        self.denses = {
            k: np.ascontiguousarray(v[order], dtype=np.float64)
            for k, v in denses.items()
        }
        # user_offsets[u] .. user_offsets[u+1] is user u's row range
        self.user_offsets = np.searchsorted(self.user, np.arange(n_users + 1))

    def __len__(self) -> int:
        return self.user.shape[0]

    @staticmethod
    def empty(source: SourceType, n_users: int) -> "SourceTable":
        zero = np.zeros(0, dtype=np.int64)
        return SourceTable(source, zero, zero, zero, {}, {}, n_users)

    def window_slice(self, user_id: int, t_lo: int, t_hi: int) -> tuple[int, int]:
        """Row range for user events with t_lo <= ts <= t_hi (closed)."""
        lo = int(self.user_offsets[user_id])
        hi = int(self.user_offsets[user_id + 1])
        left = lo + int(np.searchsorted(self.ts[lo:hi], t_lo, side="left"))
        right = lo + int(np.searchsorted(self.ts[lo:hi], t_hi, side="right"))
        return left, right


class EventLog:
    """All generated events, one columnar table per source."""

    def __init__(self, tables: Mapping[SourceType, SourceTable], n_users: int):
        self.tables = dict(tables)
        self.n_users = n_users

    def __len__(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def table(self, source: SourceType) -> SourceTable:
        if source not in self.tables:
            return SourceTable.empty(source, self.n_users)
        return self.tables[source]

    @staticmethod
    def from_events(events: Sequence[Event], n_users: int) -> "EventLog":
        """Build the columnar store from a flat event list.

        Insertion index is the position in ``events``; attribute columns
        are inferred from the first event of each source, which must be
        schema-uniform within a source.
        """
        by_source: dict[SourceType, list[tuple[int, Event]]] = {}
        for i, e in enumerate(events):
            by_source.setdefault(e.source, []).append((i, e))
        tables = {}
        for source, rows in by_source.items():
            first = rows[0][1]
            cat_names = [a.name for a in first.attributes if a.is_categorical]
            dense_names = [a.name for a in first.attributes if not a.is_categorical]
            user = np.array([e.user_id for _, e in rows])
            ts = np.array([e.timestamp for _, e in rows])
            idx = np.array([i for i, _ in rows])
            cats = {}
            for name in cat_names:
                cats[name] = np.array([e.attribute(name).cat for _, e in rows])
            denses = {}
            for name in dense_names:
                denses[name] = np.array(
                    [e.attribute(name).dense for _, e in rows], dtype=np.float64
                )
            tables[source] = SourceTable(
                source, user, ts, idx, cats, denses, n_users
            )
        return EventLog(tables, n_users)

    def _row_event(self, table: SourceTable, row: int) -> Event:
        attrs: list[AttributeValue] = []
        # Attribute order follows the source schema; columns preserve it.
        for name, col in table.cats.items():
            attrs.append(cat_attr(name, int(col[row])))
        for name, col in table.denses.items():
            attrs.append(dense_attr(name, col[row]))
        return Event(
            user_id=int(table.user[row]),
            source=table.source,
            timestamp=int(table.ts[row]),
            attributes=tuple(attrs),
        )

    def iter_events(self) -> Iterator[Event]:
        """All events in insertion order (stable across round trips)."""
        heads = []
        for source, table in self.tables.items():
            order = np.argsort(table.idx, kind="stable")
            heads.append((table, order))
        merged: list[tuple[int, SourceTable, int]] = []
        for table, order in heads:
            for row in order:
                merged.append((int(table.idx[row]), table, int(row)))
        merged.sort(key=lambda item: item[0])
        for _, table, row in merged:
            yield self._row_event(table, row)

    def to_events(self) -> list[Event]:
        return list(self.iter_events())
