"""Event schemas, sequence assembly, and the JSONL log round trip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coffee.errors import (
    EventLogParseError,
    InvalidWindowError,
    SchemaViolationError,
)
from coffee.events import (
    MAX_ATTRIBUTES,
    AttributeValue,
    CatalogSizes,
    Event,
    EventLog,
    SourceType,
    TimeWindow,
    build_event_sequence,
    build_schemas,
    cat_attr,
    dense_attr,
    read_event_log,
    validate_event,
    write_event_log,
)

SIZES = CatalogSizes(contents=50, ads=20, semantic_codes=8, authors=10)
SCHEMAS = build_schemas(SIZES)


def make_ad_event(user=1, ts=100, semantic=3, ad=7):
    return Event(
        user_id=user,
        source=SourceType.AD_IMPRESSION,
        timestamp=ts,
        attributes=(cat_attr("semantic_id", semantic), cat_attr("ad_id", ad)),
    )


def make_organic_event(user=1, ts=100, content=5, dwell=2, media=1, position=4):
    return Event(
        user_id=user,
        source=SourceType.ORGANIC_IMPRESSION,
        timestamp=ts,
        attributes=(
            cat_attr("content_id", content),
            cat_attr("dwell_time", dwell),
            cat_attr("media_type", media),
            cat_attr("position", position),
        ),
    )


def test_exactly_three_sources():
    assert len(SourceType) == 3
    assert {s.value for s in SourceType} == {
        "organic_impression", "ad_impression", "video_view"
    }


class TestAttributeValue:
    def test_exactly_one_kind(self):
        with pytest.raises(ValueError):
            AttributeValue(name="x")
        with pytest.raises(ValueError):
            AttributeValue(name="x", cat=1, dense=(1.0,))

    def test_dense_coerces_to_tuple(self):
        a = dense_attr("v", [1.0, 2.0])
        assert a.dense == (1.0, 2.0)
        assert not a.is_categorical


class TestBuildEventSequence:
    def test_truncates_to_most_recent(self):
        events = [make_ad_event(ts=t) for t in (1, 2, 3, 4, 5)]
        seq = build_event_sequence(events, TimeWindow(0, 10), max_len=2)
        assert [e.timestamp for e in seq.events] == [5, 4]

    def test_empty_input_is_valid(self):
        seq = build_event_sequence(
            [], TimeWindow(0, 10), max_len=200,
            user_id=3, source=SourceType.AD_IMPRESSION,
        )
        assert len(seq) == 0

    def test_window_filter(self):
        events = [make_ad_event(ts=t) for t in (1, 2, 3)]
        seq = build_event_sequence(events, TimeWindow(2, 10), max_len=10)
        assert [e.timestamp for e in seq.events] == [3, 2]

    def test_mixed_users_rejected(self):
        events = [make_ad_event(user=1), make_ad_event(user=2)]
        with pytest.raises(SchemaViolationError):
            build_event_sequence(events, TimeWindow(0, 10), max_len=5)

    def test_mixed_sources_rejected(self):
        events = [make_ad_event(), make_organic_event()]
        with pytest.raises(SchemaViolationError):
            build_event_sequence(events, TimeWindow(0, 10), max_len=5)

    def test_empty_window_rejected(self):
        with pytest.raises(InvalidWindowError):
            build_event_sequence([make_ad_event()], TimeWindow(10, 10), max_len=5)

    def test_tie_break_by_insertion_index(self):
        events = [make_ad_event(ts=5, ad=i) for i in range(4)]
        seq = build_event_sequence(events, TimeWindow(0, 10), max_len=3)
        assert [e.attribute("ad_id").cat for e in seq.events] == [0, 1, 2]

    @given(
        ts=st.lists(st.integers(min_value=1, max_value=50), min_size=0, max_size=30),
        max_len=st.integers(min_value=1, max_value=40),
        lo=st.integers(min_value=0, max_value=25),
        span=st.integers(min_value=1, max_value=40),
    )
    @settings(max_examples=80, deadline=None)
    def test_length_and_prefix_properties(self, ts, max_len, lo, span):
        window = TimeWindow(lo, lo + span)
        events = [make_ad_event(ts=t, ad=i % 20) for i, t in enumerate(ts)]
        seq = build_event_sequence(
            events, window, max_len,
            user_id=1, source=SourceType.AD_IMPRESSION,
        )
        in_window = sum(1 for t in ts if lo <= t <= lo + span)
        assert len(seq) == min(max_len, in_window)
        # growing the cap only appends events
        bigger = build_event_sequence(
            events, window, max_len + 5,
            user_id=1, source=SourceType.AD_IMPRESSION,
        )
        assert bigger.events[: len(seq)] == seq.events
        # idempotent when re-applied to its own output
        again = build_event_sequence(list(seq.events), window, max_len,
                                     user_id=1, source=SourceType.AD_IMPRESSION)
        assert again.events == seq.events


class TestValidateEvent:
    def test_valid_ad_event(self):
        assert validate_event(make_ad_event(), SCHEMAS[SourceType.AD_IMPRESSION]) == []

    def test_attribute_count_cap(self):
        attrs = tuple(cat_attr(f"a{i}", 0) for i in range(MAX_ATTRIBUTES + 1))
        event = Event(
            user_id=1, source=SourceType.AD_IMPRESSION, timestamp=5, attributes=attrs
        )
        violations = validate_event(event, SCHEMAS[SourceType.AD_IMPRESSION])
        assert any("attribute count exceeds 10" in v for v in violations)

    def test_categorical_id_at_cardinality_is_invalid(self):
        event = make_ad_event(semantic=SIZES.semantic_codes)
        violations = validate_event(event, SCHEMAS[SourceType.AD_IMPRESSION])
        assert any("id out of range" in v for v in violations)

    def test_wrong_kind_and_dimension(self):
        schema = SCHEMAS[SourceType.AD_IMPRESSION].with_dense_attribute("knn_embedding", 4)
        event = Event(
            user_id=1,
            source=SourceType.AD_IMPRESSION,
            timestamp=5,
            attributes=(
                cat_attr("semantic_id", 0),
                cat_attr("ad_id", 0),
                dense_attr("knn_embedding", [0.0, 1.0]),
            ),
        )
        violations = validate_event(event, schema)
        assert any("dimension" in v for v in violations)

    def test_timestamp_must_be_positive(self):
        event = Event(
            user_id=1, source=SourceType.AD_IMPRESSION, timestamp=0,
            attributes=(cat_attr("semantic_id", 0), cat_attr("ad_id", 0)),
        )
        assert any("timestamp" in v for v in
                   validate_event(event, SCHEMAS[SourceType.AD_IMPRESSION]))


def random_events(rng, n):
    events = []
    for i in range(n):
        source = rng.choice(list(SourceType))
        ts = int(rng.integers(1, 10_000))
        user = int(rng.integers(0, 20))
        if source == SourceType.AD_IMPRESSION:
            attrs = (
                cat_attr("semantic_id", int(rng.integers(SIZES.semantic_codes))),
                cat_attr("ad_id", int(rng.integers(SIZES.ads))),
            )
        elif source == SourceType.ORGANIC_IMPRESSION:
            attrs = (
                cat_attr("content_id", int(rng.integers(SIZES.contents))),
                cat_attr("dwell_time", int(rng.integers(8))),
                cat_attr("media_type", int(rng.integers(3))),
                cat_attr("position", int(rng.integers(16))),
            )
        else:
            attrs = (
                cat_attr("video_id", int(rng.integers(SIZES.contents))),
                cat_attr("author_id", int(rng.integers(SIZES.authors))),
                cat_attr("post_id", int(rng.integers(SIZES.contents))),
                cat_attr("dwell_time", int(rng.integers(8))),
                cat_attr("page_id", int(rng.integers(SIZES.pages))),
                cat_attr("content_type", int(rng.integers(2))),
            )
        events.append(Event(user_id=user, source=SourceType(source),
                            timestamp=ts, attributes=attrs))
    return events


class TestEventLogIO:
    def test_round_trip_identity(self, tmp_path):
        events = random_events(np.random.default_rng(42), 100)
        path = tmp_path / "log.jsonl"
        write_event_log(events, path)
        assert read_event_log(path) == events

    def test_round_trip_preserves_dense_floats(self, tmp_path):
        event = Event(
            user_id=1, source=SourceType.AD_IMPRESSION, timestamp=9,
            attributes=(
                cat_attr("semantic_id", 1),
                cat_attr("ad_id", 2),
                dense_attr("knn_embedding", [0.1, -1.5e-13, 3.7e12]),
            ),
        )
        path = tmp_path / "log.jsonl"
        write_event_log([event], path)
        assert read_event_log(path) == [event]

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        good = random_events(np.random.default_rng(0), 1)[0]
        write_event_log([good], path)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"user_id": 1, "source": "ad_impression", "attributes": []}\n')
        with pytest.raises(EventLogParseError) as exc:
            read_event_log(path)
        assert exc.value.line == 2

    def test_unknown_source_tag(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text(
            '{"user_id": 1, "source": "mystery", "timestamp": 5, "attributes": []}\n'
        )
        with pytest.raises(SchemaViolationError):
            read_event_log(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(EventLogParseError) as exc:
            read_event_log(path)
        assert exc.value.line == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text("")
        assert read_event_log(path) == []


class TestColumnarEventLog:
    def test_from_events_round_trip(self):
        events = random_events(np.random.default_rng(7), 200)
        log = EventLog.from_events(events, n_users=20)
        assert log.to_events() == events

    def test_window_slice_matches_builder(self):
        rng = np.random.default_rng(3)
        events = [
            e for e in random_events(rng, 300)
            if e.source == SourceType.AD_IMPRESSION
        ]
        log = EventLog.from_events(events, n_users=20)
        table = log.table(SourceType.AD_IMPRESSION)
        for user in range(5):
            mine = [e for e in events if e.user_id == user]
            window = TimeWindow(1000, 8000)
            seq = build_event_sequence(
                mine, window, max_len=10,
                user_id=user, source=SourceType.AD_IMPRESSION,
            )
            lo, hi = table.window_slice(user, window.start, window.end)
            got = [int(t) for t in table.ts[lo:hi]][::-1][:10]
            # reversal of (ts asc, idx desc) is exactly most-recent-first
            assert got == [e.timestamp for e in seq.events]

    def test_missing_source_yields_empty_table(self):
        log = EventLog.from_events(random_events(np.random.default_rng(1), 5), 20)
        for source in SourceType:
            table = log.table(source)
            assert table.user_offsets.shape == (21,)
