from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsebell.timetags import (Channel, Chirp, FrequencyPlan, PlanError, TagFileError, TagStream, TimeTag,
                                read_tag_file, validate_stream, write_tag_file)

PLAN = FrequencyPlan()
HEADER = (
    "# pulsebell-tags v1\n# station: A\n# run: r1\n# freq_pre_hz: 490000\n"
    "# freq_run_hz: 500000\n# pulse_on_ns: 1000\nchannel,time_ps\n"
)


def stream(tags, station="A", plan=PLAN):
    return TagStream.from_tags(station, "r1", plan, [TimeTag(t, Channel(c)) for t, c in tags])


def test_empty_stream_is_header_only():
    data = write_tag_file(stream([]))
    assert data.decode() == HEADER
    assert len(read_tag_file(data)) == 0


def test_single_trigger_record():
    data = write_tag_file(stream([(1000, Channel.TRIGGER)]))
    assert data.decode() == HEADER + "T,1000\n"


def test_three_records_round_trip():
    s = stream([(5, Channel.TRIGGER), (5, Channel.OUT1), (9, Channel.OUT0)])
    back = read_tag_file(write_tag_file(s))
    assert back == s
    assert back.tags == [TimeTag(5, Channel.TRIGGER), TimeTag(5, Channel.OUT1), TimeTag(9, Channel.OUT0)]


def test_chirp_header_round_trip():
    plan = FrequencyPlan(chirp=Chirp(1000, 0.5))
    s = stream([(1, Channel.TRIGGER)], plan=plan)
    data = write_tag_file(s)
    assert b"# chirp_depth_hz: 1000\n# chirp_period_s: 0.5\n" in data
    assert read_tag_file(data).plan == plan


def test_out_of_order_records_name_both():
    with pytest.raises(TagFileError) as err:
        read_tag_file(HEADER + "T,500\n1,400\n")
    assert err.value.line == 9
    assert "record 1" in str(err.value) and "record 0" in str(err.value)


def test_unknown_channel_code():
    with pytest.raises(TagFileError, match="unknown channel code 'X'"):
        read_tag_file(HEADER + "X,400\n")


@pytest.mark.parametrize("body", ["T,-4\n", "T,01\n", "T,4,5\n", "T 4\n", "1,\n"])
def test_malformed_record_reports_line(body):
    with pytest.raises(TagFileError) as err:
        read_tag_file(HEADER + "T,1\n" + body)
    assert err.value.line == 9


def test_unknown_header_key_rejected():
    text = HEADER.replace("# pulse_on_ns: 1000\n", "# pulse_on_ns: 1000\n# colour: red\n")
    with pytest.raises(TagFileError, match="unknown header key"):
        read_tag_file(text)


def test_header_order_enforced():
    text = HEADER.replace("# freq_pre_hz: 490000\n# freq_run_hz: 500000\n",
                          "# freq_run_hz: 500000\n# freq_pre_hz: 490000\n")
    with pytest.raises(TagFileError, match="out of order"):
        read_tag_file(text)


def test_duplicate_time_same_channel_is_violation():
    s = stream([(10, Channel.OUT1), (10, Channel.OUT1)])
    v = validate_stream(s)
    assert [(x.kind, x.index, x.channel) for x in v] == [("duplicate", 1, Channel.OUT1)]
    with pytest.raises(TagFileError, match="record 1"):
        write_tag_file(s)


def test_equal_trigger_times_violate_gap_rule():
    v = validate_stream(stream([(10, Channel.TRIGGER), (10, Channel.TRIGGER)]))
    assert v[0].kind == "trigger_gap"


def test_plan_violation_reported():
    s = stream([], plan=FrequencyPlan(500_000, 500_000))
    assert [x.kind for x in validate_stream(s)] == ["plan"]


def test_sorted_stream_is_ok():
    assert validate_stream(stream([(1, 2), (2, 1), (3, 0), (3, 2)])) == []


@pytest.mark.parametrize(
    "plan",
    [
        FrequencyPlan(500_000, 500_000),
        FrequencyPlan(pulse_on_ns=2001),
        FrequencyPlan(chirp=Chirp(2500, 1.0)),
        FrequencyPlan(chirp=Chirp(100, 0.0)),
    ],
)
def test_plan_invariants(plan):
    with pytest.raises(PlanError):
        plan.check()


def test_periods():
    assert PLAN.pre_period_ps == 2_040_816
    assert PLAN.run_period_ps == 2_000_000


def test_unchirped_offsets_are_multiples():
    assert PLAN.run_offsets(4).tolist() == [0, 2_000_000, 4_000_000, 6_000_000]


def test_chirped_offsets_follow_phase():
    plan = FrequencyPlan(chirp=Chirp(1000, 0.2))
    off = plan.run_offsets(200_000)
    phase = plan.run_phase(off)
    # integer-ps rounding of each gap accumulates to well under a period
    assert np.max(np.abs(phase - np.arange(len(off)))) < 0.01


@st.composite
def streams(draw):
    n = draw(st.integers(0, 60))
    gaps = draw(st.lists(st.integers(0, 10**6), min_size=n, max_size=n))
    chans = draw(st.lists(st.sampled_from([0, 1, 2]), min_size=n, max_size=n))
    times = np.cumsum(np.array(gaps, dtype=np.int64)) if n else np.zeros(0, np.int64)
    # drop same-channel repeats so the stream is valid
    seen: set[tuple[int, int]] = set()
    keep = []
    for t, c in zip(times.tolist(), chans):
        if (t, c) not in seen:
            seen.add((t, c))
            keep.append((t, c))
    station = draw(st.sampled_from(["A", "B"]))
    chirp = draw(st.sampled_from([None, Chirp(1000, 1.0), Chirp(7, 0.25)]))
    return stream(keep, station, FrequencyPlan(chirp=chirp))


@settings(max_examples=100, deadline=None)
@given(streams())
def test_round_trip_identity(s):
    data = write_tag_file(s)
    assert read_tag_file(data) == s
    assert write_tag_file(read_tag_file(data)) == data


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 50), st.sampled_from([0, 1, 2])), max_size=12))
def test_valid_iff_round_trip_succeeds(tags):
    s = TagStream("A", "r1", PLAN, [t for t, _ in tags], [c for _, c in tags])
    ok = validate_stream(s) == []
    try:
        read_tag_file(write_tag_file(s))
        round_trip = True
    except TagFileError:
        round_trip = False
    assert ok == round_trip
