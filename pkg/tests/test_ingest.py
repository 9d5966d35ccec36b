import os
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stacp.errors import DataError
from stacp.ingest import (LEISURE, PROFILES, WORKING, BusinessHoursPolicy, Catalog, CheckIn, DatasetFormat,
                          WeekdayWeekendPolicy, assign_temporal_state, build_matrix, build_state_matrices,
                          chronological_split, parse_checkins, parse_timestamp, read_split, resolve_format,
                          split_sizes, write_checkins, write_split)


def ts(*args):
    return int(datetime(*args, tzinfo=timezone.utc).timestamp())


def write(tmp_path, text, name="data.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- parsing ------------------------------------------------------------------

def test_parse_three_valid_rows(tmp_path):
    p = write(tmp_path, "u1\tp1\t1000\t10.0\t20.0\nu1\tp2\t2000\t10.5\t20.5\nu2\tp1\t3000\t10.0\t20.0\n")
    res = parse_checkins(p)
    assert len(res.checkins) == 3
    assert res.rejected == 0
    assert res.checkins[1] == CheckIn("u1", "p2", 2000, 10.5, 20.5)


def test_parse_rejects_out_of_range_latitude(tmp_path):
    p = write(tmp_path, "u1\tp1\t1000\t10.0\t20.0\nu1\tp2\t2000\t95.0\t20.5\nu2\tp1\t3000\t10.0\t20.0\n")
    res = parse_checkins(p)
    assert [c.poi_id for c in res.checkins] == ["p1", "p1"]
    assert res.rejected == 1
    assert res.reasons["coordinate out of range"] == 1


def test_parse_counts_each_malformed_kind(tmp_path):
    p = write(tmp_path, "\n".join([
        "u1\tp1\t1000\t10.0\t20.0",
        "u1\tp1",
        "u1\tp1\tyesterday\t10.0\t20.0",
        "u1\tp1\t1000\tnorth\t20.0",
        "u1\tp1\t1000\t10.0\t-181",
    ]) + "\n")
    res = parse_checkins(p)
    assert len(res) == 1
    assert res.rejected == 4
    assert set(res.reasons) == {"short row", "bad timestamp", "bad coordinate", "coordinate out of range"}


def test_parse_keeps_duplicate_visits(tmp_path):
    p = write(tmp_path, "u1\tp1\t1000\t1.0\t2.0\n" * 3)
    assert len(parse_checkins(p)) == 3


def test_parse_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        parse_checkins(tmp_path / "nope.tsv")


def test_parse_zero_valid_rows_is_data_error(tmp_path):
    p = write(tmp_path, "u1\tp1\t1000\t99\t20\n")
    with pytest.raises(DataError, match="no valid"):
        parse_checkins(p)


def test_gowalla_profile_reads_iso_times(tmp_path):
    p = write(tmp_path, "0\t2010-10-19T23:55:27Z\t30.2359091167\t-97.7951395833\t22847\n")
    (c,) = parse_checkins(p, PROFILES["gowalla"]).checkins
    assert c == CheckIn("0", "22847", ts(2010, 10, 19, 23, 55, 27), 30.2359091167, -97.7951395833)


def test_custom_profile_with_header_and_commas(tmp_path):
    p = write(tmp_path, "lat,lon,user,poi,time\n1.5,2.5,a,x,2012-04-03 09:00:00\n")
    fmt = resolve_format("custom", ["lat", "lon", "user", "poi", "timestamp"], ",", True)
    (c,) = parse_checkins(p, fmt).checkins
    assert (c.user_id, c.poi_id, c.timestamp, c.lat) == ("a", "x", ts(2012, 4, 3, 9), 1.5)


def test_format_requires_every_field():
    with pytest.raises(ValueError):
        DatasetFormat(("user", "poi", "lat", "lon"))


def test_parse_timestamp_forms():
    assert parse_timestamp("1333324800") == 1333324800
    assert parse_timestamp("1333324800.7") == 1333324800
    assert parse_timestamp("2012-04-02T02:00:00+02:00") == 1333324800


checkin_strategy = st.builds(
    CheckIn,
    st.text("abcdefgh0123456789", min_size=1, max_size=6),
    st.text("pqrstu0123456789", min_size=1, max_size=6),
    st.integers(0, 2_000_000_000),
    st.floats(-90, 90, allow_nan=False),
    st.floats(-180, 180, allow_nan=False),
)


@settings(max_examples=50, deadline=None)
@given(st.lists(checkin_strategy, min_size=1, max_size=30))
def test_serialize_parse_round_trip(tmp_path_factory, checkins):
    p = tmp_path_factory.mktemp("rt") / "c.tsv"
    write_checkins(p, checkins)
    assert parse_checkins(p).checkins == checkins


# -- temporal states ----------------------------------------------------------

@pytest.mark.parametrize("when, state", [
    ((2024, 1, 2, 10, 0), WORKING),    # Tuesday morning
    ((2024, 1, 6, 10, 0), LEISURE),    # Saturday morning
    ((2024, 1, 2, 19, 30), LEISURE),   # Tuesday evening
    ((2024, 1, 5, 17, 59), WORKING),   # Friday, last working minute
    ((2024, 1, 5, 18, 0), LEISURE),
    ((2024, 1, 1, 7, 59), LEISURE),    # Monday before 8
])
def test_default_state_policy(when, state):
    c = CheckIn("u", "p", ts(*when), 0.0, 0.0)
    assert assign_temporal_state(c) == state


@given(st.integers(0, 4_000_000_000))
def test_state_policy_is_total_and_matches_calendar(t):
    state = BusinessHoursPolicy()(t)
    dt = datetime.fromtimestamp(t, tz=timezone.utc)
    assert state == (WORKING if dt.weekday() < 5 and 8 <= dt.hour < 18 else LEISURE)


def test_weekday_weekend_policy():
    policy = WeekdayWeekendPolicy()
    assert policy(ts(2024, 1, 5, 23)) == "WEEKDAY"
    assert policy(ts(2024, 1, 7, 1)) == "WEEKEND"


# -- splits -------------------------------------------------------------------

def user_events(user, n, start=0):
    return [CheckIn(user, f"p{i % 7}", start + i * 100, 0.0, 0.01 * i) for i in range(n)]


@pytest.mark.parametrize("n, sizes", [(10, (7, 1, 2)), (20, (14, 2, 4)), (1, (1, 0, 0)), (2, (1, 0, 1)),
                                      (3, (2, 1, 0)), (5, (3, 1, 1))])
def test_split_sizes(n, sizes):
    split = chronological_split(user_events("u", n))
    got = tuple(len(split.part(name)["u"]) for name in ("train", "validation", "test"))
    assert got == sizes == split_sizes(n)


def test_small_users_are_flagged():
    split = chronological_split(user_events("a", 1) + user_events("b", 2) + user_events("c", 10))
    assert split.flagged == {"a", "b"}


def test_split_breaks_timestamp_ties_by_input_order():
    cs = [CheckIn("u", f"p{i}", 5 if i < 8 else i, 0.0, 0.0) for i in range(10)]
    split = chronological_split(cs)
    assert [c.poi_id for c in split.train["u"]] == [f"p{i}" for i in range(7)]


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        chronological_split(user_events("u", 5), (0.5, 0.1, 0.1))


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdef"), st.lists(st.integers(0, 50), min_size=1, max_size=40),
                       min_size=1))
def test_split_partition_and_order(per_user):
    cs = [CheckIn(u, f"p{i % 5}", t, 0.0, 0.0) for u, times in per_user.items() for i, t in enumerate(times)]
    split = chronological_split(cs)
    for u, times in per_user.items():
        tr, va, te = (split.part(name)[u] for name in ("train", "validation", "test"))
        n = len(times)
        assert len(tr) + len(va) + len(te) == n
        if n >= 3:
            assert len(tr) == (7 * n) // 10 and len(te) == (2 * n) // 10
        if tr and va:
            assert max(c.timestamp for c in tr) <= min(c.timestamp for c in va)
        if (tr or va) and te:
            assert max(c.timestamp for c in tr + va) <= min(c.timestamp for c in te)
        mine = sorted((c.timestamp, c.poi_id) for c in cs if c.user_id == u)
        assert sorted((c.timestamp, c.poi_id) for c in tr + va + te) == mine


def test_split_persistence_round_trip(tmp_path):
    cs = user_events("a", 10) + user_events("b", 2, start=7)
    split = chronological_split(cs)
    write_split(split, tmp_path)
    back = read_split(tmp_path)
    assert back.users == split.users and back.pois == split.pois
    np.testing.assert_array_equal(back.coords, split.coords)
    for name in ("train", "validation", "test"):
        assert back.part(name) == split.part(name)
    assert back.flagged == split.flagged
    lines = (tmp_path / "catalog.tsv").read_text().splitlines()
    assert lines[0] == "user\ta\t0"


# -- matrices -----------------------------------------------------------------

def catalogs(users, pois):
    return Catalog(users), Catalog(pois)


def test_build_matrix_counts_visits():
    users, pois = catalogs(["u"], ["A", "B", "C"])
    cs = [CheckIn("u", "A", 1, 0, 0), CheckIn("u", "B", 2, 0, 0), CheckIn("u", "A", 3, 0, 0)]
    R = build_matrix(cs, users, pois)
    assert R.profile(0) == {0: 2, 1: 1}
    assert R.shape == (1, 3)


def test_build_matrix_state_filter():
    users, pois = catalogs(["u"], ["A", "B"])
    cs = [CheckIn("u", "A", ts(2024, 1, 3, 12), 0, 0),  # Wednesday noon
          CheckIn("u", "A", ts(2024, 1, 4, 12), 0, 0),  # Thursday noon
          CheckIn("u", "B", ts(2024, 1, 7, 12), 0, 0)]  # Sunday
    assert build_matrix(cs, users, pois, WORKING).profile(0) == {0: 2}
    assert build_matrix(cs, users, pois, LEISURE).profile(0) == {1: 1}


def test_build_matrix_empty_collection():
    users, pois = catalogs(["u", "v"], ["A", "B", "C"])
    R = build_matrix([], users, pois)
    assert R.shape == (2, 3) and R.nnz == 0


def test_build_matrix_unknown_id_is_hard_error():
    users, pois = catalogs(["u"], ["A"])
    with pytest.raises(DataError, match="catalog"):
        build_matrix([CheckIn("u", "Z", 1, 0, 0)], users, pois)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5), st.integers(0, 3 * 7 * 86400)), max_size=60),
       st.integers(1, 23))
def test_state_matrices_sum_to_full_matrix(events, start):
    policy = BusinessHoursPolicy(start_hour=start - 1, end_hour=start + 1) if start > 1 else BusinessHoursPolicy()
    cs = [CheckIn(f"u{u}", f"p{p}", t, 0, 0) for u, p, t in events]
    users, pois = catalogs([f"u{i}" for i in range(4)], [f"p{i}" for i in range(6)])
    full = build_matrix(cs, users, pois)
    parts = build_state_matrices(cs, users, pois, policy)
    total = sum(m.toarray() for m in parts.values())
    np.testing.assert_array_equal(total, full.toarray())
    assert (full.counts.data >= 1).all()
    np.testing.assert_array_equal(full.row_sums(), [sum(1 for u, _, _ in events if u == i) for i in range(4)])


@pytest.mark.skipif(not os.environ.get("STACP_GOWALLA"), reason="set STACP_GOWALLA to the preprocessed Gowalla check-in file")
def test_gowalla_dump_counts():
    profile = os.environ.get("STACP_GOWALLA_PROFILE", "gowalla")
    res = parse_checkins(os.environ["STACP_GOWALLA"], PROFILES[profile])
    assert len(res.checkins) == 620_683
    assert len({c.user_id for c in res.checkins}) == 5_628
    assert len({c.poi_id for c in res.checkins}) == 31_803
