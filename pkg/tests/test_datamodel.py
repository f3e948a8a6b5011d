import itertools
import random

import pytest

from rgma.datamodel import (
    CleanupRule,
    HistoryStore,
    LatestStore,
    RetentionRule,
    Tuple,
    apply_cleanup,
    apply_retention,
    defining_key,
    history_query,
    latest_merge,
    make_tuple,
    tuple_mapping,
)
from rgma.errors import KeyMismatchError, SchemaError, StorageError
from rgma.sqlcore import parse_condition_text, parse_create_table, parse_insert, parse_select

WEEK_MS = 7 * 24 * 3600 * 1000


@pytest.fixture
def metric_schema():
    return parse_create_table(
        "CREATE TABLE Metric (host STRING, value INT, ts TIMESTAMP)", ["host"]
    )


def mk(schema, host, value, ts):
    return make_tuple(schema, {"host": host, "value": value, "ts": ts})


def test_make_tuple_validates(metric_schema):
    t = mk(metric_schema, "h1", 5, 100)
    assert t.timestamp == 100
    assert tuple_mapping(metric_schema, t) == {"host": "h1", "value": 5, "ts": 100}
    with pytest.raises(SchemaError):
        make_tuple(metric_schema, {"host": "h1", "value": 5})
    with pytest.raises(SchemaError):
        make_tuple(metric_schema, {"host": "h1", "value": 5, "ts": 1, "bogus": 2})


def test_latest_merge_absent_existing(metric_schema):
    t = mk(metric_schema, "h1", 1, 5)
    assert latest_merge(None, t, metric_schema) is t


def test_latest_merge_equal_timestamp_replaces(metric_schema):
    old = mk(metric_schema, "h1", 1, 10)
    new = mk(metric_schema, "h1", 2, 10)
    assert latest_merge(old, new, metric_schema) is new


def test_latest_merge_older_incoming_kept_out(metric_schema):
    old = mk(metric_schema, "h1", 1, 10)
    stale = mk(metric_schema, "h1", 2, 9)
    assert latest_merge(old, stale, metric_schema) is old


def test_latest_merge_key_mismatch(metric_schema):
    a = mk(metric_schema, "h1", 1, 10)
    b = mk(metric_schema, "h2", 1, 11)
    with pytest.raises(KeyMismatchError):
        latest_merge(a, b, metric_schema)


def test_latest_merge_idempotent(metric_schema):
    t = mk(metric_schema, "h1", 1, 10)
    assert latest_merge(t, t, metric_schema) is t


def test_latest_merge_fold_over_all_permutations(metric_schema):
    tuples = [mk(metric_schema, "h1", i, ts) for i, ts in enumerate([3, 9, 1, 7, 5])]
    expected = max(tuples, key=lambda t: t.timestamp)
    for perm in itertools.permutations(tuples):
        acc = None
        for t in perm:
            acc = latest_merge(acc, t, metric_schema)
        assert acc is expected


def test_latest_store_matches_group_by_oracle(metric_schema):
    rng = random.Random(424)
    for _ in range(100):
        store = LatestStore(metric_schema)
        inserted = []
        for _ in range(rng.randint(0, 50)):
            t = mk(metric_schema, f"h{rng.randint(0, 4)}", rng.randint(0, 99), rng.randint(0, 20))
            inserted.append(t)
            store.insert(t)
        # oracle: group by key, keep max timestamp, last arrival wins ties
        expect = {}
        for t in inserted:
            k = defining_key(metric_schema, t)
            if k not in expect or t.timestamp >= expect[k].timestamp:
                expect[k] = t
        got = {defining_key(metric_schema, t): t for t in store.rows()}
        assert got == expect


def test_history_store_keeps_duplicate_keys(metric_schema):
    store = HistoryStore(metric_schema)
    store.append(mk(metric_schema, "h1", 1, 1))
    store.append(mk(metric_schema, "h1", 2, 2))
    q = parse_select("SELECT * FROM Metric", {"metric": metric_schema})
    assert len(history_query(q, {"metric": (metric_schema, store.rows())})) == 2


def test_cleanup_week_old(metric_schema):
    now = 100 * WEEK_MS
    store = HistoryStore(metric_schema)
    store.append(mk(metric_schema, "h1", 1, now - 24 * 3600 * 1000))      # 1 day old
    store.append(mk(metric_schema, "h2", 2, now - 8 * 24 * 3600 * 1000))  # 8 days old
    rule = CleanupRule(
        "metric",
        parse_condition_text(f"NOW - ts > {WEEK_MS}", metric_schema, allow_now=True),
        interval_ms=1000,
    )
    assert apply_cleanup(store, rule, now) == 1
    assert len(store) == 1
    # idempotent at fixed now
    assert apply_cleanup(store, rule, now) == 0


def test_cleanup_false_condition_deletes_nothing(metric_schema):
    store = HistoryStore(metric_schema)
    store.append(mk(metric_schema, "h1", 1, 10))
    rule = CleanupRule(
        "metric",
        parse_condition_text("ts < 0 AND ts > 0", metric_schema),
        interval_ms=1000,
    )
    assert apply_cleanup(store, rule, now=50) == 0
    assert len(store) == 1


def test_cleanup_random_rules_match_filter_oracle(metric_schema):
    rng = random.Random(777)
    for _ in range(60):
        store = HistoryStore(metric_schema)
        rows = [
            mk(metric_schema, f"h{rng.randint(0, 3)}", rng.randint(0, 9), rng.randint(0, 9))
            for _ in range(rng.randint(0, 25))
        ]
        for t in rows:
            store.append(t)
        bound = rng.randint(0, 9)
        op = rng.choice(["<", "<=", ">", ">=", "=", "<>"])
        text = rng.choice([f"value {op} {bound}", f"NOW - ts > {bound}"])
        rule = CleanupRule(
            "metric",
            parse_condition_text(text, metric_schema, allow_now=True),
            interval_ms=1,
        )
        now = 5
        deleted = apply_cleanup(store, rule, now)
        # independent oracle: python-side filtering on the raw values
        def matches(t):
            host, value, ts = t.values
            if text.startswith("NOW"):
                return now - ts > bound
            return {
                "<": value < bound, "<=": value <= bound, ">": value > bound,
                ">=": value >= bound, "=": value == bound, "<>": value != bound,
            }[op]

        survivors = [t for t in rows if not matches(t)]
        assert deleted == sum(1 for t in rows if matches(t))
        assert store.rows() == survivors


def test_two_cleanup_rules_delete_union(metric_schema):
    rng = random.Random(31337)
    for _ in range(40):
        rows = [
            mk(metric_schema, f"h{rng.randint(0, 3)}", rng.randint(0, 9), rng.randint(0, 9))
            for _ in range(rng.randint(0, 20))
        ]
        b1, b2 = rng.randint(0, 9), rng.randint(0, 9)
        r1 = CleanupRule("metric", parse_condition_text(f"value < {b1}", metric_schema), 1)
        r2 = CleanupRule("metric", parse_condition_text(f"ts > {b2}", metric_schema), 1)
        results = []
        for order in ((r1, r2), (r2, r1)):
            store = HistoryStore(metric_schema)
            for t in rows:
                store.append(t)
            for rule in order:
                apply_cleanup(store, rule, now=0)
            results.append(store.rows())
        assert results[0] == results[1]
        union_doomed = {
            t for t in rows if t.values[1] < b1 or t.values[2] > b2
        }
        assert set(results[0]) == set(rows) - union_doomed


def test_retention_keep_newest(metric_schema):
    store = HistoryStore(metric_schema)
    for i, ts in enumerate([5, 1, 9, 9, 2]):
        store.append(mk(metric_schema, f"h{i}", i, ts))
    rule = RetentionRule("metric", keep_newest=2, interval_ms=1)
    assert apply_retention(store, rule) == 3
    # the two newest: ts=9 (later arrival preferred on the tie)
    assert sorted(t.timestamp for t in store.rows()) == [9, 9]


def test_history_join_single_pair(demo_schemas):
    service, status = demo_schemas["service"], demo_schemas["servicestatus"]
    s_rows = [
        make_tuple(service, parse_insert(
            "INSERT INTO Service (uri, type, ts) VALUES ('u1', 'CE', 1)", service))
    ]
    st_rows = [
        make_tuple(status, parse_insert(
            "INSERT INTO ServiceStatus (uri, up, message, ts) VALUES ('u1', 1, 'ok', 2)", status)),
        make_tuple(status, parse_insert(
            "INSERT INTO ServiceStatus (uri, up, message, ts) VALUES ('u2', 0, 'down', 2)", status)),
    ]
    q = parse_select(
        "SELECT s.uri, st.up FROM Service s, ServiceStatus st WHERE s.uri = st.uri",
        demo_schemas,
    )
    rows = history_query(q, {"service": (service, s_rows), "servicestatus": (status, st_rows)})
    assert len(rows) == 1
    assert rows[0]["s.uri"] == "u1" and rows[0]["st.up"] == 1


def test_history_join_matches_nested_loop_oracle(demo_schemas):
    service, status = demo_schemas["service"], demo_schemas["servicestatus"]
    rng = random.Random(99)
    for _ in range(40):
        s_rows = [
            make_tuple(service, {"uri": f"u{rng.randint(0, 3)}",
                                 "type": rng.choice(["CE", "SE"]), "ts": rng.randint(0, 5)})
            for _ in range(rng.randint(0, 6))
        ]
        st_rows = [
            make_tuple(status, {"uri": f"u{rng.randint(0, 3)}", "up": rng.randint(0, 1),
                                "message": "m", "ts": rng.randint(0, 5)})
            for _ in range(rng.randint(0, 6))
        ]
        q = parse_select(
            "SELECT * FROM Service s, ServiceStatus st WHERE s.uri = st.uri AND st.up = 1",
            demo_schemas,
        )
        got = history_query(
            q, {"service": (service, s_rows), "servicestatus": (status, st_rows)}
        )
        # oracle: direct double loop over raw value tuples
        expect = []
        for s in s_rows:
            for st in st_rows:
                if s.values[0] == st.values[0] and st.values[1] == 1:
                    expect.append((s.values, st.values))
        got_pairs = [
            (
                (r["s.uri"], r["s.type"], r["s.ts"]),
                (r["st.uri"], r["st.up"], r["st.message"], r["st.ts"]),
            )
            for r in got
        ]
        assert sorted(got_pairs) == sorted(expect)


def test_history_store_persistence_round_trip(metric_schema, tmp_path):
    path = str(tmp_path / "metric.table")
    store = HistoryStore(metric_schema, path=path)
    rows = [mk(metric_schema, f"h{i}", i, i * 10) for i in range(5)]
    for t in rows:
        store.append(t)
    store.close()
    again = HistoryStore(metric_schema, path=path)
    assert again.rows() == rows


def test_latest_store_persistence_replays_merge(metric_schema, tmp_path):
    path = str(tmp_path / "latest.table")
    store = LatestStore(metric_schema, path=path)
    store.insert(mk(metric_schema, "h1", 1, 10))
    store.insert(mk(metric_schema, "h1", 2, 20))
    store.insert(mk(metric_schema, "h2", 3, 5))
    store.close()
    again = LatestStore(metric_schema, path=path)
    got = {t.values[0]: t for t in again.rows()}
    assert got["h1"].values[1] == 2 and got["h2"].values[1] == 3


def test_table_file_truncates_torn_tail(metric_schema, tmp_path):
    path = str(tmp_path / "metric.table")
    store = HistoryStore(metric_schema, path=path)
    rows = [mk(metric_schema, f"h{i}", i, i) for i in range(3)]
    for t in rows:
        store.append(t)
    store.close()
    with open(path, "ab") as f:
        f.write(b"\x00\x00\x10\x00garbage")  # length prefix promising more than exists
    again = HistoryStore(metric_schema, path=path)
    assert again.rows() == rows
    # the file is usable for appends after recovery
    again.append(mk(metric_schema, "h9", 9, 9))
    again.close()
    final = HistoryStore(metric_schema, path=path)
    assert len(final) == 4


def test_table_file_rejects_schema_change(metric_schema, tmp_path):
    path = str(tmp_path / "metric.table")
    HistoryStore(metric_schema, path=path).close()
    other = parse_create_table(
        "CREATE TABLE Metric (host STRING, value REAL, ts TIMESTAMP)", ["host"]
    )
    with pytest.raises(StorageError):
        HistoryStore(other, path=path)
