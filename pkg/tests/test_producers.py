import random

import pytest

from rgma.clock import SimulatedClock
from rgma.datamodel import CleanupRule, RetentionRule, make_tuple
from rgma.errors import (
    NotInsertableError,
    SchemaError,
    UnsupportedProducerTypeError,
    UnsupportedQueryClassError,
    ViewViolationError,
)
from rgma.producers import ProducerInstance
from rgma.roles import ProducerType, QueryClass
from rgma.sqlcore import (
    ViewPredicate,
    parse_condition_text,
    parse_create_table,
    parse_select,
    parse_view_predicate,
)

SCHEMA_SQL = "CREATE TABLE NodeLoad (site STRING, node STRING, load REAL, ts TIMESTAMP)"


@pytest.fixture
def schema():
    return parse_create_table(SCHEMA_SQL, ["site", "node"])


def make_producer(schema, ptype, view="", tmp_path=None, **kw):
    v = parse_view_predicate(view, schema)
    if ptype is ProducerType.RESILIENT_STREAM and "wal_path" not in kw:
        kw["wal_path"] = str(tmp_path / "producer.wal")
    return ProducerInstance(f"{ptype.value}-p", ptype, [(schema, v)],
                            clock=SimulatedClock(0), **kw)


def row(schema, site, node, load, ts):
    return make_tuple(schema, {"site": site, "node": node, "load": load, "ts": ts})


def q(schema, sql):
    return parse_select(sql, {"nodeload": schema})


def test_latest_producer_keeps_newest(schema):
    p = make_producer(schema, ProducerType.LATEST)
    p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 1)])
    p.insert("nodeload", [row(schema, "ral", "n1", 0.9, 2)])
    rows = p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)
    assert len(rows) == 1 and rows[0]["load"] == 0.9 and rows[0]["ts"] == 2


def test_history_producer_keeps_everything(schema):
    p = make_producer(schema, ProducerType.DATABASE)
    for ts in (1, 2, 3):
        p.insert("nodeload", [row(schema, "ral", "n1", 0.1, ts)])
    rows = p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.HISTORY)
    assert len(rows) == 3


def test_stream_subscription_filters(schema):
    p = make_producer(schema, ProducerType.STREAM)
    got = []
    p.subscribe(q(schema, "SELECT * FROM NodeLoad WHERE load > 0.9"),
                sink=lambda table, rows, backlog: got.extend(rows))
    p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 1)])
    assert got == []
    p.insert("nodeload", [row(schema, "ral", "n1", 0.95, 2)])
    assert len(got) == 1 and got[0]["load"] == 0.95


def test_continuous_filter_order(schema):
    p = make_producer(schema, ProducerType.STREAM)
    got = []
    p.subscribe(q(schema, "SELECT * FROM NodeLoad WHERE load >= 0.5"),
                sink=lambda table, rows, backlog: got.extend(r["ts"] for r in rows))
    loads = [0.1, 0.5, 0.2, 0.9, 0.3]
    for ts, load in enumerate(loads):
        p.insert("nodeload", [row(schema, "ral", "n1", load, ts)])
    assert got == [1, 3]


def test_backlog_delivered_first_and_flagged(schema):
    p = make_producer(schema, ProducerType.STREAM)
    p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 1)])
    p.insert("nodeload", [row(schema, "ral", "n2", 0.6, 2)])
    events = []
    p.subscribe(q(schema, "SELECT * FROM NodeLoad"),
                sink=lambda table, rows, backlog: events.append((backlog, [r["ts"] for r in rows])))
    p.insert("nodeload", [row(schema, "ral", "n3", 0.7, 3)])
    assert events[0] == (True, [1, 2])
    assert events[1] == (False, [3])


def test_ring_capacity_evicts_oldest(schema):
    p = make_producer(schema, ProducerType.STREAM, ring_capacity=10)
    for ts in range(15):
        p.insert("nodeload", [row(schema, "ral", "n1", 0.1, ts)])
    got = []
    p.subscribe(q(schema, "SELECT * FROM NodeLoad"),
                sink=lambda table, rows, backlog: got.extend(r["ts"] for r in rows))
    assert got == list(range(5, 15))


def test_view_violation_rejected(schema):
    p = make_producer(schema, ProducerType.STREAM, view="site = 'ral'")
    p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 1)])
    with pytest.raises(ViewViolationError):
        p.insert("nodeload", [row(schema, "cern", "n1", 0.5, 2)])


def test_canonical_producer_not_insertable(schema):
    p = ProducerInstance(
        "canon", ProducerType.CANONICAL, [(schema, ViewPredicate.universal())],
        handler=lambda query, qclass: [], answers=frozenset({QueryClass.LATEST}),
    )
    with pytest.raises(NotInsertableError):
        p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 1)])


def test_canonical_producer_answers_via_handler(schema):
    def handler(query, qclass):
        return [{"site": "ral", "node": "n1", "load": 0.5, "ts": 7}]

    p = ProducerInstance(
        "canon", ProducerType.CANONICAL, [(schema, ViewPredicate.universal())],
        handler=handler, answers=frozenset({QueryClass.LATEST}),
    )
    rows = p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)
    assert rows[0]["ts"] == 7
    with pytest.raises(UnsupportedQueryClassError):
        p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.HISTORY)


def test_canonical_handler_rows_are_type_checked(schema):
    p = ProducerInstance(
        "canon", ProducerType.CANONICAL, [(schema, ViewPredicate.universal())],
        handler=lambda query, qclass: [{"site": "ral", "node": "n1", "load": "bad", "ts": 1}],
        answers=frozenset({QueryClass.LATEST}),
    )
    from rgma.errors import TypeMismatchError

    with pytest.raises(TypeMismatchError):
        p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)


def test_capability_matrix_enforced(schema):
    stream = make_producer(schema, ProducerType.STREAM)
    with pytest.raises(UnsupportedQueryClassError):
        stream.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)
    with pytest.raises(UnsupportedQueryClassError):
        stream.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.HISTORY)
    latest = make_producer(schema, ProducerType.LATEST)
    with pytest.raises(UnsupportedQueryClassError):
        latest.subscribe(q(schema, "SELECT * FROM NodeLoad"), sink=lambda *a: None)


def test_insertable_contract_identical_across_types(schema, tmp_path):
    tuples = [row(schema, "ral", "n1", 0.5, 1)]
    for ptype in (ProducerType.STREAM, ProducerType.RESILIENT_STREAM,
                  ProducerType.DATABASE, ProducerType.LATEST):
        p = make_producer(schema, ptype, tmp_path=tmp_path)
        assert p.insert("nodeload", tuples) == 1
        p.close()


def test_resilient_replays_acked_tuples_after_crash(schema, tmp_path):
    wal = str(tmp_path / "p.wal")
    p1 = ProducerInstance("rp", ProducerType.RESILIENT_STREAM,
                          [(schema, ViewPredicate.universal())], wal_path=wal)
    acked = []
    for ts in range(20):
        t = row(schema, "ral", f"n{ts % 3}", 0.1 * (ts % 7), ts)
        p1.insert("nodeload", [t])
        acked.append(t)
    # no clean close: simulate a crash by just abandoning p1
    p2 = ProducerInstance("rp", ProducerType.RESILIENT_STREAM,
                          [(schema, ViewPredicate.universal())], wal_path=wal)
    got = []
    p2.subscribe(q(schema, "SELECT * FROM NodeLoad"),
                 sink=lambda table, rows, backlog: got.extend(rows))
    assert [r["ts"] for r in got] == [t.timestamp for t in acked]


def test_resilient_wal_truncates_torn_tail(schema, tmp_path):
    wal = str(tmp_path / "p.wal")
    p1 = ProducerInstance("rp", ProducerType.RESILIENT_STREAM,
                          [(schema, ViewPredicate.universal())], wal_path=wal)
    for ts in range(5):
        p1.insert("nodeload", [row(schema, "ral", "n1", 0.5, ts)])
    p1.close()
    with open(wal, "ab") as f:
        f.write(b"\x00\x00\xff\xffhalf a frame")
    p2 = ProducerInstance("rp", ProducerType.RESILIENT_STREAM,
                          [(schema, ViewPredicate.universal())], wal_path=wal)
    got = []
    p2.subscribe(q(schema, "SELECT * FROM NodeLoad"),
                 sink=lambda table, rows, backlog: got.extend(rows))
    assert [r["ts"] for r in got] == list(range(5))
    p2.insert("nodeload", [row(schema, "ral", "n1", 0.5, 99)])


def test_stream_and_resilient_same_subscription_output(schema, tmp_path):
    rng = random.Random(11)
    inserts = [row(schema, "ral", f"n{rng.randint(0, 2)}", round(rng.random(), 3), ts)
               for ts in range(40)]
    outputs = []
    for ptype in (ProducerType.STREAM, ProducerType.RESILIENT_STREAM):
        p = make_producer(schema, ptype, tmp_path=tmp_path)
        got = []
        p.subscribe(q(schema, "SELECT * FROM NodeLoad WHERE load > 0.5"),
                    sink=lambda table, rows, backlog: got.extend(rows))
        for t in inserts:
            p.insert("nodeload", [t])
        outputs.append(got)
        p.close()
    assert outputs[0] == outputs[1]


def test_latest_query_equals_replay_oracle(schema):
    rng = random.Random(314)
    for _ in range(50):
        p = make_producer(schema, ProducerType.LATEST)
        log = []
        for _ in range(rng.randint(0, 40)):
            t = row(schema, rng.choice(["ral", "cern"]), f"n{rng.randint(0, 2)}",
                    round(rng.random(), 3), rng.randint(0, 9))
            log.append(t)
            p.insert("nodeload", [t])
        rows = p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)
        oracle = {}
        for t in log:
            key = (t.values[0], t.values[1])
            if key not in oracle or t.timestamp >= oracle[key].timestamp:
                oracle[key] = t
        got = {(r["site"], r["node"]): (r["load"], r["ts"]) for r in rows}
        want = {k: (t.values[2], t.timestamp) for k, t in oracle.items()}
        assert got == want


def test_cleanup_scheduling(schema):
    clock = SimulatedClock(0)
    p = ProducerInstance("db", ProducerType.DATABASE,
                         [(schema, ViewPredicate.universal())], clock=clock)
    p.insert("nodeload", [row(schema, "ral", "n1", 0.5, 0)])
    rule = CleanupRule(
        "nodeload",
        parse_condition_text("ts < NOW - 1000", schema, allow_now=True),
        interval_ms=500,
    )
    p.schedule_cleanup(rule)
    assert p.run_due_cleanup(clock.now_ms()) == 0  # not due yet
    clock.advance(2000)
    assert p.run_due_cleanup(clock.now_ms()) == 1
    assert p.store_rows("nodeload") == []


def test_two_rules_fire_independently(schema):
    clock = SimulatedClock(0)
    p = ProducerInstance("db", ProducerType.DATABASE,
                         [(schema, ViewPredicate.universal())], clock=clock)
    for ts in range(10):
        p.insert("nodeload", [row(schema, "ral", f"n{ts}", ts / 10.0, ts)])
    p.schedule_cleanup(CleanupRule(
        "nodeload", parse_condition_text("ts < 3", schema), interval_ms=100))
    p.schedule_cleanup(CleanupRule(
        "nodeload", parse_condition_text("load > 0.7", schema), interval_ms=100))
    clock.advance(150)
    p.run_due_cleanup()
    survivors = {t.timestamp for t in p.store_rows("nodeload")}
    assert survivors == {ts for ts in range(10) if not (ts < 3 or ts / 10.0 > 0.7)}


def test_retention_rule_on_schedule(schema):
    clock = SimulatedClock(0)
    p = ProducerInstance("db", ProducerType.DATABASE,
                         [(schema, ViewPredicate.universal())], clock=clock)
    for ts in range(10):
        p.insert("nodeload", [row(schema, "ral", f"n{ts}", 0.5, ts)])
    p.schedule_cleanup(RetentionRule("nodeload", keep_newest=4, interval_ms=100))
    clock.advance(101)
    assert p.run_due_cleanup() == 6
    assert sorted(t.timestamp for t in p.store_rows("nodeload")) == [6, 7, 8, 9]


def test_cleanup_rejected_on_stream(schema):
    p = make_producer(schema, ProducerType.STREAM)
    rule = CleanupRule("nodeload", parse_condition_text("ts < 5", schema), interval_ms=100)
    with pytest.raises(UnsupportedProducerTypeError):
        p.schedule_cleanup(rule)


def test_multi_table_database_producer_joins(demo_schemas):
    service = demo_schemas["service"]
    status = demo_schemas["servicestatus"]
    p = ProducerInstance("db", ProducerType.DATABASE, [
        (service, ViewPredicate.universal()), (status, ViewPredicate.universal()),
    ])
    p.insert("service", [make_tuple(service, {"uri": "u1", "type": "ce", "ts": 1})])
    p.insert("servicestatus", [make_tuple(status, {"uri": "u1", "up": 1, "message": "", "ts": 2})])
    query = parse_select(
        "SELECT s.uri, st.up FROM Service s, ServiceStatus st WHERE s.uri = st.uri",
        demo_schemas)
    rows = p.answer_query(query, QueryClass.HISTORY)
    assert len(rows) == 1
    assert rows[0]["s.uri"] == "u1" and rows[0]["st.up"] == 1


def test_insert_sql_path(schema):
    p = make_producer(schema, ProducerType.LATEST)
    p.insert_sql("INSERT INTO NodeLoad (site, node, load, ts) VALUES ('ral', 'n1', 0.25, 5)")
    rows = p.answer_query(q(schema, "SELECT * FROM NodeLoad"), QueryClass.LATEST)
    assert rows[0]["load"] == 0.25
    with pytest.raises(SchemaError):
        p.insert_sql("INSERT INTO Other (a) VALUES (1)")
