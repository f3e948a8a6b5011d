import random

import pytest

from rgma.clock import SimulatedClock
from rgma.datamodel import make_tuple
from rgma.errors import UnsupportedQueryClassError
from rgma.fabric import LocalFabric
from rgma.mediator import Mediator, classify, execute_latest, plan
from rgma.producers import ProducerInstance
from rgma.registry import Registry
from rgma.roles import ProducerType, QueryClass
from rgma.sqlcore import parse_create_table, parse_select, parse_view_predicate

LOAD_SQL = "CREATE TABLE NodeLoad (site STRING, node STRING, load REAL, ts TIMESTAMP)"


@pytest.fixture
def world():
    clock = SimulatedClock(0)
    registry = Registry("r0", clock=clock)
    schema = parse_create_table(LOAD_SQL, ["site", "node"])
    registry.declare_table(schema)
    fabric = LocalFabric(registry)
    mediator = Mediator(registry, fabric)
    return clock, registry, schema, fabric, mediator


def add_producer(world, cid, ptype, view=""):
    clock, registry, schema, fabric, mediator = world
    p = ProducerInstance(cid, ptype, [(schema, parse_view_predicate(view, schema))],
                         clock=clock)
    fabric.attach(p)
    return p


def insert(p, schema, site, node, load, ts):
    p.insert("nodeload", [make_tuple(schema, {"site": site, "node": node,
                                              "load": load, "ts": ts})])


def test_classify_rejects_continuous_join(demo_schemas):
    query = parse_select(
        "SELECT * FROM Service s, ServiceStatus st WHERE s.uri = st.uri", demo_schemas)
    with pytest.raises(UnsupportedQueryClassError):
        classify(query, QueryClass.CONTINUOUS)
    assert classify(query, QueryClass.HISTORY) is QueryClass.HISTORY


def test_plan_prunes_by_view(world):
    clock, registry, schema, fabric, mediator = world
    add_producer(world, "ral", ProducerType.LATEST, view="site = 'ral'")
    add_producer(world, "cern", ProducerType.LATEST, view="site = 'cern'")
    query = registry.parse_query("SELECT * FROM NodeLoad WHERE site = 'ral'")
    entries = registry.lookup(query, QueryClass.LATEST)
    p = plan(query, QueryClass.LATEST, entries, registry.tables())
    assert [t.component_id for t in p.targets] == ["ral"]
    assert p.merge_policy == "latest_per_key"


def test_plan_union_for_history(world):
    clock, registry, schema, fabric, mediator = world
    for i in range(3):
        add_producer(world, f"db{i}", ProducerType.DATABASE)
    query = registry.parse_query("SELECT * FROM NodeLoad")
    entries = registry.lookup(query, QueryClass.HISTORY)
    p = plan(query, QueryClass.HISTORY, entries, registry.tables())
    assert len(p.targets) == 3 and p.merge_policy == "union"


def test_execute_latest_max_timestamp_wins(world):
    clock, registry, schema, fabric, mediator = world
    a = add_producer(world, "a", ProducerType.LATEST)
    b = add_producer(world, "b", ProducerType.LATEST)
    insert(a, schema, "ral", "k", 0.1, 5)
    insert(b, schema, "ral", "k", 0.2, 9)
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.LATEST)
    assert len(result.rows) == 1
    assert result.rows[0].origin == "b" and result.rows[0].values[2] == 0.2


def test_execute_latest_tiebreak_smallest_producer_id(world):
    clock, registry, schema, fabric, mediator = world
    b = add_producer(world, "b", ProducerType.LATEST)
    a = add_producer(world, "a", ProducerType.LATEST)
    insert(b, schema, "ral", "k", 0.2, 7)
    insert(a, schema, "ral", "k", 0.1, 7)
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.LATEST)
    assert len(result.rows) == 1
    assert result.rows[0].origin == "a"


def test_execute_latest_matches_pooled_oracle(world):
    clock, registry, schema, fabric, mediator = world
    rng = random.Random(2024)
    producers = [add_producer(world, f"lp{i}", ProducerType.LATEST) for i in range(3)]
    pool = []
    for _ in range(200):
        p = rng.choice(producers)
        site, node = rng.choice(["ral", "cern"]), f"n{rng.randint(0, 3)}"
        load, ts = round(rng.random(), 3), rng.randint(0, 30)
        insert(p, schema, site, node, load, ts)
        pool.append((p.component_id, site, node, load, ts))
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.LATEST)
    # oracle: per producer keep per-key newest (arrival order), then pool and
    # keep global newest with smallest producer id on ties
    per_producer = {}
    for cid, site, node, load, ts in pool:
        cur = per_producer.get((cid, site, node))
        if cur is None or ts >= cur[1]:
            per_producer[(cid, site, node)] = (load, ts)
    best = {}
    for (cid, site, node), (load, ts) in per_producer.items():
        cur = best.get((site, node))
        if cur is None or ts > cur[1] or (ts == cur[1] and cid < cur[2]):
            best[(site, node)] = (load, ts, cid)
    got = {(r.values[0], r.values[1]): (r.values[2], r.values[3], r.origin)
           for r in result.rows}
    assert got == best


def test_execute_history_union_retains_duplicates(world):
    clock, registry, schema, fabric, mediator = world
    for cid in ("db1", "db2"):
        p = add_producer(world, cid, ProducerType.DATABASE)
        insert(p, schema, "ral", "n1", 0.5, 1)
        insert(p, schema, "ral", "n2", 0.6, 2)
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.HISTORY)
    assert len(result.rows) == 4


def test_no_producers_signal(world):
    clock, registry, schema, fabric, mediator = world
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.LATEST)
    assert result.no_producers and result.rows == []


def test_partial_failure_returns_survivors(world):
    clock, registry, schema, fabric, mediator = world
    a = add_producer(world, "a", ProducerType.LATEST)
    b = add_producer(world, "b", ProducerType.LATEST)
    insert(a, schema, "ral", "n1", 0.1, 1)
    insert(b, schema, "cern", "n2", 0.2, 2)
    fabric.kill("b")
    result = mediator.query_once("SELECT * FROM NodeLoad", QueryClass.LATEST)
    assert [r.origin for r in result.rows] == ["a"]
    assert result.failures and result.failures[0][0] == "b"


def test_continuous_session_orders_and_filters(world):
    clock, registry, schema, fabric, mediator = world
    p = add_producer(world, "sp", ProducerType.STREAM)
    got = []
    session = mediator.query_continuous(
        "SELECT * FROM NodeLoad WHERE load > 0.5", got.append)
    for ts in range(10):
        insert(p, schema, "ral", "n1", 0.1 * ts, ts)
    mediator.close_session(session)
    assert [r.values[3] for r in got] == [6, 7, 8, 9]
    assert all(r.origin == "sp" for r in got)


def test_continuous_projection_applies(world):
    clock, registry, schema, fabric, mediator = world
    p = add_producer(world, "sp", ProducerType.STREAM)
    got = []
    session = mediator.query_continuous("SELECT node, load FROM NodeLoad", got.append)
    assert session.columns == ["node", "load"]
    insert(p, schema, "ral", "n1", 0.5, 1)
    assert got[0].values == ("n1", 0.5)
    mediator.close_session(session)


def test_new_producer_joins_live_session(world):
    clock, registry, schema, fabric, mediator = world
    got = []
    session = mediator.query_continuous(
        "SELECT * FROM NodeLoad WHERE site = 'ral'", got.append)
    assert session.target_ids() == []
    p = add_producer(world, "late", ProducerType.STREAM, view="site = 'ral'")
    assert session.target_ids() == ["late"]
    insert(p, schema, "ral", "n1", 0.9, 1)
    assert len(got) == 1
    # a non-matching producer does not join
    add_producer(world, "other", ProducerType.STREAM, view="site = 'cern'")
    assert session.target_ids() == ["late"]
    mediator.close_session(session)


def test_consumer_before_producer_liveness(world):
    # the notification path alone is enough to start data flowing
    clock, registry, schema, fabric, mediator = world
    got = []
    mediator.query_continuous("SELECT * FROM NodeLoad", got.append)
    p = add_producer(world, "sp", ProducerType.STREAM)
    insert(p, schema, "ral", "n1", 0.5, 1)
    assert len(got) == 1


def test_per_producer_order_preserved_under_interleaving(world):
    clock, registry, schema, fabric, mediator = world
    producers = [add_producer(world, f"sp{i}", ProducerType.STREAM) for i in range(3)]
    got = []
    session = mediator.query_continuous("SELECT * FROM NodeLoad", got.append)
    rng = random.Random(5)
    seqs = {p.component_id: 0 for p in producers}
    for _ in range(100):
        p = rng.choice(producers)
        seqs[p.component_id] += 1
        insert(p, schema, "ral", p.component_id, float(seqs[p.component_id]), seqs[p.component_id])
    per_origin = {}
    for r in got:
        per_origin.setdefault(r.origin, []).append(r.values[3])
    for cid, ts_list in per_origin.items():
        assert ts_list == sorted(ts_list), f"{cid} out of order"
    mediator.close_session(session)


def test_backlog_rows_flagged_in_session(world):
    clock, registry, schema, fabric, mediator = world
    p = add_producer(world, "sp", ProducerType.STREAM)
    insert(p, schema, "ral", "n1", 0.5, 1)
    got = []
    mediator.query_continuous("SELECT * FROM NodeLoad", got.append)
    assert got and got[0].backlog is True


def test_plan_matches_lookup_oracle_randomized(world):
    from rgma.roles import CAPABILITIES
    from rgma.sqlcore import ViewPredicate, relevant

    clock, registry, schema, fabric, mediator = world
    rng = random.Random(860)
    sites = ["s0", "s1", "s2"]
    views = {}
    for i in range(8):
        ptype = rng.choice([ProducerType.STREAM, ProducerType.DATABASE, ProducerType.LATEST])
        atoms = (("site", rng.choice(sites)),) if rng.random() < 0.7 else ()
        cid = f"p{i}"
        p = ProducerInstance(cid, ptype, [(schema, ViewPredicate(atoms))], clock=clock)
        fabric.attach(p)
        views[cid] = (ptype, ViewPredicate(atoms))
    for qclass in QueryClass:
        for cond in ("", "WHERE site = 's0'", "WHERE site = 's1' OR site = 's2'"):
            sql = f"SELECT * FROM NodeLoad {cond}".strip()
            query = registry.parse_query(sql)
            entries = registry.lookup(query, qclass)
            p_ = plan(query, qclass, entries, registry.tables())
            expect = {
                cid for cid, (ptype, view) in views.items()
                if ptype in CAPABILITIES[qclass] and relevant(view, query, "nodeload", schema)
            }
            assert {t.component_id for t in p_.targets} == expect
