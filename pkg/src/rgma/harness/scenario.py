"""Scenario runner: builds a whole topology in one process and drives it on a
simulated or wall clock through a deterministic event loop.

Components are the real objects (registries, producer instances, mediator
sessions, archivers) wired over the in-process fabric. Under the simulated
clock every run with the same seed is bit-reproducible; under the wall clock
the same loop sleeps between events, which is the desk-scale load mode.

Within one timestamp events fire in a fixed order: faults, then heartbeats
(an arrival at the deadline instant still counts), publishes, registry syncs,
expiry sweeps and finally samples.
"""

from __future__ import annotations

import heapq
import json
import random
import time
from dataclasses import dataclass, field

import yaml

from rgma.archiver import Archiver, ArchiverSpec
from rgma.clock import SimulatedClock, WallClock
from rgma.datamodel import make_tuple
from rgma.errors import RgmaError, ScenarioError, UnknownComponentError
from rgma.fabric import LocalFabric
from rgma.harness.metrics import (
    MONITORING_KEY,
    MONITORING_SQL,
    SelfMonitoringRecord,
)
from rgma.mediator import Mediator
from rgma.producers import ProducerInstance
from rgma.registry import Registry
from rgma.roles import INSERTABLE, ProducerType, QueryClass
from rgma.sqlcore import ColumnType, parse_create_table, parse_view_predicate
from rgma.transport import heartbeat_schedule

MONITOR_ID = "monitor"


@dataclass
class ProducerCfg:
    id: str
    type: ProducerType
    table: str
    view: str = ""
    rate_per_s: float = 1.0
    seed: int = 0
    interval_ms: int = 10_000
    start_ms: int = 0
    ring_capacity: int = 1024
    fixed: dict = field(default_factory=dict)
    key_pool: int = 3


@dataclass
class ArchiverCfg:
    id: str
    tables: list[str]
    sink: str
    interval_ms: int = 10_000


@dataclass
class ConsumerCfg:
    id: str
    query: str
    query_class: QueryClass
    registry: int = 0
    interval_ms: int = 10_000
    start_ms: int = 0


@dataclass
class FaultCfg:
    at_ms: int
    action: str  # kill | restart | drop_link | heal_link | pause_sink | resume_sink
    target: str = ""
    peer: str = ""


@dataclass
class Scenario:
    seed: int = 0
    duration_ms: int = 10_000
    registries: int = 1
    sync_period_ms: int = 2_000
    sweep_period_ms: int = 1_000
    sample_period_ms: int = 1_000
    tables: list[tuple[str, list[str]]] = field(default_factory=list)
    producers: list[ProducerCfg] = field(default_factory=list)
    archivers: list[ArchiverCfg] = field(default_factory=list)
    consumers: list[ConsumerCfg] = field(default_factory=list)
    faults: list[FaultCfg] = field(default_factory=list)
    work_dir: str | None = None  # resilient producer logs live here

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        raw = yaml.safe_load(text) or {}
        sc = cls(
            seed=raw.get("seed", 0),
            duration_ms=raw.get("duration_ms", 10_000),
            registries=raw.get("registries", {}).get("count", 1),
            sync_period_ms=raw.get("registries", {}).get("sync_period_ms", 2_000),
            sweep_period_ms=raw.get("sweep_period_ms", 1_000),
            sample_period_ms=raw.get("sample_period_ms", 1_000),
            tables=[(t["create"], t["key"]) for t in raw.get("tables", [])],
        )
        for p in raw.get("producers", []):
            sc.producers.append(ProducerCfg(
                id=p["id"], type=ProducerType(p["type"]), table=p["table"],
                view=p.get("view", ""), rate_per_s=p.get("rate_per_s", 1.0),
                seed=p.get("seed", 0), interval_ms=p.get("interval_ms", 10_000),
                start_ms=p.get("start_ms", 0),
                ring_capacity=p.get("ring_capacity", 1024),
                fixed=p.get("fixed", {}), key_pool=p.get("key_pool", 3),
            ))
        for a in raw.get("archivers", []):
            sc.archivers.append(ArchiverCfg(
                id=a["id"], tables=list(a["tables"]), sink=a["sink"],
                interval_ms=a.get("interval_ms", 10_000),
            ))
        for c in raw.get("consumers", []):
            sc.consumers.append(ConsumerCfg(
                id=c["id"], query=c["query"], query_class=QueryClass(c["class"]),
                registry=c.get("registry", 0), interval_ms=c.get("interval_ms", 10_000),
                start_ms=c.get("start_ms", 0),
            ))
        for f in raw.get("faults", []):
            sc.faults.append(FaultCfg(
                at_ms=f["at_ms"], action=f["action"], target=f.get("target", ""),
                peer=f.get("peer", ""),
            ))
        return sc

    def validate(self):
        declared = set()
        for sql, key in self.tables:
            declared.add(parse_create_table(sql, key).name)
        declared.add("monitoring")
        ids = {MONITOR_ID}
        for p in self.producers:
            if p.table.lower() not in declared:
                raise ScenarioError(f"producer {p.id} references undeclared table {p.table}")
            if p.id in ids:
                raise ScenarioError(f"duplicate component id {p.id}")
            ids.add(p.id)
        producer_ids = {p.id for p in self.producers}
        for a in self.archivers:
            if a.sink not in producer_ids:
                raise ScenarioError(f"archiver {a.id} wires unknown sink {a.sink}")
            sink_cfg = next(p for p in self.producers if p.id == a.sink)
            if sink_cfg.start_ms != 0:
                raise ScenarioError(f"archiver sink {a.sink} must start at t=0")
            for t in a.tables:
                if t.lower() not in declared:
                    raise ScenarioError(f"archiver {a.id} archives undeclared table {t}")
            if a.id in ids:
                raise ScenarioError(f"duplicate component id {a.id}")
            ids.add(a.id)
        for c in self.consumers:
            if not (0 <= c.registry < self.registries):
                raise ScenarioError(f"consumer {c.id} targets unknown registry {c.registry}")
            if c.id in ids:
                raise ScenarioError(f"duplicate component id {c.id}")
            ids.add(c.id)
        for fault in self.faults:
            if not (0 <= fault.at_ms <= self.duration_ms):
                raise ScenarioError(f"fault at {fault.at_ms}ms is outside the run")
            if fault.action in ("kill", "restart", "pause_sink", "resume_sink"):
                if fault.target not in ids:
                    raise ScenarioError(f"fault targets unknown component {fault.target}")
            elif fault.action in ("drop_link", "heal_link"):
                pass
            else:
                raise ScenarioError(f"unknown fault action {fault.action!r}")


@dataclass
class ScenarioResult:
    records: list[SelfMonitoringRecord] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    deliveries: dict = field(default_factory=dict)  # consumer -> [(ms, values, origin, backlog)]
    consumer_meta: dict = field(default_factory=dict)
    acked: dict = field(default_factory=dict)  # producer -> [values]
    one_shot: dict = field(default_factory=dict)  # consumer -> rows

    def canonical(self) -> bytes:
        blob = {
            "records": [(r.component, r.metric, r.value, r.ts) for r in self.records],
            "snapshots": self.snapshots,
            "deliveries": {
                cid: [[ms, list(v), origin, backlog] for ms, v, origin, backlog in rows]
                for cid, rows in self.deliveries.items()
            },
            "consumer_meta": self.consumer_meta,
            "acked": {cid: [list(v) for v in rows] for cid, rows in self.acked.items()},
            "one_shot": {cid: [list(v) for v in rows] for cid, rows in self.one_shot.items()},
        }
        return json.dumps(blob, sort_keys=True).encode("utf-8")


class _Generator:
    """Deterministic tuple source for one producer."""

    def __init__(self, cfg: ProducerCfg, schema, view):
        self.cfg = cfg
        self.schema = schema
        self.rng = random.Random(f"{cfg.seed}:{cfg.id}")
        self.bound = dict(view.bindings())
        self.bound.update(cfg.fixed)

    def next_binding(self, now: int) -> dict:
        binding = {}
        for col in self.schema.columns:
            if col.name == self.schema.timestamp_column:
                binding[col.name] = now
            elif col.name in self.bound:
                binding[col.name] = self.bound[col.name]
            elif col.name in self.schema.defining_key:
                n = self.rng.randrange(self.cfg.key_pool)
                binding[col.name] = (
                    f"{col.name}-{n}" if col.type is ColumnType.STRING else n
                )
            elif col.type is ColumnType.REAL:
                binding[col.name] = round(self.rng.random(), 6)
            elif col.type is ColumnType.INT:
                binding[col.name] = self.rng.randrange(1000)
            elif col.type is ColumnType.STRING:
                binding[col.name] = f"v{self.rng.randrange(100)}"
            else:
                binding[col.name] = now
        return binding


# event priorities at one timestamp (see module docstring)
_PRI_FAULT, _PRI_HEARTBEAT, _PRI_PUBLISH, _PRI_SYNC, _PRI_SWEEP, _PRI_SAMPLE, _PRI_END = range(7)


class _Run:
    def __init__(self, scenario: Scenario, mode: str):
        if mode not in ("simulated", "wall"):
            raise ScenarioError(f"unknown clock mode {mode!r}")
        scenario.validate()
        self.sc = scenario
        self.mode = mode
        self.clock = SimulatedClock(0) if mode == "simulated" else WallClock()
        self.start_wall = time.monotonic()
        self.result = ScenarioResult()
        self.events: list = []
        self.seq = 0

        self.registries = [
            Registry(f"r{i}", clock=self.clock) for i in range(scenario.registries)
        ]
        self.fabric = LocalFabric(self.registries[0])
        for reg in self.registries[1:]:
            reg.notifier = self.fabric._dispatch_notification
            self.fabric.attach_registry(reg)
        self.schemas = {}
        for sql, key in scenario.tables:
            schema = parse_create_table(sql, key)
            self.schemas[schema.name] = schema
        mon = parse_create_table(MONITORING_SQL, MONITORING_KEY)
        self.schemas[mon.name] = mon
        for reg in self.registries:
            for schema in self.schemas.values():
                reg.declare_table(schema)

        self.producers: dict[str, ProducerInstance] = {}
        self.producer_cfg: dict[str, ProducerCfg] = {}
        self.generators: dict[str, _Generator] = {}
        self.masters: dict[str, Registry] = {}
        self.down: set[str] = set()
        self.dropped_links: set[frozenset] = set()
        self.archivers: dict[str, Archiver] = {}
        self.sessions: dict[str, object] = {}
        self.mediators: dict[str, Mediator] = {}

    # --- setup ----------------------------------------------------------------

    def _master_for(self, index: int) -> Registry:
        return self.registries[index % len(self.registries)]

    def _build_producer(self, cfg: ProducerCfg, index: int) -> ProducerInstance:
        schema = self.schemas[cfg.table.lower()]
        view = parse_view_predicate(cfg.view, schema)
        kwargs = {}
        if cfg.type is ProducerType.RESILIENT_STREAM:
            if self.sc.work_dir is None:
                raise ScenarioError("resilient producers need a scenario work_dir")
            kwargs["wal_path"] = f"{self.sc.work_dir}/{cfg.id}.wal"
        p = ProducerInstance(
            cfg.id, cfg.type, [(schema, view)], clock=self.clock,
            ring_capacity=cfg.ring_capacity, **kwargs,
        )
        master = self._master_for(index)
        self.masters[cfg.id] = master
        self.producers[cfg.id] = p
        self.producer_cfg[cfg.id] = cfg
        self.generators[cfg.id] = _Generator(cfg, schema, view)
        self.fabric.attach(p, register=False)
        for table in p.tables():
            master.register_producer(
                component_id=cfg.id, producer_type=cfg.type, table=table,
                view=p.view_for(table), termination_interval_ms=cfg.interval_ms,
            )
        return p

    def setup(self):
        # the monitoring store is itself an ordinary history producer
        mon_schema = self.schemas["monitoring"]
        monitor = ProducerInstance(
            MONITOR_ID, ProducerType.DATABASE,
            [(mon_schema, parse_view_predicate("", mon_schema))], clock=self.clock,
        )
        self.producers[MONITOR_ID] = monitor
        self.masters[MONITOR_ID] = self.registries[0]
        self.fabric.attach(monitor, termination_interval_ms=3600_000)

        for i, cfg in enumerate(self.sc.producers):
            if cfg.start_ms == 0:
                self._build_producer(cfg, i)
            else:
                self._push(cfg.start_ms, _PRI_FAULT, ("start_producer", cfg.id, i))
        for cfg_a in self.sc.archivers:
            sink = self.producers[cfg_a.sink]
            mediator = Mediator(self.masters[cfg_a.sink], self.fabric)
            arch = Archiver(
                cfg_a.id, ArchiverSpec([(t, None) for t in cfg_a.tables], cfg_a.sink),
                mediator, sink, clock=self.clock, threaded=(self.mode == "wall"),
            ).start()
            self.archivers[cfg_a.id] = arch
            self.mediators[cfg_a.id] = mediator
        for cfg_c in self.sc.consumers:
            if cfg_c.start_ms == 0:
                self._start_consumer(cfg_c)
            else:
                self._push(cfg_c.start_ms, _PRI_FAULT, ("start_consumer", cfg_c.id))

    def _start_consumer(self, cfg: ConsumerCfg):
        mediator = Mediator(self.registries[cfg.registry], self.fabric,
                            session_interval_ms=cfg.interval_ms)
        self.mediators[cfg.id] = mediator
        self.result.deliveries[cfg.id] = []
        if cfg.query_class is QueryClass.CONTINUOUS:
            def sink(row, cid=cfg.id):
                self.result.deliveries[cid].append(
                    (self.clock.now_ms(), tuple(row.values), row.origin, row.backlog))

            session = mediator.query_continuous(cfg.query, sink, component_id=cfg.id)
            self.sessions[cfg.id] = session
            self.result.consumer_meta[cfg.id] = {
                "initial_targets": len(session.target_ids()),
                "first_delivery_ms": None,
            }
        else:
            self.result.consumer_meta[cfg.id] = {"runs_at_end": True}

    # --- event plumbing ----------------------------------------------------------

    def _push(self, at_ms: int, priority: int, payload):
        self.seq += 1
        heapq.heappush(self.events, (at_ms, priority, self.seq, payload))

    def _schedule_initial(self):
        for cfg in self.sc.producers:
            if cfg.rate_per_s <= 0:
                continue  # sinks and passive producers publish nothing
            period = max(1, int(1000 / cfg.rate_per_s))
            self._push(cfg.start_ms + period, _PRI_PUBLISH, ("publish", cfg.id, period))
        for p in self.sc.producers:
            delay = heartbeat_schedule(p.interval_ms)
            self._push(p.start_ms + delay, _PRI_HEARTBEAT, ("heartbeat", p.id, delay))
        for cfg_a in self.sc.archivers:
            delay = heartbeat_schedule(cfg_a.interval_ms)
            for table in cfg_a.tables:
                self._push(delay, _PRI_HEARTBEAT,
                           ("heartbeat", f"{cfg_a.id}.{table}", delay))
        for cfg_c in self.sc.consumers:
            if cfg_c.query_class is QueryClass.CONTINUOUS:
                delay = heartbeat_schedule(cfg_c.interval_ms)
                self._push(cfg_c.start_ms + delay, _PRI_HEARTBEAT,
                           ("heartbeat", cfg_c.id, delay))
        if len(self.registries) > 1:
            self._push(self.sc.sync_period_ms, _PRI_SYNC, ("sync", self.sc.sync_period_ms))
        self._push(self.sc.sweep_period_ms, _PRI_SWEEP, ("sweep", self.sc.sweep_period_ms))
        self._push(self.sc.sample_period_ms, _PRI_SAMPLE, ("sample", self.sc.sample_period_ms))
        for fault in self.sc.faults:
            self._push(fault.at_ms, _PRI_FAULT, ("fault", fault))
        self._push(self.sc.duration_ms, _PRI_END, ("end",))

    # --- event handlers ------------------------------------------------------------

    def _heartbeat_master(self, cid: str) -> Registry | None:
        master = self.masters.get(cid)
        if master is None:
            # archiver/consumer sessions registered through their mediator
            for name, mediator in self.mediators.items():
                if cid == name or cid.startswith(name + "."):
                    return mediator.registry
        return master

    def _handle_heartbeat(self, cid: str, delay: int, now: int):
        base = cid.split(".", 1)[0]
        if base in self.down or cid in self.down:
            return  # dead components stop heartbeating until restarted
        master = self._heartbeat_master(cid)
        if master is None:
            return
        if frozenset({base, master.registry_id}) in self.dropped_links:
            self._push(now + delay, _PRI_HEARTBEAT, ("heartbeat", cid, delay))
            return
        try:
            master.heartbeat(cid, now=now)
        except UnknownComponentError:
            pass  # expired: a real client would re-register
        self._push(now + delay, _PRI_HEARTBEAT, ("heartbeat", cid, delay))

    def _handle_publish(self, pid: str, period: int, now: int):
        self._push(now + period, _PRI_PUBLISH, ("publish", pid, period))
        if pid in self.down or now > self.sc.duration_ms:
            return
        producer = self.producers[pid]
        gen = self.generators[pid]
        schema = self.schemas[self.producer_cfg[pid].table.lower()]
        started = time.perf_counter()
        t = make_tuple(schema, gen.next_binding(now))
        try:
            producer.insert(t.table, [t])
        except RgmaError:
            return
        self.result.acked.setdefault(pid, []).append(tuple(t.values))
        if self.mode == "wall":
            self._response_samples.setdefault(pid, []).append(
                (time.perf_counter() - started) * 1000.0)

    def _handle_sync(self, period: int, now: int):
        self._push(now + period, _PRI_SYNC, ("sync", period))
        for a in self.registries:
            for b in self.registries:
                if a is b:
                    continue
                if frozenset({a.registry_id, b.registry_id}) in self.dropped_links:
                    continue
                a.replica_sync(b.mastered_snapshot())

    def _handle_sweep(self, period: int, now: int):
        self._push(now + period, _PRI_SWEEP, ("sweep", period))
        for reg in self.registries:
            reg.expire_sweep(now)

    def _emit(self, component: str, metric: str, value: float, now: int):
        record = SelfMonitoringRecord(component, metric, float(value), now)
        self.result.records.append(record)
        monitor = self.producers[MONITOR_ID]
        monitor.insert("monitoring", [make_tuple(self.schemas["monitoring"],
                                                 record.as_binding())])

    def _handle_sample(self, period: int, now: int):
        self._push(now + period, _PRI_SAMPLE, ("sample", period))
        if now > self.sc.duration_ms:
            return
        for pid in sorted(self.producers):
            if pid == MONITOR_ID:
                continue
            self._emit(pid, "available", 0.0 if pid in self.down else 1.0, now)
            if self.mode == "wall":
                samples = self._response_samples.pop(pid, [])
                if samples:
                    self._emit(pid, "responseTimeMs", sum(samples) / len(samples), now)
            else:
                self._emit(pid, "responseTimeMs", 0.0, now)
        for aid in sorted(self.archivers):
            self._emit(aid, "archiverLag", self.archivers[aid].total_lag(), now)
            self._emit(aid, "available", 0.0 if aid in self.down else 1.0, now)
        for cid, rows in sorted(self.result.deliveries.items()):
            session = self.sessions.get(cid)
            if rows and session is not None:
                # information age: now minus the newest delivered timestamp
                ts_values = [self._delivery_ts(cid, v) for _, v, _, _ in rows]
                self._emit(cid, "infoAgeMs", now - max(ts_values), now)

    def _delivery_ts(self, cid: str, values: tuple) -> int:
        # continuous queries are single-table; find the timestamp column index
        session = self.sessions[cid]
        schema = self.schemas[session.query.tables[0].name]
        try:
            idx = session.columns.index(schema.timestamp_column)
        except ValueError:
            return 0
        return int(values[idx])

    def _handle_fault(self, fault: FaultCfg, now: int):
        if fault.action == "kill":
            # a crash, not a clean shutdown: no unregister, soft state expires
            self.down.add(fault.target)
            if fault.target in self.producers:
                self.fabric.kill(fault.target)
        elif fault.action == "restart":
            target = fault.target
            self.down.discard(target)
            if target in self.producers and target != MONITOR_ID:
                cfg = self.producer_cfg[target]
                index = [p.id for p in self.sc.producers].index(target)
                old = self.producers[target]
                old.close()
                self._build_producer(cfg, index)
                delay = heartbeat_schedule(cfg.interval_ms)
                self._push(now + delay, _PRI_HEARTBEAT, ("heartbeat", target, delay))
        elif fault.action == "drop_link":
            self.dropped_links.add(frozenset({fault.target, fault.peer}))
        elif fault.action == "heal_link":
            self.dropped_links.discard(frozenset({fault.target, fault.peer}))
        elif fault.action == "pause_sink":
            self.archivers[fault.target].pause()
        elif fault.action == "resume_sink":
            self.archivers[fault.target].resume()

    # --- main loop ----------------------------------------------------------------

    def run(self) -> ScenarioResult:
        self._response_samples: dict[str, list[float]] = {}
        self.setup()
        self._schedule_initial()
        while self.events:
            at_ms, priority, _, payload = heapq.heappop(self.events)
            if at_ms > self.sc.duration_ms:
                break
            if self.mode == "simulated":
                if at_ms > self.clock.now_ms():
                    self.clock.set(at_ms)
            else:
                target = self.start_wall + at_ms / 1000.0
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            kind = payload[0]
            now = at_ms
            if kind == "publish":
                self._handle_publish(payload[1], payload[2], now)
            elif kind == "heartbeat":
                self._handle_heartbeat(payload[1], payload[2], now)
            elif kind == "sync":
                self._handle_sync(payload[1], now)
            elif kind == "sweep":
                self._handle_sweep(payload[1], now)
            elif kind == "sample":
                self._handle_sample(payload[1], now)
            elif kind == "fault":
                self._handle_fault(payload[1], now)
            elif kind == "start_consumer":
                cfg = next(c for c in self.sc.consumers if c.id == payload[1])
                self._start_consumer(cfg)
            elif kind == "start_producer":
                cfg = next(p for p in self.sc.producers if p.id == payload[1])
                self._build_producer(cfg, payload[2])
            elif kind == "end":
                break
        self._finish()
        return self.result

    def _finish(self):
        for cid, rows in self.result.deliveries.items():
            meta = self.result.consumer_meta.get(cid, {})
            meta["first_delivery_ms"] = rows[0][0] if rows else None
        for cfg in self.sc.consumers:
            if cfg.query_class is QueryClass.CONTINUOUS:
                continue
            mediator = self.mediators.get(cfg.id) or Mediator(
                self.registries[cfg.registry], self.fabric)
            result = mediator.query_once(cfg.query, cfg.query_class)
            self.result.consumer_meta[cfg.id] = {
                "no_producers": result.no_producers,
                "failures": result.failures,
            }
            self.result.one_shot[cfg.id] = [tuple(r.values) for r in result.rows]
        for arch in self.archivers.values():
            arch.stop()
        for cid, session in self.sessions.items():
            session.close()
        for pid, producer in self.producers.items():
            self.result.snapshots[pid] = producer.snapshot()
            producer.close()


def run_scenario(scenario: Scenario, mode: str = "simulated") -> ScenarioResult:
    """Execute a scenario; deterministic per seed under the simulated clock."""
    return _Run(scenario, mode).run()


def typical_site_scenario(
    sites: int = 2,
    rate_per_s: float = 20.0,
    duration_ms: int = 10_000,
    seed: int = 0,
    sink_type: ProducerType = ProducerType.LATEST,
) -> Scenario:
    """The standard load pattern: per site one storage node and three compute
    nodes publishing into a fan-in archiver over one shared table."""
    sc = Scenario(seed=seed, duration_ms=duration_ms)
    sc.tables = [(
        "CREATE TABLE gridload (site STRING, node STRING, load REAL, ts TIMESTAMP)",
        ["site", "node"],
    )]
    for s in range(sites):
        for node in ["se0", "ce0", "ce1", "ce2"]:
            sc.producers.append(ProducerCfg(
                id=f"site{s}-{node}", type=ProducerType.STREAM, table="gridload",
                view=f"site = 'site{s}'", rate_per_s=rate_per_s,
                seed=seed, fixed={"node": node},
            ))
    sc.producers.append(ProducerCfg(
        id="sink", type=sink_type, table="gridload", rate_per_s=0,
    ))
    sc.archivers.append(ArchiverCfg(id="arch", tables=["gridload"], sink="sink"))
    sc.consumers.append(ConsumerCfg(
        id="watcher", query="SELECT * FROM gridload",
        query_class=QueryClass.LATEST if sink_type is ProducerType.LATEST
        else QueryClass.HISTORY,
    ))
    return sc
