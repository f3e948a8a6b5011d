"""Consumer-side query engine, hidden behind the consumer interface.

classify -> plan -> execute: the registry supplies the relevant producers,
each target gets the query condition re-simplified under its view (the
residual), and results are merged per query class: plain union for history,
newest-per-defining-key with a deterministic tie-break for latest, and a
long-lived fan-in session for continuous queries that grows when the
registry announces new matching producers.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable, Mapping

from rgma.errors import RgmaError, UnsupportedQueryClassError
from rgma.registry import ProducerEntry
from rgma.roles import ProducerType, QueryClass, supports
from rgma.sqlcore import (
    Boolean,
    Condition,
    Query,
    TableDefinition,
    Value,
    evaluate,
    output_columns,
    relevant,
    residual_condition,
)

MergePolicy = str  # "union" | "latest_per_key"


@dataclass(frozen=True)
class PlanTarget:
    component_id: str
    entries: tuple[ProducerEntry, ...]  # one per query table
    residual: Condition | None

    @property
    def endpoint(self):
        return self.entries[0].endpoint

    def fetch_query(self, query: Query) -> Query:
        # full rows are fetched; projection happens after merging
        return Query(
            projection=None,
            tables=query.tables,
            condition=self.residual,
            join_equalities=query.join_equalities,
        )


@dataclass(frozen=True)
class QueryPlan:
    query: Query
    query_class: QueryClass
    targets: tuple[PlanTarget, ...]
    merge_policy: MergePolicy

    @property
    def no_producers(self) -> bool:
        return not self.targets


@dataclass(frozen=True)
class ResultRow:
    values: tuple[Value, ...]
    origin: str
    backlog: bool = False


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[ResultRow] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    no_producers: bool = False


def classify(query: Query, requested: QueryClass) -> QueryClass:
    """Validate the requested class against the query shape."""
    if requested is QueryClass.CONTINUOUS and query.is_join:
        raise UnsupportedQueryClassError(
            "continuous queries filter a single published stream; joins need latest/history"
        )
    return requested


def plan(
    query: Query,
    query_class: QueryClass,
    entries: list[ProducerEntry],
    schemas: Mapping[str, TableDefinition],
) -> QueryPlan:
    """Build the fan-out plan from a registry lookup result."""
    by_component: dict[str, dict[str, ProducerEntry]] = {}
    for e in entries:
        by_component.setdefault(e.component_id, {})[e.table] = e
    targets = []
    for cid in sorted(by_component):
        tables = by_component[cid]
        views = {t: (e.view, schemas[t]) for t, e in tables.items()}
        residual = residual_condition(query, views)
        if isinstance(residual, Boolean) and not residual.value:
            continue  # provably cannot contribute
        ordered = tuple(tables[tref.name] for tref in query.tables if tref.name in tables)
        targets.append(PlanTarget(cid, ordered, residual))
    policy = "latest_per_key" if query_class is QueryClass.LATEST else "union"
    return QueryPlan(query, query_class, tuple(targets), policy)


def _row_key_and_ts(
    query: Query, schemas: Mapping[str, TableDefinition], row: Mapping[str, Value]
) -> tuple[tuple[Value, ...], int]:
    key: list[Value] = []
    ts = None
    for tref in query.tables:
        schema = schemas[tref.name]
        prefix = f"{tref.alias}." if query.is_join else ""
        key.extend(row[f"{prefix}{k}"] for k in schema.defining_key)
        t = row[f"{prefix}{schema.timestamp_column}"]
        ts = t if ts is None else max(ts, t)
    return tuple(key), int(ts)  # type: ignore[arg-type]


def _project(query: Query, schemas, row: Mapping[str, Value]) -> tuple[Value, ...]:
    return tuple(row[c] for c in output_columns(query, schemas))


def execute_latest(plan_: QueryPlan, fabric, schemas) -> ResultSet:
    """Newest row per defining key across every producer; equal timestamps go
    to the lexicographically smallest producer id."""
    result = ResultSet(columns=output_columns(plan_.query, schemas))
    if plan_.no_producers:
        result.no_producers = True
        return result
    best: dict[tuple, tuple[int, str, Mapping[str, Value]]] = {}
    for target in plan_.targets:
        try:
            rows = fabric.one_shot(target, target.fetch_query(plan_.query), QueryClass.LATEST)
        except RgmaError as exc:
            result.failures.append((target.component_id, str(exc)))
            continue
        for row in rows:
            key, ts = _row_key_and_ts(plan_.query, schemas, row)
            cur = best.get(key)
            if cur is None or ts > cur[0] or (ts == cur[0] and target.component_id < cur[1]):
                best[key] = (ts, target.component_id, row)
    for key in sorted(best, key=repr):
        ts, cid, row = best[key]
        result.rows.append(ResultRow(_project(plan_.query, schemas, row), cid))
    return result


def execute_history(plan_: QueryPlan, fabric, schemas) -> ResultSet:
    """Union of per-producer results; cross-producer duplicates are retained
    (nothing globally identifies a copy as the same measurement)."""
    result = ResultSet(columns=output_columns(plan_.query, schemas))
    if plan_.no_producers:
        result.no_producers = True
        return result
    for target in plan_.targets:
        try:
            rows = fabric.one_shot(target, target.fetch_query(plan_.query), QueryClass.HISTORY)
        except RgmaError as exc:
            result.failures.append((target.component_id, str(exc)))
            continue
        for row in rows:
            result.rows.append(ResultRow(_project(plan_.query, schemas, row), target.component_id))
    return result


class ConsumerSession:
    """A live continuous query: one subscription per relevant producer, all
    feeding one sink. Stays open with zero targets until producers appear."""

    def __init__(
        self,
        component_id: str,
        query: Query,
        query_sql: str,
        sink: Callable[[ResultRow], None],
        fabric,
        schemas: Mapping[str, TableDefinition],
        exclude_producers: frozenset[str] = frozenset(),
    ):
        self.component_id = component_id
        self.query = query
        self.query_sql = query_sql
        self.sink = sink
        self.fabric = fabric
        self.schemas = dict(schemas)
        self.columns = output_columns(query, schemas)
        self.closed = False
        # an archiver must never consume its own sink, or a stream sink on the
        # archived table would feed itself forever
        self.exclude_producers = exclude_producers
        self._lock = threading.Lock()
        self._handles: dict[str, object] = {}
        self.delivered = 0

    def start(self, plan_: QueryPlan):
        for target in plan_.targets:
            if target.component_id in self.exclude_producers:
                continue
            self._subscribe(target.component_id, target, target.entries[0])

    def _subscribe(self, cid: str, target: PlanTarget | None, entry: ProducerEntry):
        if self.closed:
            return
        if target is None:
            views = {entry.table: (entry.view, self.schemas[entry.table])}
            residual = residual_condition(self.query, views)
            if isinstance(residual, Boolean) and not residual.value:
                return
            target = PlanTarget(cid, (entry,), residual)

        def deliver(table: str, rows: list[dict[str, Value]], backlog: bool):
            self._deliver(cid, rows, backlog)

        try:
            handle = self.fabric.subscribe(target, target.fetch_query(self.query), deliver)
        except RgmaError:
            return  # producer unreachable; a later notification retries
        self._handles[cid] = handle

    def _deliver(self, cid: str, rows: list[dict[str, Value]], backlog: bool):
        with self._lock:
            if self.closed:
                return
            for row in rows:
                # safety net: never hand the sink a tuple failing the query
                if not evaluate(self.query.condition, row):
                    continue
                self.delivered += 1
                self.sink(ResultRow(_project(self.query, self.schemas, row), cid, backlog))

    def on_new_producer(self, entry: ProducerEntry) -> bool:
        """Registry notification hook; adds the producer if it matters."""
        if self.closed:
            return False
        if entry.component_id in self.exclude_producers:
            return False
        if entry.table not in {t.name for t in self.query.tables}:
            return False
        if not supports(entry.producer_type, QueryClass.CONTINUOUS, entry.answers):
            return False
        if not relevant(entry.view, self.query, entry.table, self.schemas[entry.table]):
            return False
        old = self._handles.get(entry.component_id)
        if old is not None and getattr(old, "alive", False):
            return False  # already attached and healthy
        self._subscribe(entry.component_id, None, entry)
        return entry.component_id in self._handles

    def target_ids(self) -> list[str]:
        return sorted(cid for cid, h in self._handles.items() if getattr(h, "alive", True))

    def close(self):
        with self._lock:
            self.closed = True
        for handle in self._handles.values():
            try:
                handle.close()  # type: ignore[attr-defined]
            except Exception:  # noqa: BLE001
                pass
        self._handles.clear()


class Mediator:
    """Ties registry, fabric and sessions together behind one query call."""

    def __init__(self, registry, fabric, session_interval_ms: int = 30_000,
                 id_prefix: str = "consumer"):
        self.registry = registry
        self.fabric = fabric
        self.session_interval_ms = session_interval_ms
        self.id_prefix = id_prefix

    def _schemas(self) -> dict[str, TableDefinition]:
        return self.registry.tables()

    def query_once(self, query_sql: str, query_class: QueryClass) -> ResultSet:
        """Latest or history execution, registering a short-lived consumer."""
        if query_class is QueryClass.CONTINUOUS:
            raise UnsupportedQueryClassError("continuous queries need query_continuous()")
        schemas = self._schemas()
        from rgma.sqlcore import parse_select

        query = parse_select(query_sql, schemas)
        classify(query, query_class)
        cid = f"{self.id_prefix}-{uuid.uuid4().hex[:8]}"
        _, entries = self.registry.register_consumer(
            cid, query_sql, query_class, self.session_interval_ms
        )
        try:
            plan_ = plan(query, query_class, entries, schemas)
            if query_class is QueryClass.LATEST:
                return execute_latest(plan_, self.fabric, schemas)
            return execute_history(plan_, self.fabric, schemas)
        finally:
            try:
                self.registry.unregister(cid)
            except RgmaError:
                pass

    def query_continuous(
        self,
        query_sql: str,
        sink: Callable[[ResultRow], None],
        component_id: str | None = None,
        endpoint=None,
        exclude_producers: frozenset[str] = frozenset(),
    ) -> ConsumerSession:
        schemas = self._schemas()
        from rgma.sqlcore import parse_select

        query = parse_select(query_sql, schemas)
        classify(query, QueryClass.CONTINUOUS)
        cid = component_id or f"{self.id_prefix}-{uuid.uuid4().hex[:8]}"
        session = ConsumerSession(cid, query, query_sql, sink, self.fabric, schemas,
                                  exclude_producers=exclude_producers)
        # sessions must be findable before registration so the notification
        # fired by a racing producer registration reaches them
        register_session = getattr(self.fabric, "register_session", None)
        if register_session is not None:
            register_session(session)
        _, entries = self.registry.register_consumer(
            cid, query_sql, QueryClass.CONTINUOUS, self.session_interval_ms, endpoint=endpoint
        )
        plan_ = plan(query, QueryClass.CONTINUOUS, entries, schemas)
        session.start(plan_)
        return session

    def close_session(self, session: ConsumerSession):
        session.close()
        drop = getattr(self.fabric, "drop_session", None)
        if drop is not None:
            drop(session)
        try:
            self.registry.unregister(session.component_id)
        except RgmaError:
            pass
