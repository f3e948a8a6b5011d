"""Producer instances: the storage and query behavior behind each type.

All types except canonical share the insert interface; they differ in what
they keep and which query class they answer. Stream types hold a bounded
in-memory ring; the resilient variant writes an fsynced log first and can
replay every acknowledged tuple after a crash. Database types keep full
history, latest types one row per defining key. Canonical producers run a
user callback instead of a store.

A producer may declare several tables (archiver sinks routinely do); it then
holds one registry entry per table.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from rgma.clock import WallClock
from rgma.datamodel import (
    CleanupRule,
    HistoryStore,
    LatestStore,
    RetentionRule,
    Tuple,
    apply_cleanup,
    apply_retention,
    history_query,
    make_tuple,
    tuple_mapping,
)
from rgma.errors import (
    NotInsertableError,
    SchemaError,
    SinkInUseError,
    StorageError,
    UnsupportedProducerTypeError,
    UnsupportedQueryClassError,
    ViewViolationError,
)
from rgma.roles import INSERTABLE, ProducerType, QueryClass, supports
from rgma.sqlcore import (
    Query,
    TableDefinition,
    Value,
    ViewPredicate,
    evaluate,
    parse_insert,
)
from rgma.storage import WalFile

DEFAULT_RING_CAPACITY = 1024

# sink(table, rows, backlog): rows are canonical-key mappings
SubscriptionSink = Callable[[str, list[dict[str, Value]], bool], None]

# handler(query, query_class) -> iterable of canonical-key row mappings
CanonicalHandler = Callable[[Query, QueryClass], Iterable[Mapping[str, Value]]]


@dataclass
class Subscription:
    sub_id: str
    table: str
    query: Query
    sink: SubscriptionSink
    closed: bool = False

    def deliver(self, rows: list[dict[str, Value]], backlog: bool):
        self.sink(self.table, rows, backlog)


class ProducerInstance:
    """One producer: declared tables + views, a backing store per table, and
    the continuous subscriptions currently attached to it."""

    def __init__(
        self,
        component_id: str,
        producer_type: ProducerType,
        declarations: list[tuple[TableDefinition, ViewPredicate]],
        clock=None,
        ring_capacity: int = DEFAULT_RING_CAPACITY,
        wal_path: str | None = None,
        store_dir: str | None = None,
        handler: CanonicalHandler | None = None,
        answers: frozenset[QueryClass] | None = None,
    ):
        if not declarations:
            raise SchemaError("producer must declare at least one table")
        self.component_id = component_id
        self.producer_type = producer_type
        self.clock = clock or WallClock()
        self.ring_capacity = ring_capacity
        self.owner: str | None = None  # archiver exclusivity claim
        self._lock = threading.RLock()
        self._schemas: dict[str, TableDefinition] = {}
        self._views: dict[str, ViewPredicate] = {}
        for schema, view in declarations:
            if schema.name in self._schemas:
                raise SchemaError(f"table {schema.name!r} declared twice")
            for col, _ in view.atoms:
                if not schema.has_column(col):
                    raise SchemaError(f"view column {col!r} not in table {schema.name}")
            self._schemas[schema.name] = schema
            self._views[schema.name] = view

        self._rings: dict[str, deque[Tuple]] = {}
        self._history: dict[str, HistoryStore] = {}
        self._latest: dict[str, LatestStore] = {}
        self._wal: WalFile | None = None
        self._handler = handler
        self.answers = answers
        self._subscriptions: dict[str, Subscription] = {}
        self._sub_counter = 0
        self._cleanup: list[list] = []  # [rule, next_fire_ms]

        if producer_type is ProducerType.CANONICAL:
            if handler is None:
                raise SchemaError("canonical producer needs a handler")
            bad = (answers or frozenset()) - {QueryClass.LATEST, QueryClass.HISTORY}
            if bad:
                raise UnsupportedQueryClassError(
                    f"canonical producers cannot declare {sorted(c.value for c in bad)}"
                )
            return
        if handler is not None:
            raise SchemaError("only canonical producers take a handler")
        if producer_type in (ProducerType.STREAM, ProducerType.RESILIENT_STREAM):
            for name in self._schemas:
                self._rings[name] = deque(maxlen=ring_capacity)
            if producer_type is ProducerType.RESILIENT_STREAM:
                if wal_path is None:
                    raise StorageError("resilient stream producer needs a wal_path")
                self._wal = WalFile(wal_path, component_id)
                for record in self._wal.records():
                    table, values = record["table"], record["rows"]
                    schema = self._schemas.get(table)
                    if schema is None:
                        continue
                    ts_idx = schema.index_of(schema.timestamp_column)
                    for vals in values:
                        self._rings[table].append(
                            Tuple(table, tuple(vals), int(vals[ts_idx]))
                        )
        elif producer_type is ProducerType.DATABASE:
            for name, schema in self._schemas.items():
                path = None if store_dir is None else f"{store_dir}/{name}.table"
                self._history[name] = HistoryStore(schema, path=path)
        elif producer_type is ProducerType.LATEST:
            for name, schema in self._schemas.items():
                path = None if store_dir is None else f"{store_dir}/{name}.table"
                self._latest[name] = LatestStore(schema, path=path)

    # --- ownership (archiver exclusivity) -------------------------------------

    def claim(self, owner: str):
        """Hand control of this producer to one archiver at a time."""
        with self._lock:
            if self.owner is not None and self.owner != owner:
                raise SinkInUseError(
                    f"producer {self.component_id} already controlled by {self.owner}"
                )
            self.owner = owner

    def release(self, owner: str):
        with self._lock:
            if self.owner == owner:
                self.owner = None

    # --- declarations -------------------------------------------------------

    def tables(self) -> list[str]:
        return sorted(self._schemas)

    def schema_for(self, table: str) -> TableDefinition:
        schema = self._schemas.get(table.lower())
        if schema is None:
            raise SchemaError(f"producer {self.component_id} does not declare {table!r}")
        return schema

    def view_for(self, table: str) -> ViewPredicate:
        return self._views[table.lower()]

    def declare(self, schema: TableDefinition, view: ViewPredicate):
        """Add a table to an existing producer (archiver sinks grow this way)."""
        with self._lock:
            if schema.name in self._schemas:
                if self._schemas[schema.name].schema_hash() != schema.schema_hash():
                    raise SchemaError(f"table {schema.name!r} already declared differently")
                return
            self._schemas[schema.name] = schema
            self._views[schema.name] = view
            if self.producer_type in (ProducerType.STREAM, ProducerType.RESILIENT_STREAM):
                self._rings[schema.name] = deque(maxlen=self.ring_capacity)
            elif self.producer_type is ProducerType.DATABASE:
                self._history[schema.name] = HistoryStore(schema)
            elif self.producer_type is ProducerType.LATEST:
                self._latest[schema.name] = LatestStore(schema)

    # --- inserting ------------------------------------------------------------

    def insert(self, table: str, tuples: list[Tuple]) -> int:
        """Publish tuples; acknowledged only after the type's storage accepted
        them (for resilient streams: after the log hit disk)."""
        if self.producer_type not in INSERTABLE:
            raise NotInsertableError(f"{self.producer_type.value} producers do not accept inserts")
        table = table.lower()
        with self._lock:
            schema = self.schema_for(table)
            view = self._views[table]
            for t in tuples:
                if t.table != table or len(t.values) != len(schema.columns):
                    raise SchemaError(f"tuple does not match table {table}")
                mapping = tuple_mapping(schema, t)
                for col, expected in view.atoms:
                    if mapping[col] != expected:
                        raise ViewViolationError(
                            f"tuple value {mapping[col]!r} for {col!r} contradicts the "
                            f"declared view of {self.component_id}"
                        )
            if self.producer_type is ProducerType.RESILIENT_STREAM:
                assert self._wal is not None
                self._wal.append({"table": table, "rows": [list(t.values) for t in tuples]})
            if self.producer_type in (ProducerType.STREAM, ProducerType.RESILIENT_STREAM):
                self._rings[table].extend(tuples)
                self._push(table, schema, tuples)
            elif self.producer_type is ProducerType.DATABASE:
                for t in tuples:
                    self._history[table].append(t)
            elif self.producer_type is ProducerType.LATEST:
                for t in tuples:
                    self._latest[table].insert(t)
            return len(tuples)

    def insert_sql(self, text: str) -> int:
        from rgma.sqlcore import insert_table_name

        table = insert_table_name(text)
        schema = self.schema_for(table)
        binding = parse_insert(text, schema)
        return self.insert(table, [make_tuple(schema, binding)])

    def insert_rows(self, table: str, rows: list[list[Value]]) -> int:
        schema = self.schema_for(table)
        tuples = []
        for vals in rows:
            if len(vals) != len(schema.columns):
                raise SchemaError(f"row arity does not match table {table}")
            tuples.append(make_tuple(schema, dict(zip(schema.column_names(), vals))))
        return self.insert(table, tuples)

    def _push(self, table: str, schema: TableDefinition, tuples: list[Tuple]):
        for sub in list(self._subscriptions.values()):
            if sub.closed or sub.table != table:
                continue
            rows = []
            for t in tuples:
                mapping = tuple_mapping(schema, t)
                if evaluate(sub.query.condition, mapping):
                    rows.append(mapping)
            if not rows:
                continue
            try:
                sub.deliver(rows, backlog=False)
            except Exception:  # noqa: BLE001 - a broken sink only kills its subscription
                sub.closed = True
                self._subscriptions.pop(sub.sub_id, None)

    # --- queries ----------------------------------------------------------------

    def _check_class(self, query: Query, qclass: QueryClass):
        if not supports(self.producer_type, qclass, self.answers):
            raise UnsupportedQueryClassError(
                f"{self.producer_type.value} producer cannot answer {qclass.value} queries"
            )
        for tref in query.tables:
            self.schema_for(tref.name)
        if qclass is QueryClass.CONTINUOUS and query.is_join:
            raise UnsupportedQueryClassError("continuous queries are single-table stream filters")

    def answer_query(self, query: Query, qclass: QueryClass) -> list[dict[str, Value]]:
        """One-shot (latest/history/canonical) answers as canonical row mappings."""
        with self._lock:
            self._check_class(query, qclass)
            if self.producer_type is ProducerType.CANONICAL:
                assert self._handler is not None
                rows = [dict(r) for r in self._handler(query, qclass)]
                if not query.is_join:
                    schema = self.schema_for(query.tables[0].name)
                    for row in rows:
                        make_tuple(schema, row)  # type and completeness check
                return rows
            if qclass is QueryClass.LATEST:
                tables = {
                    t.name: (self._schemas[t.name], self._latest[t.name].rows())
                    for t in query.tables
                }
                return history_query(query, tables)
            if qclass is QueryClass.HISTORY:
                tables = {
                    t.name: (self._schemas[t.name], self._history[t.name].rows())
                    for t in query.tables
                }
                return history_query(query, tables)
            raise UnsupportedQueryClassError("continuous queries use subscribe()")

    def subscribe(self, query: Query, sink: SubscriptionSink) -> Subscription:
        """Attach a continuous query: current backlog first, then live pushes."""
        with self._lock:
            self._check_class(query, QueryClass.CONTINUOUS)
            table = query.tables[0].name
            schema = self._schemas[table]
            self._sub_counter += 1
            sub = Subscription(
                sub_id=f"{self.component_id}/s{self._sub_counter}",
                table=table,
                query=query,
                sink=sink,
            )
            backlog_rows: list[dict[str, Value]] = []
            if self.producer_type is ProducerType.RESILIENT_STREAM:
                assert self._wal is not None
                ts_idx = schema.index_of(schema.timestamp_column)
                for record in self._wal.records():
                    if record["table"] != table:
                        continue
                    for vals in record["rows"]:
                        mapping = tuple_mapping(schema, Tuple(table, tuple(vals), int(vals[ts_idx])))
                        if evaluate(query.condition, mapping):
                            backlog_rows.append(mapping)
            else:
                for t in self._rings[table]:
                    mapping = tuple_mapping(schema, t)
                    if evaluate(query.condition, mapping):
                        backlog_rows.append(mapping)
            if backlog_rows:
                sub.deliver(backlog_rows, backlog=True)
            self._subscriptions[sub.sub_id] = sub
            return sub

    def unsubscribe(self, sub_id: str):
        with self._lock:
            sub = self._subscriptions.pop(sub_id, None)
            if sub is not None:
                sub.closed = True

    def subscription_count(self) -> int:
        return len(self._subscriptions)

    # --- cleanup ------------------------------------------------------------------

    def schedule_cleanup(self, rule: CleanupRule | RetentionRule) -> None:
        if self.producer_type not in (ProducerType.DATABASE, ProducerType.LATEST):
            raise UnsupportedProducerTypeError(
                f"{self.producer_type.value} producers keep no long-term store to clean"
            )
        self.schema_for(rule.table)
        with self._lock:
            self._cleanup.append([rule, self.clock.now_ms() + rule.interval_ms])

    def run_due_cleanup(self, now: int | None = None) -> int:
        """Fire every rule whose interval elapsed; returns rows deleted."""
        now = self.clock.now_ms() if now is None else now
        deleted = 0
        with self._lock:
            for slot in self._cleanup:
                rule, next_fire = slot
                if next_fire > now:
                    continue
                store = (
                    self._history.get(rule.table)
                    if self.producer_type is ProducerType.DATABASE
                    else self._latest.get(rule.table)
                )
                if store is None:
                    continue
                if isinstance(rule, CleanupRule):
                    deleted += apply_cleanup(store, rule, now)
                else:
                    deleted += apply_retention(store, rule)
                slot[1] = now + rule.interval_ms
        return deleted

    # --- introspection ---------------------------------------------------------------

    def store_rows(self, table: str) -> list[Tuple]:
        table = table.lower()
        with self._lock:
            if self.producer_type is ProducerType.DATABASE:
                return self._history[table].rows()
            if self.producer_type is ProducerType.LATEST:
                return self._latest[table].rows()
            if table in self._rings:
                return list(self._rings[table])
        raise UnsupportedProducerTypeError("no store for this producer type")

    def snapshot(self) -> dict[str, list[tuple]]:
        """Deterministic dump of all stores (for harness comparisons)."""
        out: dict[str, list[tuple]] = {}
        for table in self.tables():
            if self.producer_type is ProducerType.CANONICAL:
                continue
            rows = [tuple(t.values) for t in self.store_rows(table)]
            out[table] = sorted(rows, key=repr)
        return out

    def close(self):
        with self._lock:
            for store in self._history.values():
                store.close()
            for store in self._latest.values():
                store.close()
            if self._wal is not None:
                self._wal.close()
            for sub in self._subscriptions.values():
                sub.closed = True
            self._subscriptions.clear()
