"""Archiver: a combined consumer-producer that republishes streams.

One continuous session per archived table feeds every delivered tuple,
unchanged, into a sink producer (any insertable type). Delivery to the sink
is at-least-once: replays after crashes may duplicate tuples, which latest
sinks absorb by the idempotence of the replacement rule and history sinks
may retain.
"""

from __future__ import annotations

import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field

from rgma.clock import WallClock
from rgma.errors import (
    SchemaError,
    SinkMismatchError,
    SourceUnsupportedError,
)
from rgma.mediator import Mediator, ResultRow
from rgma.roles import INSERTABLE, QueryClass
from rgma.sqlcore import ViewPredicate

log_interval_s = 0.05


@dataclass
class ArchiverSpec:
    tables: list[tuple[str, str | None]]  # (table, optional condition SQL)
    sink_id: str
    source_class: QueryClass = QueryClass.CONTINUOUS

    def __post_init__(self):
        self.tables = [(t.lower(), cond) for t, cond in self.tables]
        if self.source_class is not QueryClass.CONTINUOUS:
            raise SourceUnsupportedError("archiver inputs are always streams")


@dataclass
class _TableFeed:
    session: object = None
    delivered: int = 0
    inserted: int = 0
    pending: deque = field(default_factory=deque)  # (enqueued_wall_ms, values)


class Archiver:
    """Runs against a mediator (local or networked) and an insertable sink.

    threaded=False inserts synchronously on delivery (deterministic, used
    under simulated clocks); threaded=True decouples the sink behind a queue
    and a writer thread so lag is observable under real load.
    """

    def __init__(
        self,
        archiver_id: str,
        spec: ArchiverSpec,
        mediator: Mediator,
        sink,
        clock=None,
        threaded: bool = False,
        sink_interval_ms: int = 30_000,
    ):
        self.archiver_id = archiver_id
        self.spec = spec
        self.mediator = mediator
        self.sink = sink
        self.clock = clock or WallClock()
        self.threaded = threaded
        self.sink_interval_ms = sink_interval_ms
        self._feeds: dict[str, _TableFeed] = {}
        self._paused = False
        self._lock = threading.Lock()
        self._stop = False
        self._worker: threading.Thread | None = None

    # --- lifecycle -----------------------------------------------------------

    def start(self) -> "Archiver":
        sink_type = getattr(self.sink, "producer_type", None)
        if sink_type is not None and sink_type not in INSERTABLE:
            raise SinkMismatchError(f"sink type {sink_type.value} does not accept inserts")
        claim = getattr(self.sink, "claim", None)
        if claim is not None:
            claim(self.archiver_id)
        schemas = self.mediator.registry.tables()
        for table, cond in self.spec.tables:
            if table not in schemas:
                raise SchemaError(f"cannot archive undeclared table {table!r}")
            self._ensure_sink_declares(table, cond, schemas[table])
        for table, cond in self.spec.tables:
            sql = f"SELECT * FROM {table}"
            if cond:
                sql += f" WHERE {cond}"
            feed = _TableFeed()
            self._feeds[table] = feed
            feed.session = self.mediator.query_continuous(
                sql,
                sink=self._make_sink(table),
                component_id=f"{self.archiver_id}.{table}",
                exclude_producers=frozenset({self.spec.sink_id}),
            )
        if self.threaded:
            self._worker = threading.Thread(target=self._drain_loop, daemon=True)
            self._worker.start()
        return self

    def _ensure_sink_declares(self, table: str, cond: str | None, schema):
        declared = None
        try:
            declared = self.sink.schema_for(table)
        except SchemaError:
            declared = None
        if declared is not None:
            if declared.schema_hash() != schema.schema_hash():
                raise SinkMismatchError(
                    f"sink {self.spec.sink_id} declares {table!r} with a different schema"
                )
            return
        declare = getattr(self.sink, "declare", None)
        if declare is None:
            raise SinkMismatchError(
                f"sink {self.spec.sink_id} does not declare table {table!r}"
            )
        # the sink's view: the sources' common view if they all agree, else
        # universal (a conjunctive predicate cannot express a disjunction)
        query = self.mediator.registry.parse_query(f"SELECT * FROM {table}")
        sources = self.mediator.registry.lookup(query, QueryClass.CONTINUOUS)
        views = {e.view for e in sources}
        sink_view = views.pop() if len(views) == 1 else ViewPredicate.universal()
        declare(schema, sink_view)
        self.mediator.registry.register_producer(
            component_id=self.sink.component_id,
            producer_type=self.sink.producer_type,
            table=table,
            view=sink_view,
            termination_interval_ms=self.sink_interval_ms,
        )

    def _make_sink(self, table: str):
        def on_row(row: ResultRow):
            feed = self._feeds[table]
            with self._lock:
                feed.delivered += 1
                feed.pending.append((self._wall_ms(), list(row.values)))
            if not self.threaded and not self._paused:
                self._flush(table)

        return on_row

    def _wall_ms(self) -> int:
        return self.clock.now_ms()

    def _flush(self, table: str):
        feed = self._feeds[table]
        while True:
            with self._lock:
                if self._paused or not feed.pending:
                    return
                _, values = feed.pending.popleft()
            try:
                self.sink.insert_rows(table, [values])
                with self._lock:
                    feed.inserted += 1
            except Exception:  # noqa: BLE001 - keep the tuple, retry later
                with self._lock:
                    feed.pending.appendleft((self._wall_ms(), values))
                return

    def _drain_loop(self):
        while not self._stop:
            moved = False
            if not self._paused:
                for table in list(self._feeds):
                    feed = self._feeds[table]
                    batch = []
                    with self._lock:
                        while feed.pending and len(batch) < 256:
                            batch.append(feed.pending.popleft()[1])
                    if not batch:
                        continue
                    try:
                        self.sink.insert_rows(table, batch)
                        with self._lock:
                            feed.inserted += len(batch)
                        moved = True
                    except Exception:  # noqa: BLE001
                        with self._lock:
                            for values in reversed(batch):
                                feed.pending.appendleft((self._wall_ms(), values))
            if not moved:
                time.sleep(log_interval_s)

    # --- control and metrics ---------------------------------------------------

    def pause(self):
        self._paused = True

    def resume(self):
        self._paused = False
        if not self.threaded:
            for table in self._feeds:
                self._flush(table)

    def lag(self) -> dict[str, dict[str, int]]:
        """Per table: tuples delivered but not yet in the sink, and the age of
        the oldest pending one."""
        out = {}
        now = self._wall_ms()
        with self._lock:
            for table, feed in self._feeds.items():
                pending = feed.delivered - feed.inserted
                oldest = feed.pending[0][0] if feed.pending else None
                out[table] = {
                    "pending": pending,
                    "oldest_age_ms": 0 if oldest is None else max(0, now - oldest),
                }
        return out

    def total_lag(self) -> int:
        return sum(v["pending"] for v in self.lag().values())

    def stop(self):
        self._stop = True
        for feed in self._feeds.values():
            if feed.session is not None:
                self.mediator.close_session(feed.session)
        if self._worker is not None:
            self._worker.join(timeout=2.0)
        release = getattr(self.sink, "release", None)
        if release is not None:
            release(self.archiver_id)
