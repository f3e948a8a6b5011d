"""Soft-state directory of producers and consumers.

Every registration carries a termination deadline; a component that is not
heard from by its deadline drops out of lookup and is eventually swept. Each
registry masters the entries registered with it and replicates them to peers
as versioned records with tombstones: peers only ever copy, never modify,
foreign-mastered state, so frequent pairwise syncs converge.

The schema service is co-located here. Registry metadata itself is queryable
through three reserved tables (registry_tables / registry_producers /
registry_consumers) served by an internal canonical producer, which keeps the
wire protocol closed over its message kinds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping

from rgma.clock import WallClock
from rgma.datamodel import Tuple, history_query, make_tuple
from rgma.errors import ProtocolError, SchemaError, UnknownComponentError
from rgma.roles import ProducerType, QueryClass, supports
from rgma.sqlcore import (
    Query,
    TableDefinition,
    ViewPredicate,
    parse_create_table,
    parse_select,
    relevant,
    render_create_table,
    render_select,
    render_view,
)
from rgma.storage import _FrameFile, TABLE_MAGIC
from rgma.transport import Endpoint

log = logging.getLogger("rgma.registry")

RESERVED_PREFIX = "registry_"
META_TABLES = ("registry_tables", "registry_producers", "registry_consumers")
META_INTERVAL_MS = 3600_000
TOMBSTONE_LIFETIMES = 10  # multiples of the entry's termination interval


@dataclass(frozen=True)
class ProducerEntry:
    component_id: str
    endpoint: Endpoint | None
    producer_type: ProducerType
    table: str
    view: ViewPredicate
    termination_deadline: int
    termination_interval_ms: int
    master_registry_id: str
    version: int
    registered_ms: int
    answers: frozenset[QueryClass] | None = None

    def to_json(self) -> dict:
        return {
            "kind": "producer",
            "componentId": self.component_id,
            "endpoint": None if self.endpoint is None else self.endpoint.as_json(),
            "producerType": self.producer_type.value,
            "table": self.table,
            "viewAtoms": [[c, v] for c, v in self.view.atoms],
            "deadline": self.termination_deadline,
            "intervalMs": self.termination_interval_ms,
            "master": self.master_registry_id,
            "version": self.version,
            "registeredMs": self.registered_ms,
            "answers": None if self.answers is None else sorted(a.value for a in self.answers),
        }

    @classmethod
    def from_json(cls, body: dict) -> "ProducerEntry":
        return cls(
            component_id=body["componentId"],
            endpoint=None if body.get("endpoint") is None else Endpoint.from_json(body["endpoint"]),
            producer_type=ProducerType(body["producerType"]),
            table=body["table"],
            view=ViewPredicate(tuple((c, v) for c, v in body["viewAtoms"])),
            termination_deadline=int(body["deadline"]),
            termination_interval_ms=int(body["intervalMs"]),
            master_registry_id=body["master"],
            version=int(body["version"]),
            registered_ms=int(body.get("registeredMs", 0)),
            answers=None if body.get("answers") is None
            else frozenset(QueryClass(a) for a in body["answers"]),
        )


@dataclass(frozen=True)
class ConsumerEntry:
    component_id: str
    endpoint: Endpoint | None
    query_sql: str
    query_class: QueryClass
    termination_deadline: int
    termination_interval_ms: int
    master_registry_id: str
    version: int
    registered_ms: int

    def to_json(self) -> dict:
        return {
            "kind": "consumer",
            "componentId": self.component_id,
            "endpoint": None if self.endpoint is None else self.endpoint.as_json(),
            "querySql": self.query_sql,
            "queryClass": self.query_class.value,
            "deadline": self.termination_deadline,
            "intervalMs": self.termination_interval_ms,
            "master": self.master_registry_id,
            "version": self.version,
            "registeredMs": self.registered_ms,
        }

    @classmethod
    def from_json(cls, body: dict) -> "ConsumerEntry":
        return cls(
            component_id=body["componentId"],
            endpoint=None if body.get("endpoint") is None else Endpoint.from_json(body["endpoint"]),
            query_sql=body["querySql"],
            query_class=QueryClass(body["queryClass"]),
            termination_deadline=int(body["deadline"]),
            termination_interval_ms=int(body["intervalMs"]),
            master_registry_id=body["master"],
            version=int(body["version"]),
            registered_ms=int(body.get("registeredMs", 0)),
        )


@dataclass(frozen=True)
class Tombstone:
    key: tuple[str, str, str]  # ("p"|"c", component_id, table)
    master_registry_id: str
    version: int
    gc_deadline: int

    def to_json(self) -> dict:
        return {
            "key": list(self.key),
            "master": self.master_registry_id,
            "version": self.version,
            "gcDeadline": self.gc_deadline,
        }

    @classmethod
    def from_json(cls, body: dict) -> "Tombstone":
        return cls(tuple(body["key"]), body["master"], int(body["version"]), int(body["gcDeadline"]))


@dataclass(frozen=True)
class SchemaRecord:
    schema: TableDefinition
    master_registry_id: str
    declared_ms: int
    reserved: bool = False

    def to_json(self) -> dict:
        return {
            "createSql": render_create_table(self.schema),
            "definingKey": list(self.schema.defining_key),
            "master": self.master_registry_id,
            "declaredMs": self.declared_ms,
        }

    @classmethod
    def from_json(cls, body: dict) -> "SchemaRecord":
        schema = parse_create_table(body["createSql"], body["definingKey"])
        return cls(schema, body["master"], int(body["declaredMs"]))


# notifier(consumer_entry, producer_entry): deliver a new-producer notification
Notifier = Callable[[ConsumerEntry, ProducerEntry], None]


class Registry:
    """One registry replica. All mutations go through this object's single
    writer (callers serialize); reads see consistent state."""

    def __init__(
        self,
        registry_id: str,
        clock=None,
        notifier: Notifier | None = None,
        storage_path: str | None = None,
    ):
        self.registry_id = registry_id
        self.clock = clock or WallClock()
        self.notifier = notifier
        self._producers: dict[tuple[str, str], ProducerEntry] = {}
        self._consumers: dict[str, ConsumerEntry] = {}
        self._tombstones: dict[tuple[str, str, str], Tombstone] = {}
        self._schemas: dict[str, SchemaRecord] = {}
        self._counter = 0
        self._file: _FrameFile | None = None
        if storage_path is not None:
            self._file = _FrameFile(storage_path, TABLE_MAGIC, "registry-state")
            records = self._file.records()
            if records:
                self._load_state(records[-1])
        self._declare_reserved_schemas()
        self._register_meta_producers(endpoint=None)

    # --- persistence ------------------------------------------------------

    def _persist(self):
        if self._file is None:
            return
        self._file.rewrite([self._state_json()])

    def _state_json(self) -> dict:
        return {
            "counter": self._counter,
            "producers": [e.to_json() for e in self._producers.values()],
            "consumers": [e.to_json() for e in self._consumers.values()],
            "tombstones": [t.to_json() for t in self._tombstones.values()],
            "schemas": [r.to_json() for r in self._schemas.values() if not r.reserved],
        }

    def _load_state(self, state: dict):
        self._counter = int(state.get("counter", 0))
        for body in state.get("schemas", ()):
            record = SchemaRecord.from_json(body)
            self._schemas[record.schema.name] = record
        for body in state.get("producers", ()):
            e = ProducerEntry.from_json(body)
            self._producers[(e.component_id, e.table)] = e
        for body in state.get("consumers", ()):
            c = ConsumerEntry.from_json(body)
            self._consumers[c.component_id] = c
        for body in state.get("tombstones", ()):
            t = Tombstone.from_json(body)
            self._tombstones[t.key] = t

    # --- schema service -----------------------------------------------------

    def _declare_reserved_schemas(self):
        specs = [
            ("CREATE TABLE registry_tables (name STRING, column_spec STRING,"
             " defining_key STRING, ts TIMESTAMP)", ["name"]),
            ("CREATE TABLE registry_producers (component_id STRING, producer_type STRING,"
             " table_name STRING, view_sql STRING, endpoint STRING, ts TIMESTAMP)",
             ["component_id", "table_name"]),
            ("CREATE TABLE registry_consumers (component_id STRING, query_sql STRING,"
             " query_class STRING, endpoint STRING, ts TIMESTAMP)", ["component_id"]),
        ]
        for sql, key in specs:
            schema = parse_create_table(sql, key)
            if schema.name not in self._schemas:
                self._schemas[schema.name] = SchemaRecord(schema, self.registry_id, 0, reserved=True)

    def declare_table(self, schema: TableDefinition, now: int | None = None) -> TableDefinition:
        """Register a table in the virtual schema; identical redeclares are a no-op."""
        if schema.name.startswith(RESERVED_PREFIX):
            raise SchemaError(f"table names starting with {RESERVED_PREFIX!r} are reserved")
        now = self.clock.now_ms() if now is None else now
        existing = self._schemas.get(schema.name)
        if existing is not None:
            if existing.schema.schema_hash() != schema.schema_hash():
                raise SchemaError(f"table {schema.name!r} already declared with a different definition")
            return existing.schema
        self._schemas[schema.name] = SchemaRecord(schema, self.registry_id, now)
        self._persist()
        return schema

    def get_table(self, name: str) -> TableDefinition:
        record = self._schemas.get(name.lower())
        if record is None:
            raise SchemaError(f"unknown table {name!r}")
        return record.schema

    def tables(self) -> dict[str, TableDefinition]:
        return {name: r.schema for name, r in self._schemas.items()}

    def user_tables(self) -> dict[str, TableDefinition]:
        return {name: r.schema for name, r in self._schemas.items() if not r.reserved}

    # --- registration and soft state ---------------------------------------

    def _next_version(self) -> int:
        self._counter += 1
        return self._counter

    def register_producer(
        self,
        component_id: str,
        producer_type: ProducerType,
        table: str,
        view: ViewPredicate,
        termination_interval_ms: int,
        endpoint: Endpoint | None = None,
        answers: frozenset[QueryClass] | None = None,
        now: int | None = None,
        _reserved_ok: bool = False,
    ) -> ProducerEntry:
        now = self.clock.now_ms() if now is None else now
        table = table.lower()
        if termination_interval_ms <= 0:
            raise SchemaError("termination interval must be positive")
        record = self._schemas.get(table)
        if record is None:
            raise SchemaError(f"view references unknown table {table!r}")
        if record.reserved and not _reserved_ok:
            raise SchemaError(f"table {table!r} is reserved")
        schema = record.schema
        for col, value in view.atoms:
            if not schema.has_column(col):
                raise SchemaError(f"view column {col!r} not in table {table}")
        entry = ProducerEntry(
            component_id=component_id,
            endpoint=endpoint,
            producer_type=producer_type,
            table=table,
            view=view,
            termination_deadline=now + termination_interval_ms,
            termination_interval_ms=termination_interval_ms,
            master_registry_id=self.registry_id,
            version=self._next_version(),
            registered_ms=now,
            answers=answers,
        )
        key = (component_id, table)
        self._producers[key] = entry
        self._tombstones.pop(("p", component_id, table), None)
        self._persist()
        self._notify_consumers(entry, now)
        return entry

    def register_consumer(
        self,
        component_id: str,
        query_sql: str,
        query_class: QueryClass,
        termination_interval_ms: int,
        endpoint: Endpoint | None = None,
        now: int | None = None,
    ) -> tuple[ConsumerEntry, list[ProducerEntry]]:
        """Store the consumer and return the producers currently matching it."""
        now = self.clock.now_ms() if now is None else now
        if termination_interval_ms <= 0:
            raise SchemaError("termination interval must be positive")
        query = self.parse_query(query_sql)
        entry = ConsumerEntry(
            component_id=component_id,
            endpoint=endpoint,
            query_sql=query_sql,
            query_class=query_class,
            termination_deadline=now + termination_interval_ms,
            termination_interval_ms=termination_interval_ms,
            master_registry_id=self.registry_id,
            version=self._next_version(),
            registered_ms=now,
        )
        self._consumers[component_id] = entry
        self._tombstones.pop(("c", component_id, ""), None)
        self._persist()
        return entry, self.lookup(query, query_class, now=now)

    def parse_query(self, query_sql: str) -> Query:
        return parse_select(query_sql, {n: r.schema for n, r in self._schemas.items()})

    def heartbeat(self, component_id: str, new_deadline: int | None = None,
                  now: int | None = None) -> int:
        """Refresh a live component's deadline; expired ids must re-register."""
        now = self.clock.now_ms() if now is None else now
        touched = False
        deadline = 0
        for key, entry in list(self._producers.items()):
            if key[0] != component_id:
                continue
            if entry.termination_deadline < now:
                continue  # expired; sweep will reap it
            target = new_deadline if new_deadline is not None else now + entry.termination_interval_ms
            self._producers[key] = replace(
                entry, termination_deadline=target, version=self._next_version()
            )
            deadline = target
            touched = True
        entry = self._consumers.get(component_id)
        if entry is not None and entry.termination_deadline >= now:
            target = new_deadline if new_deadline is not None else now + entry.termination_interval_ms
            self._consumers[component_id] = replace(
                entry, termination_deadline=target, version=self._next_version()
            )
            deadline = target
            touched = True
        if not touched:
            raise UnknownComponentError(f"no live registration for {component_id!r}")
        self._persist()
        return deadline

    def unregister(self, component_id: str, now: int | None = None) -> int:
        now = self.clock.now_ms() if now is None else now
        removed = 0
        for key in [k for k in self._producers if k[0] == component_id]:
            entry = self._producers.pop(key)
            self._tombstone(("p",) + key, entry.termination_interval_ms, now)
            removed += 1
        if component_id in self._consumers:
            entry = self._consumers.pop(component_id)
            self._tombstone(("c", component_id, ""), entry.termination_interval_ms, now)
            removed += 1
        if removed:
            self._persist()
        return removed

    def _tombstone(self, key: tuple[str, str, str], interval_ms: int, now: int):
        self._tombstones[key] = Tombstone(
            key=key,
            master_registry_id=self.registry_id,
            version=self._next_version(),
            gc_deadline=now + TOMBSTONE_LIFETIMES * interval_ms,
        )

    def expire_sweep(self, now: int | None = None) -> list[str]:
        """Reap entries whose deadline has passed.

        Self-mastered entries become replicated tombstones. Foreign entries are
        only hidden (lookup filters on liveness) until either their master's
        tombstone arrives or they sit expired for the tombstone lifetime, after
        which they are dropped locally.
        """
        now = self.clock.now_ms() if now is None else now
        expired: list[str] = []
        changed = False
        for key, entry in list(self._producers.items()):
            if entry.component_id.endswith(".meta") and entry.master_registry_id == self.registry_id:
                # keep our own metadata producer alive
                if entry.termination_deadline - now <= entry.termination_interval_ms // 2:
                    self._producers[key] = replace(
                        entry,
                        termination_deadline=now + entry.termination_interval_ms,
                        version=self._next_version(),
                    )
                    changed = True
                continue
            if entry.termination_deadline > now:
                continue
            if entry.master_registry_id == self.registry_id:
                del self._producers[key]
                self._tombstone(("p",) + key, entry.termination_interval_ms, now)
                expired.append(entry.component_id)
                changed = True
            elif entry.termination_deadline + TOMBSTONE_LIFETIMES * entry.termination_interval_ms <= now:
                del self._producers[key]
                expired.append(entry.component_id)
                changed = True
        for cid, entry in list(self._consumers.items()):
            if entry.termination_deadline > now:
                continue
            if entry.master_registry_id == self.registry_id:
                del self._consumers[cid]
                self._tombstone(("c", cid, ""), entry.termination_interval_ms, now)
                expired.append(cid)
                changed = True
            elif entry.termination_deadline + TOMBSTONE_LIFETIMES * entry.termination_interval_ms <= now:
                del self._consumers[cid]
                expired.append(cid)
                changed = True
        for key, tomb in list(self._tombstones.items()):
            if tomb.gc_deadline <= now and tomb.master_registry_id == self.registry_id:
                del self._tombstones[key]
                changed = True
            elif tomb.gc_deadline <= now and tomb.master_registry_id != self.registry_id:
                del self._tombstones[key]
                changed = True
        if changed:
            self._persist()
        return sorted(set(expired))

    # --- lookup and notification --------------------------------------------

    def live_producers(self, now: int | None = None) -> list[ProducerEntry]:
        now = self.clock.now_ms() if now is None else now
        return sorted(
            (e for e in self._producers.values() if e.termination_deadline > now),
            key=lambda e: (e.component_id, e.table),
        )

    def live_consumers(self, now: int | None = None) -> list[ConsumerEntry]:
        now = self.clock.now_ms() if now is None else now
        return sorted(
            (e for e in self._consumers.values() if e.termination_deadline > now),
            key=lambda e: e.component_id,
        )

    def lookup(self, query: Query | str, query_class: QueryClass,
               now: int | None = None) -> list[ProducerEntry]:
        """Unexpired producers that are view-relevant to the query and able to
        answer its class. Join queries return only producers covering every
        referenced table (cross-producer joins are out of scope)."""
        now = self.clock.now_ms() if now is None else now
        if isinstance(query, str):
            query = self.parse_query(query)
        for tref in query.tables:
            if tref.name not in self._schemas:
                raise SchemaError(f"unknown table {tref.name!r}")
        tables = set(query.table_names())
        candidates = [
            e for e in self.live_producers(now)
            if e.table in tables and supports(e.producer_type, query_class, e.answers)
            and relevant(e.view, query, e.table, self._schemas[e.table].schema)
        ]
        if not query.is_join:
            return candidates
        by_component: dict[str, set[str]] = {}
        for e in candidates:
            by_component.setdefault(e.component_id, set()).add(e.table)
        covering = {cid for cid, ts in by_component.items() if ts == tables}
        return [e for e in candidates if e.component_id in covering]

    def matching_consumers(self, producer: ProducerEntry,
                           now: int | None = None) -> list[ConsumerEntry]:
        now = self.clock.now_ms() if now is None else now
        out = []
        for entry in self.live_consumers(now):
            if not supports(producer.producer_type, entry.query_class, producer.answers):
                continue
            try:
                query = self.parse_query(entry.query_sql)
            except SchemaError:
                continue
            if producer.table not in query.table_names():
                continue
            if relevant(producer.view, query, producer.table, self._schemas[producer.table].schema):
                out.append(entry)
        return out

    def _notify_consumers(self, producer: ProducerEntry, now: int):
        if self.notifier is None:
            return
        for consumer in self.matching_consumers(producer, now):
            try:
                self.notifier(consumer, producer)
            except Exception as exc:  # noqa: BLE001 - delivery failures are not fatal
                log.warning("notification to %s failed: %s", consumer.component_id, exc)

    # --- replication ----------------------------------------------------------

    def mastered_snapshot(self) -> dict:
        """Everything this registry is master of, tombstones included."""
        return {
            "registryId": self.registry_id,
            "producers": [
                e.to_json() for e in self._producers.values()
                if e.master_registry_id == self.registry_id
            ],
            "consumers": [
                e.to_json() for e in self._consumers.values()
                if e.master_registry_id == self.registry_id
            ],
            "tombstones": [
                t.to_json() for t in self._tombstones.values()
                if t.master_registry_id == self.registry_id
            ],
            "schemas": [r.to_json() for r in self._schemas.values() if not r.reserved],
        }

    def _stamp(self, key: tuple[str, str, str]) -> tuple[int, str] | None:
        tomb = self._tombstones.get(key)
        if tomb is not None:
            return (tomb.version, tomb.master_registry_id)
        if key[0] == "p":
            entry = self._producers.get((key[1], key[2]))
        else:
            entry = self._consumers.get(key[1])
        if entry is None:
            return None
        return (entry.version, entry.master_registry_id)

    def replica_sync(self, snapshot: Mapping) -> int:
        """Merge a peer's mastered snapshot; returns the number of records applied."""
        peer = snapshot.get("registryId")
        if not peer or peer == self.registry_id:
            raise ProtocolError("snapshot must come from a different registry")
        applied = 0
        for body in snapshot.get("schemas", ()):
            record = SchemaRecord.from_json(body)
            existing = self._schemas.get(record.schema.name)
            if existing is None:
                self._schemas[record.schema.name] = record
                applied += 1
            elif existing.reserved:
                continue
            # first declaration wins, deterministic on (time, master); also
            # unifies concurrent identical declares onto one master
            elif (record.declared_ms, record.master_registry_id) < (
                existing.declared_ms, existing.master_registry_id
            ):
                if existing.schema.schema_hash() != record.schema.schema_hash():
                    log.warning("conflicting definitions for table %s; keeping the earliest",
                                record.schema.name)
                self._schemas[record.schema.name] = record
                applied += 1

        def check_master(master: str):
            if master != peer:
                raise ProtocolError(
                    f"snapshot from {peer!r} claims mastership of {master!r} records"
                )

        fresh_registrations: list[ProducerEntry] = []
        for body in snapshot.get("producers", ()):
            entry = ProducerEntry.from_json(body)
            check_master(entry.master_registry_id)
            key = ("p", entry.component_id, entry.table)
            local = self._stamp(key)
            if local is None or (entry.version, entry.master_registry_id) > local:
                previous = self._producers.get((entry.component_id, entry.table))
                if previous is None or (
                    previous.registered_ms, previous.endpoint,
                    previous.view, previous.producer_type,
                ) != (entry.registered_ms, entry.endpoint, entry.view, entry.producer_type):
                    fresh_registrations.append(entry)
                self._producers[(entry.component_id, entry.table)] = entry
                self._tombstones.pop(key, None)
                applied += 1
        for body in snapshot.get("consumers", ()):
            entry_c = ConsumerEntry.from_json(body)
            check_master(entry_c.master_registry_id)
            key = ("c", entry_c.component_id, "")
            local = self._stamp(key)
            if local is None or (entry_c.version, entry_c.master_registry_id) > local:
                self._consumers[entry_c.component_id] = entry_c
                self._tombstones.pop(key, None)
                applied += 1
        for body in snapshot.get("tombstones", ()):
            tomb = Tombstone.from_json(body)
            check_master(tomb.master_registry_id)
            local = self._stamp(tuple(tomb.key))
            if local is None or (tomb.version, tomb.master_registry_id) > local:
                key = tuple(tomb.key)
                self._tombstones[key] = tomb
                if key[0] == "p":
                    self._producers.pop((key[1], key[2]), None)
                else:
                    self._consumers.pop(key[1], None)
                applied += 1
        if applied:
            self._persist()
        # a registration that reached us by sync is still news for consumers
        # mastered here; deadline refreshes deliberately do not re-notify
        if self.notifier is not None:
            now = self.clock.now_ms()
            for entry in fresh_registrations:
                for consumer in self.matching_consumers(entry, now):
                    if consumer.master_registry_id != self.registry_id:
                        continue
                    try:
                        self.notifier(consumer, entry)
                    except Exception as exc:  # noqa: BLE001
                        log.warning("notification to %s failed: %s",
                                    consumer.component_id, exc)
        return applied

    def canonical_state(self) -> bytes:
        """Deterministic serialization of replicated state, for convergence checks."""
        state = {
            "producers": sorted(
                (e.to_json() for e in self._producers.values()),
                key=lambda b: (b["componentId"], b["table"]),
            ),
            "consumers": sorted(
                (e.to_json() for e in self._consumers.values()),
                key=lambda b: b["componentId"],
            ),
            "tombstones": sorted(
                (t.to_json() for t in self._tombstones.values()), key=lambda b: b["key"]
            ),
            "schemas": sorted(
                (r.to_json() for r in self._schemas.values() if not r.reserved),
                key=lambda b: b["createSql"],
            ),
        }
        return json.dumps(state, sort_keys=True).encode("utf-8")

    # --- reserved metadata tables --------------------------------------------

    def _register_meta_producers(self, endpoint: Endpoint | None, now: int | None = None):
        now = self.clock.now_ms() if now is None else now
        cid = f"{self.registry_id}.meta"
        for table in META_TABLES:
            self.register_producer(
                component_id=cid,
                producer_type=ProducerType.CANONICAL,
                table=table,
                view=ViewPredicate.universal(),
                termination_interval_ms=META_INTERVAL_MS,
                endpoint=endpoint,
                answers=frozenset({QueryClass.LATEST, QueryClass.HISTORY}),
                now=now,
                _reserved_ok=True,
            )

    def set_meta_endpoint(self, endpoint: Endpoint):
        """Attach the service endpoint to this registry's metadata producer."""
        self._register_meta_producers(endpoint)

    def meta_rows(self, table: str, now: int | None = None) -> list[Tuple]:
        now = self.clock.now_ms() if now is None else now
        schema = self.get_table(table)
        rows: list[Tuple] = []
        if table == "registry_tables":
            for name, record in sorted(self._schemas.items()):
                rows.append(make_tuple(schema, {
                    "name": name,
                    "column_spec": ", ".join(
                        f"{c.name} {c.type.value}" for c in record.schema.columns
                    ),
                    "defining_key": ",".join(record.schema.defining_key),
                    "ts": record.declared_ms,
                }))
        elif table == "registry_producers":
            for entry in self.live_producers(now):
                rows.append(make_tuple(schema, {
                    "component_id": entry.component_id,
                    "producer_type": entry.producer_type.value,
                    "table_name": entry.table,
                    "view_sql": render_view(entry.view),
                    "endpoint": "" if entry.endpoint is None
                    else f"{entry.endpoint.host}:{entry.endpoint.port}",
                    "ts": entry.registered_ms,
                }))
        elif table == "registry_consumers":
            for entry_c in self.live_consumers(now):
                rows.append(make_tuple(schema, {
                    "component_id": entry_c.component_id,
                    "query_sql": entry_c.query_sql,
                    "query_class": entry_c.query_class.value,
                    "endpoint": "" if entry_c.endpoint is None
                    else f"{entry_c.endpoint.host}:{entry_c.endpoint.port}",
                    "ts": entry_c.registered_ms,
                }))
        else:
            raise SchemaError(f"{table!r} is not a registry metadata table")
        return rows

    def answer_meta_query(self, query: Query, now: int | None = None) -> list[dict]:
        """Canonical handler for the reserved tables."""
        tables = {}
        for tref in query.tables:
            tables[tref.name] = (self.get_table(tref.name), self.meta_rows(tref.name, now))
        return history_query(query, tables)
