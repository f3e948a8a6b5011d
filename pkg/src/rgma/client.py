"""Wire clients: the registry client, the producer client and the network
fabric the mediator uses when components live in other processes. Together
with a notification listener these form the consumer-side library."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

from rgma.errors import ConnectionClosedError, ProtocolError, RgmaError, error_from_wire
from rgma.mediator import PlanTarget
from rgma.registry import ProducerEntry
from rgma.roles import ProducerType, QueryClass
from rgma.sqlcore import (
    Query,
    TableDefinition,
    ViewPredicate,
    parse_create_table,
    parse_select,
    render_select,
    render_view,
)
from rgma.transport import Connection, Endpoint, Message, MessageServer, connect, new_request_id


def _raise_if_error(reply: Message):
    if reply.kind == "Error":
        raise error_from_wire(reply.body.get("code", ""), reply.body.get("message", ""))


class RegistryClient:
    """Serialized request connection to one registry service. Mirrors the
    in-process Registry surface the mediator needs."""

    def __init__(self, endpoint: Endpoint, timeout_ms: int = 10_000):
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self._lock = threading.Lock()
        self._conn: Connection | None = None
        self.registry_id: str | None = None

    def _request(self, kind: str, body: dict) -> Message:
        with self._lock:
            if self._conn is None or self._conn.closed:
                self._conn = connect(self.endpoint, self.timeout_ms)
            try:
                reply = self._conn.request(Message(kind, body))
            except ConnectionClosedError:
                self._conn = connect(self.endpoint, self.timeout_ms)
                reply = self._conn.request(Message(kind, body))
        _raise_if_error(reply)
        return reply

    def declare_table(self, create_sql: str, defining_key: list[str]) -> str:
        reply = self._request("DeclareTable", {
            "createSql": create_sql, "definingKey": list(defining_key)})
        return reply.body["table"]

    def register_producer(self, component_id: str, producer_type: ProducerType, table: str,
                          view: ViewPredicate, termination_interval_ms: int,
                          endpoint: Endpoint | None = None,
                          answers=None) -> int:
        reply = self._request("RegisterProducer", {
            "componentId": component_id,
            "endpoint": None if endpoint is None else endpoint.as_json(),
            "producerType": producer_type.value,
            "table": table,
            "viewSql": render_view(view),
            "terminationIntervalMs": termination_interval_ms,
            "answers": None if answers is None else sorted(a.value for a in answers),
        })
        return int(reply.body["deadline"])

    def register_consumer(self, component_id: str, query_sql: str, query_class: QueryClass,
                          termination_interval_ms: int, endpoint: Endpoint | None = None,
                          ) -> tuple[int, list[ProducerEntry]]:
        reply = self._request("RegisterConsumer", {
            "componentId": component_id,
            "endpoint": None if endpoint is None else endpoint.as_json(),
            "querySql": query_sql,
            "queryClass": query_class.value,
            "terminationIntervalMs": termination_interval_ms,
        })
        entries = [ProducerEntry.from_json(b) for b in reply.body["producers"]]
        return int(reply.body["deadline"]), entries

    def heartbeat(self, component_id: str) -> int:
        reply = self._request("Heartbeat", {"componentId": component_id})
        return int(reply.body["deadline"])

    def unregister(self, component_id: str) -> int:
        reply = self._request("Unregister", {"componentId": component_id})
        return int(reply.body.get("removed", 0))

    def sync(self, snapshot: dict) -> dict:
        reply = self._request("RegistrySync", {"snapshot": snapshot})
        return reply.body["snapshot"]

    def tables(self) -> dict[str, TableDefinition]:
        """Rebuild the schema catalog from the reserved metadata table."""
        rows = self._meta_query("SELECT * FROM registry_tables")
        out: dict[str, TableDefinition] = {}
        for row in rows:
            name, column_spec, key = row["name"], row["column_spec"], row["defining_key"]
            schema = parse_create_table(
                f"CREATE TABLE {name} ({column_spec})", key.split(","))
            out[schema.name] = schema
        return out

    def parse_query(self, query_sql: str) -> Query:
        return parse_select(query_sql, self.tables())

    def _meta_query(self, sql: str) -> list[dict]:
        conn = connect(self.endpoint, self.timeout_ms)
        try:
            qid = new_request_id()
            conn.send(Message("StartQuery", {
                "queryId": qid, "sql": sql, "queryClass": QueryClass.LATEST.value}))
            rows: list[dict] = []
            while True:
                msg = conn.recv()
                _raise_if_error(msg)
                if msg.kind == "EndOfResults":
                    return rows
                if msg.kind != "TupleBatch":
                    raise ProtocolError(f"unexpected {msg.kind} in query exchange")
                cols = msg.body["columns"]
                rows.extend(dict(zip(cols, values)) for values in msg.body["rows"])
        finally:
            conn.close()

    def close(self):
        with self._lock:
            if self._conn is not None:
                self._conn.close()
                self._conn = None


class ProducerClient:
    """Insert/query connection to one producer service."""

    def __init__(self, endpoint: Endpoint, timeout_ms: int = 10_000):
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self._lock = threading.Lock()
        self._conn: Connection | None = None

    def _request(self, kind: str, body: dict) -> Message:
        with self._lock:
            if self._conn is None or self._conn.closed:
                self._conn = connect(self.endpoint, self.timeout_ms)
            reply = self._conn.request(Message(kind, body))
        _raise_if_error(reply)
        return reply

    def insert_rows(self, table: str, rows: list[list], owner: str | None = None) -> int:
        body = {"table": table, "rows": rows}
        if owner is not None:
            body["owner"] = owner
        return int(self._request("Insert", body).body["count"])

    def insert_sql(self, sql: str) -> int:
        return int(self._request("Insert", {"sql": sql}).body["count"])

    def close(self):
        with self._lock:
            if self._conn is not None:
                self._conn.close()
                self._conn = None


@dataclass
class NetworkSubscriptionHandle:
    conn: Connection
    _alive: bool = True

    @property
    def alive(self) -> bool:
        return self._alive and not self.conn.closed

    def close(self):
        self._alive = False
        self.conn.close()


class NetworkFabric:
    """Mediator transport over TCP: one connection per query exchange."""

    def __init__(self, timeout_ms: int = 10_000):
        self.timeout_ms = timeout_ms

    def one_shot(self, target: PlanTarget, fetch_query: Query, qclass: QueryClass) -> list[dict]:
        if target.endpoint is None:
            raise ConnectionClosedError(f"producer {target.component_id} has no endpoint")
        conn = connect(target.endpoint, self.timeout_ms)
        try:
            conn.send(Message("StartQuery", {
                "queryId": new_request_id(),
                "sql": render_select(fetch_query),
                "queryClass": qclass.value,
            }))
            rows: list[dict] = []
            while True:
                msg = conn.recv()
                _raise_if_error(msg)
                if msg.kind == "EndOfResults":
                    return rows
                if msg.kind != "TupleBatch":
                    raise ProtocolError(f"unexpected {msg.kind} in query exchange")
                cols = msg.body["columns"]
                rows.extend(dict(zip(cols, values)) for values in msg.body["rows"])
        finally:
            conn.close()

    def subscribe(self, target: PlanTarget, fetch_query: Query, deliver) -> NetworkSubscriptionHandle:
        if target.endpoint is None:
            raise ConnectionClosedError(f"producer {target.component_id} has no endpoint")
        conn = connect(target.endpoint, self.timeout_ms)
        conn.send(Message("StartQuery", {
            "queryId": new_request_id(),
            "sql": render_select(fetch_query),
            "queryClass": QueryClass.CONTINUOUS.value,
        }))
        handle = NetworkSubscriptionHandle(conn)

        def reader():
            try:
                while True:
                    msg = conn.recv()
                    if msg.kind == "TupleBatch":
                        cols = msg.body["columns"]
                        rows = [dict(zip(cols, values)) for values in msg.body["rows"]]
                        deliver(msg.body.get("table", ""), rows, bool(msg.body.get("backlog")))
                    elif msg.kind in ("Error", "EndOfResults"):
                        return
            except RgmaError:
                return
            finally:
                handle._alive = False

        threading.Thread(target=reader, daemon=True, name=f"sub-{target.component_id}").start()
        return handle


class NotificationListener:
    """Tiny server a consumer runs so the registry can push NotifyNewProducer."""

    def __init__(self, on_notify: Callable[[str, ProducerEntry], None],
                 host: str = "127.0.0.1"):
        self._on_notify = on_notify
        self._server = MessageServer(self._handle, host=host, port=0)

    def _handle(self, conn: Connection, msg: Message):
        if msg.kind != "NotifyNewProducer":
            conn.send(Message("Error", {
                "code": "ProtocolError",
                "message": f"listener only accepts notifications, got {msg.kind}",
            }, msg.request_id))
            return
        entry = ProducerEntry.from_json(msg.body["producer"])
        consumer_id = msg.body.get("consumerId", "")
        try:
            self._on_notify(consumer_id, entry)
        finally:
            conn.send(Message("Ack", {}, msg.request_id))

    def start(self) -> "NotificationListener":
        self._server.start()
        return self

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    def stop(self):
        self._server.stop()


class RemoteSink:
    """Archiver sink adapter for a producer living in another process.

    The sink must already declare every archived table (remote declaration is
    not supported); exclusivity is claimed through the insert path.
    """

    def __init__(self, component_id: str, entries: list[ProducerEntry],
                 schemas: dict[str, TableDefinition], timeout_ms: int = 10_000):
        from rgma.errors import SchemaError

        if not entries:
            raise SchemaError(f"sink {component_id!r} has no registry entries")
        self.component_id = component_id
        self.producer_type = entries[0].producer_type
        self._tables = {e.table for e in entries}
        self._schemas = schemas
        endpoint = entries[0].endpoint
        if endpoint is None:
            raise ConnectionClosedError(f"sink {component_id!r} has no endpoint")
        self._client = ProducerClient(endpoint, timeout_ms)
        self._owner: str | None = None

    def schema_for(self, table: str) -> TableDefinition:
        from rgma.errors import SchemaError

        table = table.lower()
        if table not in self._tables:
            raise SchemaError(f"sink {self.component_id} does not declare {table!r}")
        return self._schemas[table]

    def claim(self, owner: str):
        self._owner = owner
        self._client.insert_rows(next(iter(self._tables)), [], owner=owner)

    def release(self, owner: str):
        self._owner = None

    def insert_rows(self, table: str, rows: list[list]) -> int:
        return self._client.insert_rows(table, rows, owner=self._owner)

    def close(self):
        self._client.close()
