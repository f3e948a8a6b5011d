"""Network services: registry, producer host, consumer service (TCP plus the
HTTP long-poll surface the browser uses), and the archiver runner.

Each service wraps the corresponding core object behind the framed message
protocol; `python -m rgma.service <role> ...` runs one as a process.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
import queue as queue_mod
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from rgma.archiver import Archiver, ArchiverSpec
from rgma.client import (
    NetworkFabric,
    NotificationListener,
    ProducerClient,
    RegistryClient,
    RemoteSink,
)
from rgma.clock import WallClock
from rgma.datamodel import CleanupRule, RetentionRule
from rgma.errors import (
    RgmaError,
    SchemaError,
    UnsupportedQueryClassError,
    error_from_wire,
)
from rgma.mediator import Mediator, ResultRow
from rgma.producers import ProducerInstance
from rgma.registry import ProducerEntry, Registry
from rgma.roles import ProducerType, QueryClass
from rgma.sqlcore import (
    parse_condition_text,
    parse_create_table,
    parse_select,
    parse_view_predicate,
)
from rgma.transport import (
    Connection,
    Endpoint,
    Message,
    MessageServer,
    connect,
    heartbeat_schedule,
)

log = logging.getLogger("rgma.service")

DEMO_TABLES = [
    ("CREATE TABLE Service (uri STRING, site STRING, type STRING, ts TIMESTAMP)", ["uri"]),
    ("CREATE TABLE ServiceStatus (uri STRING, up INT, message STRING, ts TIMESTAMP)", ["uri"]),
]


def _error_reply(conn: Connection, exc: Exception, request_id: str):
    conn.send(Message("Error", {
        "code": type(exc).__name__, "message": str(exc)}, request_id))


class RegistryService:
    """Serves one registry replica; all mutations funnel through one lock."""

    def __init__(self, registry: Registry, host: str = "127.0.0.1", port: int = 0,
                 peers: list[Endpoint] | None = None, sync_period_ms: int = 2000,
                 sweep_period_ms: int = 1000):
        self.registry = registry
        self._lock = threading.RLock()
        self._server = MessageServer(self._handle, host=host, port=port)
        self.peers = list(peers or [])
        self.sync_period_ms = sync_period_ms
        self.sweep_period_ms = sweep_period_ms
        self._stop = threading.Event()

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    def start(self) -> "RegistryService":
        self._server.start()
        with self._lock:
            self.registry.notifier = self._notify
            self.registry.set_meta_endpoint(self.endpoint)
        threading.Thread(target=self._sweep_loop, daemon=True).start()
        if self.peers:
            threading.Thread(target=self._sync_loop, daemon=True).start()
        return self

    def stop(self):
        self._stop.set()
        self._server.stop()

    # --- background maintenance -------------------------------------------

    def _sweep_loop(self):
        while not self._stop.wait(self.sweep_period_ms / 1000.0):
            with self._lock:
                self.registry.expire_sweep()

    def _sync_loop(self):
        while not self._stop.wait(self.sync_period_ms / 1000.0):
            for peer in self.peers:
                try:
                    with self._lock:
                        snapshot = self.registry.mastered_snapshot()
                    conn = connect(peer, timeout_ms=5000)
                    try:
                        reply = conn.request(Message("RegistrySync", {"snapshot": snapshot}))
                    finally:
                        conn.close()
                    if reply.kind == "Ack":
                        with self._lock:
                            self.registry.replica_sync(reply.body["snapshot"])
                except RgmaError as exc:
                    log.debug("sync with %s failed: %s", peer, exc)

    def _notify(self, consumer_entry, producer_entry):
        if consumer_entry.endpoint is None:
            return

        def deliver():
            try:
                conn = connect(consumer_entry.endpoint, timeout_ms=5000)
                try:
                    conn.request(Message("NotifyNewProducer", {
                        "consumerId": consumer_entry.component_id,
                        "producer": producer_entry.to_json(),
                    }))
                finally:
                    conn.close()
            except RgmaError as exc:
                log.warning("notify %s failed: %s", consumer_entry.component_id, exc)

        threading.Thread(target=deliver, daemon=True).start()

    # --- protocol ---------------------------------------------------------------

    def _handle(self, conn: Connection, msg: Message):
        try:
            if msg.kind == "DeclareTable":
                schema = parse_create_table(msg.body["createSql"], msg.body["definingKey"])
                with self._lock:
                    self.registry.declare_table(schema)
                conn.send(Message("Ack", {"table": schema.name}, msg.request_id))
            elif msg.kind == "RegisterProducer":
                body = msg.body
                with self._lock:
                    schema = self.registry.get_table(body["table"])
                    view = parse_view_predicate(body.get("viewSql", ""), schema)
                    answers = body.get("answers")
                    entry = self.registry.register_producer(
                        component_id=body["componentId"],
                        producer_type=ProducerType(body["producerType"]),
                        table=body["table"],
                        view=view,
                        termination_interval_ms=int(body["terminationIntervalMs"]),
                        endpoint=None if body.get("endpoint") is None
                        else Endpoint.from_json(body["endpoint"]),
                        answers=None if answers is None
                        else frozenset(QueryClass(a) for a in answers),
                    )
                conn.send(Message("Ack", {"deadline": entry.termination_deadline},
                                  msg.request_id))
            elif msg.kind == "RegisterConsumer":
                body = msg.body
                with self._lock:
                    entry_c, producers = self.registry.register_consumer(
                        component_id=body["componentId"],
                        query_sql=body["querySql"],
                        query_class=QueryClass(body["queryClass"]),
                        termination_interval_ms=int(body["terminationIntervalMs"]),
                        endpoint=None if body.get("endpoint") is None
                        else Endpoint.from_json(body["endpoint"]),
                    )
                conn.send(Message("Ack", {
                    "deadline": entry_c.termination_deadline,
                    "producers": [e.to_json() for e in producers],
                }, msg.request_id))
            elif msg.kind == "Heartbeat":
                with self._lock:
                    deadline = self.registry.heartbeat(msg.body["componentId"])
                conn.send(Message("Ack", {"deadline": deadline}, msg.request_id))
            elif msg.kind == "Unregister":
                with self._lock:
                    removed = self.registry.unregister(msg.body["componentId"])
                conn.send(Message("Ack", {"removed": removed}, msg.request_id))
            elif msg.kind == "RegistrySync":
                with self._lock:
                    self.registry.replica_sync(msg.body["snapshot"])
                    snapshot = self.registry.mastered_snapshot()
                conn.send(Message("Ack", {"snapshot": snapshot}, msg.request_id))
            elif msg.kind == "StartQuery":
                self._meta_query(conn, msg)
            else:
                raise RgmaError(f"registry does not handle {msg.kind}")
        except Exception as exc:  # noqa: BLE001
            _error_reply(conn, exc, msg.request_id)

    def _meta_query(self, conn: Connection, msg: Message):
        qid = msg.body.get("queryId", msg.request_id)
        qclass = QueryClass(msg.body["queryClass"])
        if qclass is QueryClass.CONTINUOUS:
            raise UnsupportedQueryClassError("registry metadata supports latest/history only")
        with self._lock:
            query = self.registry.parse_query(msg.body["sql"])
            rows = self.registry.answer_meta_query(query)
        from rgma.sqlcore import output_columns

        with self._lock:
            cols = output_columns(query, self.registry.tables())
        batch = [[row[c] for c in cols] for row in rows]
        conn.send(Message("TupleBatch", {
            "queryId": qid, "table": query.tables[0].name, "columns": cols,
            "rows": batch, "backlog": False,
            "origin": f"{self.registry.registry_id}.meta",
        }, msg.request_id))
        conn.send(Message("EndOfResults", {"queryId": qid}, msg.request_id))


class ProducerService:
    """Hosts one producer instance: registration, heartbeats, the insert path
    and query exchanges including continuous subscriptions."""

    QUEUE_CAPACITY = 10_000

    def __init__(self, producer: ProducerInstance, registry_endpoint: Endpoint,
                 host: str = "127.0.0.1", port: int = 0,
                 termination_interval_ms: int = 10_000,
                 declare_tables: bool = True,
                 cleanup_period_ms: int = 500):
        self.producer = producer
        self.registry = RegistryClient(registry_endpoint)
        self.termination_interval_ms = termination_interval_ms
        self.declare_tables = declare_tables
        self.cleanup_period_ms = cleanup_period_ms
        self._server = MessageServer(self._handle, host=host, port=port,
                                     on_disconnect=self._drop_connection)
        self._stop = threading.Event()
        self._conn_subs: dict[int, list] = {}
        self._lock = threading.Lock()

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    def start(self) -> "ProducerService":
        self._server.start()
        if self.declare_tables:
            from rgma.sqlcore import render_create_table

            for table in self.producer.tables():
                schema = self.producer.schema_for(table)
                try:
                    self.registry.declare_table(render_create_table(schema),
                                                list(schema.defining_key))
                except SchemaError:
                    pass  # already declared identically elsewhere
        self._register()
        threading.Thread(target=self._heartbeat_loop, daemon=True).start()
        threading.Thread(target=self._cleanup_loop, daemon=True).start()
        return self

    def _register(self):
        for table in self.producer.tables():
            self.registry.register_producer(
                component_id=self.producer.component_id,
                producer_type=self.producer.producer_type,
                table=table,
                view=self.producer.view_for(table),
                termination_interval_ms=self.termination_interval_ms,
                endpoint=self.endpoint,
                answers=self.producer.answers,
            )

    def _heartbeat_loop(self):
        delay = heartbeat_schedule(self.termination_interval_ms) / 1000.0
        while not self._stop.wait(delay):
            try:
                self.registry.heartbeat(self.producer.component_id)
            except RgmaError:
                try:
                    self._register()  # expired: re-register
                except RgmaError as exc:
                    log.warning("re-register failed: %s", exc)

    def _cleanup_loop(self):
        while not self._stop.wait(self.cleanup_period_ms / 1000.0):
            try:
                self.producer.run_due_cleanup()
            except RgmaError as exc:
                log.warning("cleanup failed: %s", exc)

    def stop(self):
        self._stop.set()
        self._server.stop()
        self.producer.close()

    # --- protocol -----------------------------------------------------------

    def _handle(self, conn: Connection, msg: Message):
        try:
            if msg.kind == "Insert":
                owner = msg.body.get("owner")
                if owner:
                    self.producer.claim(owner)
                if "sql" in msg.body:
                    count = self.producer.insert_sql(msg.body["sql"])
                else:
                    count = self.producer.insert_rows(
                        msg.body["table"], msg.body.get("rows", []))
                conn.send(Message("Ack", {"count": count}, msg.request_id))
            elif msg.kind == "StartQuery":
                self._start_query(conn, msg)
            elif msg.kind == "Unregister":
                # a polite client closing its subscription exchange
                conn.send(Message("Ack", {}, msg.request_id))
            else:
                raise RgmaError(f"producer does not handle {msg.kind}")
        except Exception as exc:  # noqa: BLE001
            _error_reply(conn, exc, msg.request_id)

    def _start_query(self, conn: Connection, msg: Message):
        qid = msg.body.get("queryId", msg.request_id)
        qclass = QueryClass(msg.body["queryClass"])
        schemas = {t: self.producer.schema_for(t) for t in self.producer.tables()}
        query = parse_select(msg.body["sql"], schemas)
        from rgma.sqlcore import output_columns

        cols = output_columns(query, schemas)
        origin = self.producer.component_id
        if qclass in (QueryClass.LATEST, QueryClass.HISTORY):
            rows = self.producer.answer_query(query, qclass)
            for start in range(0, len(rows), 500):
                chunk = rows[start:start + 500]
                conn.send(Message("TupleBatch", {
                    "queryId": qid, "table": query.tables[0].name, "columns": cols,
                    "rows": [[r[c] for c in cols] for r in chunk],
                    "backlog": False, "origin": origin,
                }, msg.request_id))
            conn.send(Message("EndOfResults", {"queryId": qid}, msg.request_id))
            return

        # continuous: bounded per-subscriber queue + writer thread; a slow
        # consumer that overflows the queue is disconnected
        out: queue_mod.Queue = queue_mod.Queue(maxsize=self.QUEUE_CAPACITY)

        def sink(table: str, rows: list[dict], backlog: bool):
            try:
                out.put_nowait((table, rows, backlog))
            except queue_mod.Full:
                raise RgmaError("subscriber queue overflow")  # drops the subscription

        sub = self.producer.subscribe(query, sink)
        with self._lock:
            self._conn_subs.setdefault(id(conn), []).append(sub.sub_id)

        def writer():
            while not conn.closed and not sub.closed:
                try:
                    table, rows, backlog = out.get(timeout=0.25)
                except queue_mod.Empty:
                    continue
                try:
                    conn.send(Message("TupleBatch", {
                        "queryId": qid, "table": table, "columns": cols,
                        "rows": [[r[c] for c in cols] for r in rows],
                        "backlog": backlog, "origin": origin,
                    }, msg.request_id))
                except RgmaError:
                    break
            self.producer.unsubscribe(sub.sub_id)

        threading.Thread(target=writer, daemon=True, name=f"writer-{qid}").start()

    def _drop_connection(self, conn: Connection):
        with self._lock:
            subs = self._conn_subs.pop(id(conn), [])
        for sub_id in subs:
            self.producer.unsubscribe(sub_id)


class _HttpQuery:
    def __init__(self, qid: str, columns: list[str], continuous: bool):
        self.qid = qid
        self.columns = columns
        self.continuous = continuous
        self.rows: queue_mod.Queue = queue_mod.Queue(maxsize=100_000)
        self.done = False
        self.no_producers = False
        self.session = None
        self.last_poll = time.monotonic()


class ConsumerService:
    """Consumer-side service: runs the mediator on behalf of clients, over the
    framed protocol and an HTTP long-poll surface (POST /query,
    GET /query/{id}/next, DELETE /query/{id})."""

    IDLE_TIMEOUT_S = 120.0

    def __init__(self, registry_endpoint: Endpoint, host: str = "127.0.0.1",
                 tcp_port: int = 0, http_port: int = 0, ui_dir: str | None = None,
                 session_interval_ms: int = 30_000):
        self.registry = RegistryClient(registry_endpoint)
        self.fabric = NetworkFabric()
        self.mediator = Mediator(self.registry, self.fabric,
                                 session_interval_ms=session_interval_ms)
        self.ui_dir = ui_dir
        self._sessions: dict[str, object] = {}  # consumer id -> ConsumerSession
        self._http_queries: dict[str, _HttpQuery] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self.listener = NotificationListener(self._on_notify, host=host)
        self._server = MessageServer(self._handle_tcp, host=host, port=tcp_port,
                                     on_disconnect=self._drop_tcp)
        self._tcp_sessions: dict[int, object] = {}
        self._http = ThreadingHTTPServer((host, http_port), _make_http_handler(self))
        self._http.daemon_threads = True

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    @property
    def http_endpoint(self) -> Endpoint:
        host, port = self._http.server_address[:2]
        return Endpoint(str(host), int(port))

    def start(self) -> "ConsumerService":
        self.listener.start()
        self._server.start()
        threading.Thread(target=self._http.serve_forever, daemon=True).start()
        threading.Thread(target=self._maintenance_loop, daemon=True).start()
        return self

    def stop(self):
        self._stop.set()
        with self._lock:
            queries = list(self._http_queries.values())
        for q in queries:
            self._close_query(q)
        self._http.shutdown()
        self._server.stop()
        self.listener.stop()

    def _on_notify(self, consumer_id: str, entry: ProducerEntry):
        session = self._sessions.get(consumer_id)
        if session is not None:
            session.on_new_producer(entry)

    def _maintenance_loop(self):
        while not self._stop.wait(2.0):
            now = time.monotonic()
            with self._lock:
                stale = [q for q in self._http_queries.values()
                         if q.continuous and now - q.last_poll > self.IDLE_TIMEOUT_S]
            for q in stale:
                log.info("closing idle query %s", q.qid)
                self._close_query(q)
            for cid in list(self._sessions):
                try:
                    self.registry.heartbeat(cid)
                except RgmaError:
                    pass

    # --- shared query opening -------------------------------------------------

    def open_query(self, sql: str, qclass: QueryClass, on_row) -> tuple[object, list[str]]:
        """Continuous: returns (session, columns); rows flow to on_row."""
        session = self.mediator.query_continuous(
            sql, on_row, endpoint=self.listener.endpoint)
        self._sessions[session.component_id] = session
        return session, session.columns

    # --- TCP ----------------------------------------------------------------------

    def _handle_tcp(self, conn: Connection, msg: Message):
        try:
            if msg.kind != "StartQuery":
                raise RgmaError(f"consumer service handles StartQuery, got {msg.kind}")
            qid = msg.body.get("queryId", msg.request_id)
            qclass = QueryClass(msg.body["queryClass"])
            sql = msg.body["sql"]
            if qclass is QueryClass.CONTINUOUS:
                out: queue_mod.Queue = queue_mod.Queue(maxsize=100_000)

                def on_row(row: ResultRow):
                    try:
                        out.put_nowait(row)
                    except queue_mod.Full:
                        pass

                session, cols = self.open_query(sql, qclass, on_row)
                with self._lock:
                    self._tcp_sessions[id(conn)] = session

                def writer():
                    while not conn.closed and not session.closed:
                        try:
                            row = out.get(timeout=0.25)
                        except queue_mod.Empty:
                            continue
                        try:
                            conn.send(Message("TupleBatch", {
                                "queryId": qid, "columns": cols,
                                "rows": [list(row.values)], "backlog": row.backlog,
                                "origin": row.origin,
                            }, msg.request_id))
                        except RgmaError:
                            break

                threading.Thread(target=writer, daemon=True).start()
                return
            result = self.mediator.query_once(sql, qclass)
            for start in range(0, len(result.rows), 500):
                chunk = result.rows[start:start + 500]
                conn.send(Message("TupleBatch", {
                    "queryId": qid, "columns": result.columns,
                    "rows": [list(r.values) for r in chunk],
                    "origins": [r.origin for r in chunk],
                    "backlog": False, "origin": "",
                }, msg.request_id))
            conn.send(Message("EndOfResults", {
                "queryId": qid, "noProducers": result.no_producers,
                "failures": [list(f) for f in result.failures],
            }, msg.request_id))
        except Exception as exc:  # noqa: BLE001
            _error_reply(conn, exc, msg.request_id)

    def _drop_tcp(self, conn: Connection):
        with self._lock:
            session = self._tcp_sessions.pop(id(conn), None)
        if session is not None:
            self._sessions.pop(session.component_id, None)
            self.mediator.close_session(session)

    # --- HTTP ------------------------------------------------------------------------

    def http_post_query(self, body: dict) -> dict:
        sql = body.get("sql", "")
        class_name = str(body.get("class", "latest")).lower()
        try:
            qclass = QueryClass(class_name)
        except ValueError:
            raise UnsupportedQueryClassError(f"unknown query class {class_name!r}") from None
        qid = f"q{int(time.time() * 1000)}-{len(self._http_queries)}-{os.getpid() % 997}"
        if qclass is QueryClass.CONTINUOUS:
            holder = _HttpQuery(qid, [], continuous=True)

            def on_row(row: ResultRow):
                try:
                    holder.rows.put_nowait(row)
                except queue_mod.Full:
                    pass

            session, cols = self.open_query(sql, qclass, on_row)
            holder.columns = cols
            holder.session = session
            with self._lock:
                self._http_queries[qid] = holder
            return {"queryId": qid, "columns": cols}
        result = self.mediator.query_once(sql, qclass)
        holder = _HttpQuery(qid, result.columns, continuous=False)
        for row in result.rows:
            holder.rows.put_nowait(row)
        holder.done = True
        holder.no_producers = result.no_producers
        with self._lock:
            self._http_queries[qid] = holder
        return {"queryId": qid, "columns": result.columns,
                "noProducers": result.no_producers}

    def http_next(self, qid: str, timeout_ms: int) -> dict:
        with self._lock:
            holder = self._http_queries.get(qid)
        if holder is None:
            raise SchemaError(f"unknown query id {qid!r}")
        holder.last_poll = time.monotonic()
        rows, origins, backlog = [], [], []
        deadline = time.monotonic() + min(timeout_ms, 30_000) / 1000.0
        while True:
            try:
                row = holder.rows.get_nowait()
                rows.append(list(row.values))
                origins.append(row.origin)
                backlog.append(row.backlog)
                if len(rows) >= 2000:
                    break
                continue
            except queue_mod.Empty:
                pass
            if rows or holder.done and holder.rows.empty():
                break
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                row = holder.rows.get(timeout=min(remaining, 0.2))
                rows.append(list(row.values))
                origins.append(row.origin)
                backlog.append(row.backlog)
            except queue_mod.Empty:
                continue
        done = holder.done and holder.rows.empty()
        out = {"rows": rows, "origins": origins, "backlog": backlog, "done": done}
        if holder.no_producers:
            out["noProducers"] = True
        return out

    def http_delete(self, qid: str) -> dict:
        with self._lock:
            holder = self._http_queries.pop(qid, None)
        if holder is None:
            raise SchemaError(f"unknown query id {qid!r}")
        self._close_query(holder, pop=False)
        return {"closed": True}

    def _close_query(self, holder: _HttpQuery, pop: bool = True):
        if pop:
            with self._lock:
                self._http_queries.pop(holder.qid, None)
        if holder.session is not None:
            self._sessions.pop(holder.session.component_id, None)
            self.mediator.close_session(holder.session)
            holder.session = None
        holder.done = True


def _make_http_handler(service: ConsumerService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet
            log.debug("http: " + fmt, *args)

        def _send_json(self, payload: dict, status: int = 200):
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self._cors()
            self.end_headers()
            self.wfile.write(data)

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def _fail(self, exc: Exception, status: int = 400):
            self._send_json({"error": str(exc), "code": type(exc).__name__}, status)

        def do_POST(self):
            parsed = urlparse(self.path)
            if parsed.path != "/query":
                self._send_json({"error": "not found"}, 404)
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                self._send_json(service.http_post_query(body))
            except RgmaError as exc:
                self._fail(exc)
            except json.JSONDecodeError as exc:
                self._fail(exc)

        def do_GET(self):
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if len(parts) == 3 and parts[0] == "query" and parts[2] == "next":
                params = parse_qs(parsed.query)
                timeout_ms = int(params.get("timeoutMs", ["1000"])[0])
                try:
                    self._send_json(service.http_next(parts[1], timeout_ms))
                except RgmaError as exc:
                    self._fail(exc, 404)
                return
            self._serve_static(parsed.path)

        def do_DELETE(self):
            parts = [p for p in urlparse(self.path).path.split("/") if p]
            if len(parts) == 2 and parts[0] == "query":
                try:
                    self._send_json(service.http_delete(parts[1]))
                except RgmaError as exc:
                    self._fail(exc, 404)
                return
            self._send_json({"error": "not found"}, 404)

        def _serve_static(self, path: str):
            if service.ui_dir is None:
                self._send_json({"error": "no ui bundled"}, 404)
                return
            rel = path.lstrip("/") or "index.html"
            full = os.path.realpath(os.path.join(service.ui_dir, rel))
            root = os.path.realpath(service.ui_dir)
            if not full.startswith(root) or not os.path.isfile(full):
                self._send_json({"error": "not found"}, 404)
                return
            ctype = {
                ".html": "text/html", ".js": "text/javascript",
                ".css": "text/css", ".map": "application/json",
            }.get(os.path.splitext(full)[1], "application/octet-stream")
            with open(full, "rb") as f:
                data = f.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self._cors()
            self.end_headers()
            self.wfile.write(data)

    return Handler


# --- process entry points ------------------------------------------------------

def _parse_endpoint(text: str) -> Endpoint:
    host, _, port = text.rpartition(":")
    return Endpoint(host or "127.0.0.1", int(port))


def _wait_forever():
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    while not stop.is_set():
        stop.wait(0.5)


def _write_ready(path: str | None, payload: dict):
    if not path:
        return
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    os.replace(tmp, path)


def registry_main(argv=None):
    ap = argparse.ArgumentParser(prog="rgma-registry", description="registry + schema service")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=7474)
    ap.add_argument("--id", default="r0")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--demo", action="store_true", help="declare the demo service tables")
    ap.add_argument("--peer", action="append", default=[], help="peer registry HOST:PORT")
    ap.add_argument("--sync-period", type=int, default=2000)
    ap.add_argument("--sweep-period", type=int, default=1000)
    ap.add_argument("--ready-file", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    storage = None
    if args.data_dir:
        os.makedirs(args.data_dir, exist_ok=True)
        storage = os.path.join(args.data_dir, f"{args.id}.state")
    registry = Registry(args.id, clock=WallClock(), storage_path=storage)
    if args.demo:
        for sql, key in DEMO_TABLES:
            try:
                registry.declare_table(parse_create_table(sql, key))
            except SchemaError:
                pass
    service = RegistryService(
        registry, host=args.host, port=args.port,
        peers=[_parse_endpoint(p) for p in args.peer],
        sync_period_ms=args.sync_period, sweep_period_ms=args.sweep_period,
    ).start()
    _write_ready(args.ready_file, {"pid": os.getpid(), "host": service.endpoint.host,
                                   "port": service.endpoint.port})
    log.info("registry %s on %s:%d", args.id, service.endpoint.host, service.endpoint.port)
    _wait_forever()
    service.stop()


def producer_main(argv=None):
    ap = argparse.ArgumentParser(prog="rgma-producer", description="host one producer")
    ap.add_argument("--registry", required=True, help="HOST:PORT")
    ap.add_argument("--id", required=True)
    ap.add_argument("--type", required=True,
                    choices=[t.value for t in ProducerType if t is not ProducerType.CANONICAL])
    ap.add_argument("--table", action="append", default=[],
                    help="already-declared table name (repeatable)")
    ap.add_argument("--create", action="append", default=[],
                    help="CREATE TABLE statement (repeatable, with matching --key)")
    ap.add_argument("--key", action="append", default=[],
                    help="comma-separated defining key for each --create")
    ap.add_argument("--where", default="", help="view predicate for every table")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    ap.add_argument("--interval", type=int, default=10_000)
    ap.add_argument("--ring", type=int, default=1024)
    ap.add_argument("--wal", default=None)
    ap.add_argument("--store-dir", default=None)
    ap.add_argument("--cleanup-where", default=None)
    ap.add_argument("--cleanup-interval", type=int, default=60_000)
    ap.add_argument("--keep-newest", type=int, default=None)
    ap.add_argument("--ready-file", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)

    registry = RegistryClient(_parse_endpoint(args.registry))
    if len(args.create) != len(args.key):
        ap.error("each --create needs a matching --key")
    declarations = []
    for sql, key in zip(args.create, args.key):
        schema = parse_create_table(sql, [k.strip() for k in key.split(",")])
        registry.declare_table(sql, list(schema.defining_key))
        declarations.append(schema)
    catalog = registry.tables()
    for name in args.table:
        if name.lower() not in catalog:
            raise SystemExit(f"table {name!r} is not declared at the registry")
        declarations.append(catalog[name.lower()])
    if not declarations:
        ap.error("need at least one --table or --create")

    ptype = ProducerType(args.type)
    pairs = [(schema, parse_view_predicate(args.where, schema)) for schema in declarations]
    producer = ProducerInstance(
        args.id, ptype, pairs, ring_capacity=args.ring,
        wal_path=args.wal, store_dir=args.store_dir,
    )
    if args.cleanup_where:
        for schema, _ in pairs:
            producer.schedule_cleanup(CleanupRule(
                schema.name,
                parse_condition_text(args.cleanup_where, schema, allow_now=True),
                args.cleanup_interval))
    if args.keep_newest is not None:
        for schema, _ in pairs:
            producer.schedule_cleanup(RetentionRule(
                schema.name, args.keep_newest, args.cleanup_interval))
    service = ProducerService(
        producer, _parse_endpoint(args.registry), host=args.host, port=args.port,
        termination_interval_ms=args.interval, declare_tables=False,
    ).start()
    _write_ready(args.ready_file, {
        "pid": os.getpid(), "host": service.endpoint.host, "port": service.endpoint.port,
        "componentId": args.id, "type": ptype.value,
        "tables": [s.name for s in declarations],
    })
    log.info("producer %s (%s) on %s:%d", args.id, ptype.value,
             service.endpoint.host, service.endpoint.port)
    _wait_forever()
    service.stop()


def consumer_main(argv=None):
    ap = argparse.ArgumentParser(prog="rgma-consumer",
                                 description="consumer service with HTTP long-poll")
    ap.add_argument("--registry", required=True, help="HOST:PORT")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--tcp-port", type=int, default=7475)
    ap.add_argument("--http-port", type=int, default=8080)
    ap.add_argument("--ui", default=None, help="directory with the built browser UI")
    ap.add_argument("--ready-file", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    service = ConsumerService(
        _parse_endpoint(args.registry), host=args.host,
        tcp_port=args.tcp_port, http_port=args.http_port, ui_dir=args.ui,
    ).start()
    _write_ready(args.ready_file, {
        "pid": os.getpid(), "tcp": service.endpoint.port,
        "http": service.http_endpoint.port})
    log.info("consumer service tcp %s:%d http %s:%d",
             service.endpoint.host, service.endpoint.port,
             service.http_endpoint.host, service.http_endpoint.port)
    _wait_forever()
    service.stop()


def archiver_main(argv=None):
    ap = argparse.ArgumentParser(prog="rgma-archiver", description="stream republisher")
    ap.add_argument("--registry", required=True, help="HOST:PORT")
    ap.add_argument("--id", required=True)
    ap.add_argument("--tables", required=True, help="comma-separated tables to archive")
    ap.add_argument("--sink", required=True, help="component id of the sink producer")
    ap.add_argument("--where", default=None, help="condition applied to every table")
    ap.add_argument("--interval", type=int, default=10_000)
    ap.add_argument("--ready-file", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)

    registry = RegistryClient(_parse_endpoint(args.registry))
    schemas = registry.tables()
    rows = registry._meta_query(
        f"SELECT * FROM registry_producers WHERE component_id = '{args.sink}'")
    entries = []
    for row in rows:
        host, _, port = row["endpoint"].rpartition(":")
        entries.append(ProducerEntry(
            component_id=row["component_id"],
            endpoint=Endpoint(host, int(port)) if row["endpoint"] else None,
            producer_type=ProducerType(row["producer_type"]),
            table=row["table_name"], view=parse_view_predicate(None, schemas[row["table_name"]]),
            termination_deadline=0, termination_interval_ms=1,
            master_registry_id="", version=0, registered_ms=0,
        ))
    sink = RemoteSink(args.sink, entries, schemas)
    mediator = Mediator(registry, NetworkFabric(), session_interval_ms=args.interval)
    tables = [(t.strip(), args.where) for t in args.tables.split(",") if t.strip()]
    listener = NotificationListener(lambda cid, entry: dispatch(cid, entry)).start()
    sessions = {}

    def dispatch(cid, entry):
        session = sessions.get(cid)
        if session is not None:
            session.on_new_producer(entry)

    archiver = Archiver(args.id, ArchiverSpec(tables, args.sink), mediator, sink,
                        threaded=True).start()
    for feed in archiver._feeds.values():
        sessions[feed.session.component_id] = feed.session

    def heartbeats():
        delay = heartbeat_schedule(args.interval) / 1000.0
        while True:
            time.sleep(delay)
            for cid in list(sessions):
                try:
                    registry.heartbeat(cid)
                except RgmaError:
                    pass

    threading.Thread(target=heartbeats, daemon=True).start()
    _write_ready(args.ready_file, {"pid": os.getpid(), "id": args.id})
    log.info("archiver %s -> %s", args.id, args.sink)
    _wait_forever()
    archiver.stop()
    listener.stop()


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    roles = {
        "registry": registry_main,
        "producer": producer_main,
        "consumer": consumer_main,
        "archiver": archiver_main,
    }
    if not argv or argv[0] not in roles:
        print(f"usage: python -m rgma.service {{{'|'.join(roles)}}} ...", file=sys.stderr)
        return 2
    roles[argv[0]](argv[1:])
    return 0


if __name__ == "__main__":
    sys.exit(main())
