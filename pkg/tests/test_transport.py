import random
import threading

import pytest

from rgma.errors import ConnectionClosedError, FrameError, ProtocolError
from rgma.transport import (
    Endpoint,
    Message,
    MessageServer,
    TerminationInterval,
    connect,
    frame,
    heartbeat_schedule,
    unframe,
)


def test_frame_round_trip():
    msg = Message("Heartbeat", {"componentId": "p1"}, "req-1")
    assert unframe(frame(msg)) == msg


def test_zero_length_frame_rejected():
    with pytest.raises(FrameError):
        unframe(b"\x00\x00\x00\x00")


def test_truncated_frame_rejected():
    data = frame(Message("Ack", {}, "r"))
    with pytest.raises(FrameError):
        unframe(data[:-1])


def test_unknown_kind_rejected():
    bad = b'{"kind":"Bogus","requestId":"","body":{}}'
    data = len(bad).to_bytes(4, "big") + bad
    with pytest.raises(ProtocolError):
        unframe(data)


def test_fuzzed_mutations_never_misparse():
    # decoding either yields a structurally valid message or raises a framing
    # error; nothing else may escape, and valid frames keep round-tripping
    rng = random.Random(1234)
    base = frame(Message("TupleBatch", {"rows": [[1, "x", 0.5]], "queryId": "q1"}, "abc"))
    assert unframe(base).kind == "TupleBatch"
    for _ in range(2000):
        data = bytearray(base)
        for _ in range(rng.randint(1, 4)):
            choice = rng.random()
            if choice < 0.45 and data:
                data[rng.randrange(len(data))] = rng.randrange(256)
            elif choice < 0.75 and data:
                del data[rng.randrange(len(data)) :]
            else:
                data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
        try:
            msg = unframe(bytes(data))
        except (FrameError, ProtocolError):
            continue
        assert msg.kind in {
            "DeclareTable", "RegisterProducer", "RegisterConsumer", "Heartbeat",
            "Unregister", "Insert", "StartQuery", "TupleBatch", "EndOfResults",
            "NotifyNewProducer", "RegistrySync", "Error", "Ack",
        }
        assert isinstance(msg.body, dict)


def test_heartbeat_schedule_half_interval():
    assert heartbeat_schedule(TerminationInterval(60000)) == 30000


def test_heartbeat_schedule_clamped():
    assert heartbeat_schedule(TerminationInterval(300)) == 150
    assert heartbeat_schedule(TerminationInterval(150)) == 100  # floor clamp
    assert heartbeat_schedule(TerminationInterval(10 ** 9)) == 10 ** 9 // 2


def test_expiry_automaton_survives_alternate_drops():
    # discrete-time run of the soft-state contract: heartbeats sent on the
    # half-interval schedule, any pattern without two consecutive drops never
    # lets the deadline pass unrefreshed. Arrivals at an instant are processed
    # before expiry is judged at that same instant.
    rng = random.Random(7)
    interval = 10000
    delay = heartbeat_schedule(TerminationInterval(interval))
    for trial in range(50):
        deadline = interval
        dropped_prev = False
        expired = False
        for k in range(1, 200):
            t = k * delay
            drop = (k % 2 == 0) if trial == 0 else (not dropped_prev and rng.random() < 0.5)
            if t > deadline:
                expired = True
                break
            if not drop:
                deadline = t + interval
            dropped_prev = drop
        assert not expired


def test_server_round_trip_and_bad_frame_isolation():
    def handler(conn, msg):
        conn.send(Message("Ack", {"echo": msg.body}, msg.request_id))

    server = MessageServer(handler).start()
    try:
        c1 = connect(server.endpoint)
        reply = c1.request(Message("Heartbeat", {"componentId": "x"}))
        assert reply.kind == "Ack" and reply.body["echo"] == {"componentId": "x"}

        # a second connection sending garbage dies alone
        c2 = connect(server.endpoint)
        c2._sock.sendall(b"\x00\x00\x00\x00")
        got = c2.recv()
        assert got.kind == "Error"
        with pytest.raises((ConnectionClosedError, FrameError)):
            c2.recv()

        # first connection still works
        reply = c1.request(Message("Heartbeat", {"componentId": "y"}))
        assert reply.body["echo"] == {"componentId": "y"}
        c1.close()
    finally:
        server.stop()


def test_per_connection_ordering():
    seen = []
    lock = threading.Lock()

    def handler(conn, msg):
        with lock:
            seen.append(msg.body["n"])
        conn.send(Message("Ack", {}, msg.request_id))

    server = MessageServer(handler).start()
    try:
        conn = connect(server.endpoint)
        for n in range(50):
            conn.send(Message("Insert", {"n": n}))
        for _ in range(50):
            assert conn.recv().kind == "Ack"
        assert seen == list(range(50))
        conn.close()
    finally:
        server.stop()


def test_endpoint_json_round_trip():
    e = Endpoint("10.0.0.1", 4000)
    assert Endpoint.from_json(e.as_json()) == e
