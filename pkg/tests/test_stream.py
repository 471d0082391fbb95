import json
import os
import socket
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from seer.errors import ConfigError, ProtocolError
from seer.road import build_straight_highway
from seer.stream import (ControlMessage, FlagMessage, FrameMessage, TelemetryServer, VehicleMessage,
                         client_read, connect, decode_control, decode_frame, encode, frame_message,
                         send_control)
from seer.world import World, WorldSettings

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden_100.ndjson")

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
vehicle = st.builds(VehicleMessage, st.integers(0, 10**6), finite, finite, finite, finite, finite, finite,
                    st.booleans(), st.booleans(), st.none() | st.integers(0, 6),
                    st.none() | st.integers(0, 4))
flag = st.builds(FlagMessage, st.tuples(st.integers(0, 5), st.integers(0, 300)),
                 st.tuples(st.integers(0, 50), st.integers(0, 50)), st.tuples(finite, finite))
frames = st.builds(FrameMessage, st.integers(0, 10**9), st.integers(0, 10**9),
                   st.lists(vehicle, max_size=6, unique_by=lambda v: v.id).map(tuple),
                   st.none() | st.lists(flag, max_size=3).map(tuple))


@settings(max_examples=200, deadline=None)
@given(frames)
def test_frame_wire_roundtrip(msg):
    line = encode(msg)
    assert decode_frame(line) == msg
    assert encode(decode_frame(line)) == line


def test_control_roundtrip():
    for msg in (ControlMessage(3, 0.5, 0.0, 0.0, -0.1, True, False),
                ControlMessage(command="pause"), ControlMessage(command="reseed", seed=9),
                ControlMessage(command="set_intention", agent=2, intention=1)):
        assert decode_control(encode(msg)) == msg


@pytest.mark.parametrize("bad, field", [
    ({"tick": -1}, "tick"),
    ({"vehicles": {}}, "vehicles"),
    ({"extra": 1}, "extra"),
    ({"v": 2}, "v"),
])
def test_frame_validation_names_field(bad, field):
    d = {"v": 1, "type": "frame", "tick": 1, "timestamp_ms": 0, "vehicles": []} | bad
    with pytest.raises(ProtocolError) as info:
        decode_frame(json.dumps(d))
    assert info.value.field == field


def test_vehicle_validation():
    v = {"id": 1, "x": 0, "y": 0, "heading": 0, "v_lon": 0, "v_lat": 0, "tire_angle": 0}
    frame = {"v": 1, "type": "frame", "tick": 1, "timestamp_ms": 0}
    with pytest.raises(ProtocolError, match="duplicate"):
        decode_frame(json.dumps(frame | {"vehicles": [v, v]}))
    with pytest.raises(ProtocolError) as info:
        decode_frame(json.dumps(frame | {"vehicles": [v | {"x": "a"}]}))
    assert info.value.field == "vehicles[0].x"
    with pytest.raises(ProtocolError, match="parse"):
        decode_frame("{oops")
    with pytest.raises(ProtocolError) as info:
        decode_control(json.dumps({"v": 1, "type": "command", "command": "fly"}))
    assert info.value.field == "command"


def test_empty_and_truncated_streams(tmp_path):
    empty = tmp_path / "e"
    empty.write_bytes(b"")
    with open(empty, "rb") as fh:
        assert list(client_read(fh)) == []
    golden = open(GOLDEN, "rb").read()
    cut = tmp_path / "c"
    cut.write_bytes(golden[: len(golden) // 2])
    with open(cut, "rb") as fh:
        got = list(client_read(fh))
    assert 0 < len(got) < 100


def test_golden_capture():
    with open(GOLDEN, "rb") as fh:
        lines = fh.readlines()
    with open(GOLDEN, "rb") as fh:
        msgs = list(client_read(fh))
    assert len(msgs) == 100
    assert [encode(m) for m in msgs] == lines
    assert [m.tick for m in msgs] == [20 * (k + 1) for k in range(100)]
    assert sum(m.flags is not None for m in msgs) == 4
    # the capture came from seed 11, four agents, default road
    world = World(build_straight_highway(3, 3, 6.5, 1000), 11, WorldSettings(agents=4))
    for m in msgs[:10]:
        fr = world.step_frame()
        for v, f in zip(m.vehicles, fr):
            assert v.id == f.agent_id and v.intention == int(f.label)
            assert v.x == pytest.approx(f.state.x, abs=1e-9) and v.y == pytest.approx(f.state.y, abs=1e-9)


# -- live server -----------------------------------------------------------------------------

def _wait(pred, timeout=5.0):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if pred():
            return True
        time.sleep(0.01)
    return False


def _reader(sock, n, out):
    for msg in client_read(sock):
        out.append(msg)
        if len(out) >= n:
            break


def _frame(tick, n_vehicles=3):
    return FrameMessage(tick, tick * 10, tuple(VehicleMessage(i, 1.0 * i, 2.0, 0.0, 5.0, 0.0, 0.0)
                                               for i in range(n_vehicles)))


def test_two_subscribers_identical_and_monotone():
    with TelemetryServer() as server:
        socks = [connect(*server.address) for _ in range(2)]
        assert _wait(lambda: server.subscriber_count == 2)
        outs = [[], []]
        threads = [threading.Thread(target=_reader, args=(s, 50, o)) for s, o in zip(socks, outs)]
        for t in threads:
            t.start()
        for k in range(1, 51):
            assert server.publish(_frame(k)) == 2
        for t in threads:
            t.join(5)
        assert [m.tick for m in outs[0]] == list(range(1, 51))
        assert outs[0] == outs[1]
        for s in socks:
            s.close()


def test_mid_run_connect_gets_no_replay():
    with TelemetryServer() as server:
        for k in range(5):
            server.publish(_frame(k))
        sock = connect(*server.address)
        assert _wait(lambda: server.subscriber_count == 1)
        out = []
        t = threading.Thread(target=_reader, args=(sock, 3, out))
        t.start()
        for k in range(5, 8):
            server.publish(_frame(k))
        t.join(5)
        assert [m.tick for m in out] == [5, 6, 7]
        sock.close()


def test_stalled_subscriber_is_disconnected():
    cap = 8
    with TelemetryServer(backlog=cap, send_buffer=4096) as server:
        stalled = socket.socket()
        stalled.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4096)
        stalled.connect(server.address)
        good = connect(*server.address)
        assert _wait(lambda: server.subscriber_count == 2)
        out = []
        t = threading.Thread(target=_reader, args=(good, 400, out))
        t.start()
        for k in range(400):
            server.publish(_frame(k, n_vehicles=40))
            _wait(lambda: len(out) >= k - 2, 2.0)  # publish at the healthy reader's pace
        t.join(10)
        assert server.disconnected == 1
        assert server.peak_backlog <= cap
        assert [m.tick for m in out] == list(range(400))
        stalled.close()
        good.close()


def test_malformed_line_gets_error_and_connection_survives():
    with TelemetryServer() as server:
        sock = connect(*server.address)
        sock.sendall(b"{this is not json\n")
        send_control(sock, ControlMessage(command="pause"))
        replies = []
        for r in client_read(sock, include_replies=True):
            replies.append(r)
            if len(replies) == 2:
                break
        assert replies[0]["type"] == "error" and "parse" in replies[0]["error"]
        assert replies[1] == {"v": 1, "type": "ack", "command": "pause"}
        assert server.controls.get(timeout=1) == ControlMessage(command="pause")
        sock.close()


def test_bind_failure_is_config_error():
    with TelemetryServer() as server:
        with pytest.raises(ConfigError):
            TelemetryServer(port=server.port).start()


def test_frame_message_builder(road):
    from seer.vehicle import VehicleState
    msg = frame_message(3, 600, {2: VehicleState(1.0, 2.0), 1: VehicleState(3.0, 4.0)}, {1: 0}, {2: 1})
    assert [v.id for v in msg.vehicles] == [1, 2]
    assert msg.vehicles[0].intention == 0 and msg.vehicles[0].prediction is None
    assert msg.vehicles[1].prediction == 1 and msg.flags is None
