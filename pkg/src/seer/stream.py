"""Telemetry and control over TCP with newline-delimited JSON.

Every line is one JSON object carrying ``"v": 1`` and a ``"type"``:

``frame``    server to client, one per tick::

    {"v": 1, "type": "frame", "tick": 40, "timestamp_ms": 400,
     "vehicles": [{"id": 3, "x": .., "y": .., "heading": .., "v_lon": .., "v_lat": ..,
                   "tire_angle": .., "signal_left": false, "signal_right": false,
                   "intention": 0, "prediction": 0}],
     "flags": [{"cell": [1, 42], "agents": [3, 5], "window": [0.4, 1.6]}]}

    ``intention`` (ground truth), ``prediction`` and ``flags`` are optional.

``control``  client to server, direct vehicle commands::

    {"v": 1, "type": "control", "vehicle": 3, "throttle": 0.5, "brake": 0.0,
     "hand_brake": 0.0, "steer": 0.1, "signal_left": false, "signal_right": false}

``command``  client to server, scenario commands ``pause``, ``resume``,
``set_intention`` (needs ``agent`` and ``intention``) and ``reseed`` (needs ``seed``).

``ack`` / ``error``  server replies to inbound lines; parse failures answer
with an ``error`` whose text starts with ``"parse error"``.

Unknown fields are rejected.  Slow subscribers are disconnected once their
outbound backlog reaches the cap, so streams never have gaps.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .errors import ConfigError, ProtocolError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_BACKLOG = 256
COMMANDS = ("pause", "resume", "set_intention", "reseed")
_VEHICLE_FLOATS = ("x", "y", "heading", "v_lon", "v_lat", "tire_angle")
_CONTROL_FLOATS = ("throttle", "brake", "hand_brake", "steer")


@dataclass(frozen=True)
class VehicleMessage:
    id: int
    x: float
    y: float
    heading: float
    v_lon: float
    v_lat: float
    tire_angle: float
    signal_left: bool = False
    signal_right: bool = False
    intention: int | None = None
    prediction: int | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id}
        d.update({k: getattr(self, k) for k in _VEHICLE_FLOATS})
        d.update(signal_left=self.signal_left, signal_right=self.signal_right)
        if self.intention is not None:
            d["intention"] = self.intention
        if self.prediction is not None:
            d["prediction"] = self.prediction
        return d


@dataclass(frozen=True)
class FlagMessage:
    cell: tuple
    agents: tuple
    window: tuple

    def to_dict(self) -> dict:
        return {"cell": list(self.cell), "agents": list(self.agents), "window": list(self.window)}


@dataclass(frozen=True)
class FrameMessage:
    tick: int
    timestamp_ms: int
    vehicles: tuple = ()
    flags: tuple | None = None

    def to_dict(self) -> dict:
        d = {"v": PROTOCOL_VERSION, "type": "frame", "tick": self.tick,
             "timestamp_ms": self.timestamp_ms, "vehicles": [v.to_dict() for v in self.vehicles]}
        if self.flags is not None:
            d["flags"] = [f.to_dict() for f in self.flags]
        return d


@dataclass(frozen=True)
class ControlMessage:
    """Either direct controls for ``vehicle`` or a scenario ``command``."""

    vehicle: int | None = None
    throttle: float = 0.0
    brake: float = 0.0
    hand_brake: float = 0.0
    steer: float = 0.0
    signal_left: bool = False
    signal_right: bool = False
    command: str | None = None
    agent: int | None = None
    intention: int | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        if self.command is None:
            d = {"v": PROTOCOL_VERSION, "type": "control", "vehicle": self.vehicle}
            d.update({k: getattr(self, k) for k in _CONTROL_FLOATS})
            d.update(signal_left=self.signal_left, signal_right=self.signal_right)
            return d
        d = {"v": PROTOCOL_VERSION, "type": "command", "command": self.command}
        for k in ("agent", "intention", "seed"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


# -- validation ---------------------------------------------------------------------------

def _int(d, key, where, minimum=None):
    if key not in d:
        raise ProtocolError(f"{where}{key}", "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProtocolError(f"{where}{key}", f"expected integer, got {type(v).__name__}")
    if minimum is not None and v < minimum:
        raise ProtocolError(f"{where}{key}", f"must be >= {minimum}")
    return v


def _float(d, key, where, required=True, default=0.0):
    if key not in d:
        if required:
            raise ProtocolError(f"{where}{key}", "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ProtocolError(f"{where}{key}", "expected a finite number")
    return float(v)


def _bool(d, key, where, default=False):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ProtocolError(f"{where}{key}", "expected boolean")
    return v


def _only(d, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ProtocolError(f"{where}{extra[0]}", "unknown field")


def _header(d, kind):
    if not isinstance(d, dict):
        raise ProtocolError("message", "expected a JSON object")
    if d.get("v") != PROTOCOL_VERSION:
        raise ProtocolError("v", f"unsupported protocol version {d.get('v')!r}")
    if kind is not None and d.get("type") != kind:
        raise ProtocolError("type", f"expected {kind!r}, got {d.get('type')!r}")


def frame_from_dict(d) -> FrameMessage:
    _header(d, "frame")
    _only(d, ("v", "type", "tick", "timestamp_ms", "vehicles", "flags"), "")
    tick = _int(d, "tick", "", 0)
    stamp = _int(d, "timestamp_ms", "", 0)
    raw = d.get("vehicles")
    if not isinstance(raw, list):
        raise ProtocolError("vehicles", "expected a list")
    vehicles, seen = [], set()
    for i, v in enumerate(raw):
        where = f"vehicles[{i}]."
        if not isinstance(v, dict):
            raise ProtocolError(f"vehicles[{i}]", "expected an object")
        _only(v, ("id", *_VEHICLE_FLOATS, "signal_left", "signal_right", "intention", "prediction"),
              where)
        vid = _int(v, "id", where, 0)
        if vid in seen:
            raise ProtocolError(f"{where}id", f"duplicate vehicle id {vid}")
        seen.add(vid)
        intention = _int(v, "intention", where, 0) if "intention" in v else None
        prediction = _int(v, "prediction", where, 0) if "prediction" in v else None
        vehicles.append(VehicleMessage(vid, *(_float(v, k, where) for k in _VEHICLE_FLOATS),
                                       _bool(v, "signal_left", where), _bool(v, "signal_right", where),
                                       intention, prediction))
    flags = None
    if "flags" in d:
        if not isinstance(d["flags"], list):
            raise ProtocolError("flags", "expected a list")
        flags = []
        for i, f in enumerate(d["flags"]):
            where = f"flags[{i}]."
            if not isinstance(f, dict):
                raise ProtocolError(f"flags[{i}]", "expected an object")
            _only(f, ("cell", "agents", "window"), where)
            parts = []
            for key, kind in (("cell", int), ("agents", int), ("window", float)):
                val = f.get(key)
                if (not isinstance(val, list) or len(val) != 2
                        or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in val)
                        or (kind is int and any(not isinstance(x, int) for x in val))):
                    raise ProtocolError(f"{where}{key}", "expected a pair of numbers")
                parts.append(tuple(kind(x) for x in val))
            flags.append(FlagMessage(*parts))
        flags = tuple(flags)
    return FrameMessage(tick, stamp, tuple(vehicles), flags)


def control_from_dict(d) -> ControlMessage:
    _header(d, None)
    kind = d.get("type")
    if kind == "control":
        _only(d, ("v", "type", "vehicle", *_CONTROL_FLOATS, "signal_left", "signal_right"), "")
        return ControlMessage(_int(d, "vehicle", "", 0),
                              *(_float(d, k, "", required=False) for k in _CONTROL_FLOATS),
                              _bool(d, "signal_left", ""), _bool(d, "signal_right", ""))
    if kind == "command":
        _only(d, ("v", "type", "command", "agent", "intention", "seed"), "")
        cmd = d.get("command")
        if cmd not in COMMANDS:
            raise ProtocolError("command", f"unknown command {cmd!r}")
        agent = _int(d, "agent", "", 0) if cmd == "set_intention" else None
        intention = _int(d, "intention", "", 0) if cmd == "set_intention" else None
        seed = _int(d, "seed", "", 0) if cmd == "reseed" else None
        if cmd in ("pause", "resume"):
            _only(d, ("v", "type", "command"), "")
        return ControlMessage(command=cmd, agent=agent, intention=intention, seed=seed)
    raise ProtocolError("type", f"expected 'control' or 'command', got {kind!r}")


def encode(msg) -> bytes:
    return json.dumps(msg.to_dict(), separators=(",", ":"), allow_nan=False).encode() + b"\n"


def _parse(line):
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        return json.loads(line)
    except ValueError as exc:
        raise ProtocolError("message", f"parse error: {exc}") from exc


def decode_frame(line) -> FrameMessage:
    return frame_from_dict(_parse(line))


def decode_control(line) -> ControlMessage:
    return control_from_dict(_parse(line))


def client_read(stream, include_replies: bool = False) -> Iterator:
    """Yield validated frames from a line stream (file object or socket).

    Replies (``ack``/``error``) are skipped unless ``include_replies``, in which
    case they are yielded as plain dicts.  A dropped connection or an
    unterminated final line simply ends the iteration.
    """
    if isinstance(stream, socket.socket):
        stream = stream.makefile("rb")
    while True:
        try:
            line = stream.readline()
        except (OSError, ValueError):
            return
        if not line:
            return
        if isinstance(line, str):
            line = line.encode()
        if not line.endswith(b"\n"):
            return  # connection lost mid-line
        if not line.strip():
            continue
        d = _parse(line)
        if isinstance(d, dict) and d.get("type") in ("ack", "error"):
            if include_replies:
                yield d
            continue
        yield frame_from_dict(d)


# -- server ------------------------------------------------------------------------------------

class _Subscriber:
    def __init__(self, server, conn: socket.socket, addr, cap: int):
        self.server, self.conn, self.addr = server, conn, addr
        self.queue: queue.Queue = queue.Queue(maxsize=cap)
        self.alive = True
        self.peak = 0
        self.writer = threading.Thread(target=self._write, daemon=True, name=f"seer-tx-{addr}")
        self.reader = threading.Thread(target=self._read, daemon=True, name=f"seer-rx-{addr}")

    def offer(self, data: bytes) -> bool:
        if not self.alive:
            return False
        try:
            self.queue.put_nowait(data)
        except queue.Full:
            return False
        self.peak = max(self.peak, self.queue.qsize())
        return True

    def close(self):
        if self.alive:
            self.alive = False
            try:
                self.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.conn.close()
            try:
                self.queue.put_nowait(None)
            except queue.Full:
                pass

    def _write(self):
        while self.alive:
            data = self.queue.get()
            if data is None:
                break
            try:
                self.conn.sendall(data)
            except OSError:
                break
        self.server._drop(self, "send failed")

    def _read(self):
        try:
            fh = self.conn.makefile("rb")
            for line in fh:
                if not self.alive:
                    break
                if not line.strip():
                    continue
                reply = self.server._handle_line(line)
                if not self.offer(encode_reply(reply)):
                    break
        except (OSError, ValueError):
            pass
        self.server._drop(self, "connection closed")


def encode_reply(reply: dict) -> bytes:
    return json.dumps({"v": PROTOCOL_VERSION, **reply}, separators=(",", ":")).encode() + b"\n"


class TelemetryServer:
    """Fan-out of frame messages to any number of subscribers.

    ``on_control`` receives every valid inbound :class:`ControlMessage`; when
    unset, messages accumulate in the bounded :attr:`controls` queue.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, backlog: int = DEFAULT_BACKLOG,
                 on_control: Callable[[ControlMessage], None] | None = None,
                 send_buffer: int | None = None):
        if backlog < 1:
            raise ConfigError("backlog", "must be >= 1")
        self.host, self.port, self.backlog = host, port, backlog
        self.on_control = on_control
        self.send_buffer = send_buffer
        self.controls: queue.Queue = queue.Queue(maxsize=1024)
        self._subs: list[_Subscriber] = []
        self._lock = threading.Lock()
        self._sock = None
        self._acceptor = None
        self.disconnected = 0
        self.peak_backlog = 0
        self.published = 0

    def start(self) -> TelemetryServer:
        try:
            sock = socket.create_server((self.host, self.port))
        except OSError as exc:
            raise ConfigError("log_port", f"cannot bind {self.host}:{self.port}: {exc}") from exc
        self._sock = sock
        self.port = sock.getsockname()[1]
        self._acceptor = threading.Thread(target=self._accept, daemon=True, name="seer-accept")
        self._acceptor.start()
        log.info("telemetry server on %s:%d", self.host, self.port)
        return self

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return sum(s.alive for s in self._subs)

    def _accept(self):
        while True:
            try:
                conn, addr = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            if self.send_buffer:
                conn.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.send_buffer)
            sub = _Subscriber(self, conn, addr, self.backlog)
            with self._lock:
                self._subs.append(sub)
            sub.writer.start()
            sub.reader.start()

    def _drop(self, sub: _Subscriber, why: str):
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
                log.info("subscriber %s dropped: %s", sub.addr, why)
        sub.close()

    def _handle_line(self, line: bytes) -> dict:
        try:
            msg = decode_control(line)
        except ProtocolError as exc:
            text = str(exc)
            if "parse error" in text:
                text = text[text.index("parse error"):]
            return {"type": "error", "error": text}
        if self.on_control is not None:
            try:
                self.on_control(msg)
            except Exception as exc:  # reported to the client, server keeps running
                return {"type": "error", "error": f"rejected: {exc}"}
        else:
            try:
                self.controls.put_nowait(msg)
            except queue.Full:
                return {"type": "error", "error": "control queue full"}
        return {"type": "ack", "command": msg.command or "control"}

    def publish(self, msg: FrameMessage) -> int:
        """Queue one frame for every subscriber; returns how many accepted it."""
        data = encode(msg)
        with self._lock:
            subs = list(self._subs)
        delivered = 0
        for sub in subs:
            if sub.offer(data):
                delivered += 1
                self.peak_backlog = max(self.peak_backlog, sub.peak)
            else:
                self.disconnected += 1
                log.warning("subscriber %s exceeded backlog %d; disconnecting", sub.addr, self.backlog)
                self._drop(sub, "backlog exceeded")
        self.published += 1
        return delivered

    def stop(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
        with self._lock:
            subs = list(self._subs)
            self._subs.clear()
        for sub in subs:
            sub.close()


def connect(host: str, port: int, timeout: float | None = 5.0) -> socket.socket:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return sock


def send_control(sock: socket.socket, msg: ControlMessage) -> None:
    sock.sendall(encode(msg))


def frame_message(tick: int, timestamp_ms: int, states: dict, intentions: dict | None = None,
                  predictions: dict | None = None, flags=None) -> FrameMessage:
    """Build a frame from ``{agent: VehicleState}`` plus optional label maps."""
    vehicles = []
    for aid in sorted(states):
        st = states[aid]
        vehicles.append(VehicleMessage(
            int(aid), st.x, st.y, st.heading, st.v_lon, st.v_lat, st.tire_angle,
            bool(st.signal_left), bool(st.signal_right),
            None if intentions is None or aid not in intentions else int(intentions[aid]),
            None if predictions is None or predictions.get(aid) is None else int(predictions[aid])))
    fl = None if flags is None else tuple(FlagMessage(tuple(f.cell), tuple(f.agents), tuple(f.window))
                                          for f in flags)
    return FrameMessage(int(tick), int(timestamp_ms), tuple(vehicles), fl)
