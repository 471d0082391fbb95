"""Feature extraction, sequence windowing and the SEERSEQ1 container.

File layout (all integers little-endian)::

    b"SEERSEQ1"
    u32 manifest_len | manifest JSON (UTF-8, space padded) | u32 crc32(manifest)
    repeated:  u32 payload_len | payload | u32 crc32(payload)

Record payload::

    u64 sequence_id | u32 agent_id | u8 scene | u8 split | u16 T | u8 dims
    i64[T] timestamps_ms | u8[T] raw labels | f32[T * dims] features

The manifest slot is reserved up front and rewritten when the writer closes,
so records stream straight to disk while the header still carries exact
per-split counts.  Writers work on ``<path>.partial`` and rename on success.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import queue
import struct
import threading
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import DataError, FormatError, OutOfBoundsError
from .planner import IntentionLabel, NUM_CLASSES
from .road import RoadModel, to_lane_frame
from .vehicle import VehicleState

log = logging.getLogger(__name__)

MAGIC = b"SEERSEQ1"
FORMAT_VERSION = 1
MANIFEST_SLOT = 4096
FRAME_PERIOD_MS = 200
VARIANTS = {"A2": 2, "A3": 3}
SCENE_CODES = ("highway", "urban")
SPLIT_CODES = ("train", "test")
_HEAD = struct.Struct("<QIBBHB")
_U32 = struct.Struct("<I")


# -- features ------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureVector:
    """Normalized lane-frame measurements: ``d / lane_width``, ``s / road_length``
    and, for A3, ``heading_rel / pi``."""

    d: float
    s: float
    heading: float | None = None

    @property
    def variant(self) -> str:
        return "A2" if self.heading is None else "A3"

    def as_array(self) -> np.ndarray:
        vals = (self.d, self.s) if self.heading is None else (self.d, self.s, self.heading)
        return np.array(vals)


def _check_variant(variant: str) -> int:
    if variant not in VARIANTS:
        raise DataError(f"unknown feature variant {variant!r}; expected one of {sorted(VARIANTS)}")
    return VARIANTS[variant]


def extract_features(state: VehicleState, road: RoadModel, variant: str = "A3") -> FeatureVector:
    _check_variant(variant)
    lf = to_lane_frame(road, state.x, state.y, state.heading)
    d, s = lf.d / road.lane_width, lf.s / road.road_length
    return FeatureVector(d, s, lf.heading_rel / math.pi if variant == "A3" else None)


def denormalize(fv: FeatureVector, road: RoadModel) -> tuple[float, float, float | None]:
    """Invert the normalization: ``(s, d, heading_rel)`` in metres and radians."""
    heading = None if fv.heading is None else fv.heading * math.pi
    return fv.s * road.road_length, fv.d * road.lane_width, heading


# -- records ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SequenceRecord:
    sequence_id: int
    agent_id: int
    scene: str
    features: np.ndarray  # (T, dims) float32
    labels: np.ndarray  # (T,) raw IntentionLabel values
    timestamps_ms: np.ndarray  # (T,) int64
    split: str = "train"

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        stamps = np.ascontiguousarray(self.timestamps_ms, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] not in (2, 3):
            raise DataError(f"features must be (T, 2|3), got {feats.shape}")
        n = len(feats)
        if n < 1 or labels.shape != (n,) or stamps.shape != (n,):
            raise DataError("features, labels and timestamps must share length T")
        if np.any(labels > max(IntentionLabel)):
            raise DataError("label out of range")
        if not np.all(np.isfinite(feats)):
            raise DataError("features must be finite")
        if n > 1 and np.any(np.abs(np.diff(stamps) - FRAME_PERIOD_MS) > 1):
            raise DataError("timestamps must advance by 200 ms")
        if self.scene not in SCENE_CODES:
            raise DataError(f"unknown scene {self.scene!r}")
        if self.split not in SPLIT_CODES:
            raise DataError(f"unknown split {self.split!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "timestamps_ms", stamps)

    @property
    def T(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        return (self.sequence_id == other.sequence_id and self.agent_id == other.agent_id
                and self.scene == other.scene and self.split == other.split
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.timestamps_ms, other.timestamps_ms)
                and self.features.tobytes() == other.features.tobytes())

    def with_variant(self, variant: str) -> SequenceRecord:
        """A2 is the A3 vector without its heading column."""
        dims = _check_variant(variant)
        if dims > self.dims:
            raise DataError(f"cannot widen a {self.dims}-d record to {variant}")
        return SequenceRecord(self.sequence_id, self.agent_id, self.scene, self.features[:, :dims],
                              self.labels, self.timestamps_ms, self.split)

    def encode(self) -> bytes:
        head = _HEAD.pack(self.sequence_id, self.agent_id, SCENE_CODES.index(self.scene),
                          SPLIT_CODES.index(self.split), self.T, self.dims)
        return b"".join((head, self.timestamps_ms.astype("<i8").tobytes(), self.labels.tobytes(),
                         self.features.astype("<f4").tobytes()))

    @classmethod
    def decode(cls, payload: bytes) -> SequenceRecord:
        if len(payload) < _HEAD.size:
            raise DataError("record payload too short")
        sid, aid, scene, split, t, dims = _HEAD.unpack_from(payload)
        off = _HEAD.size
        need = off + t * 8 + t + t * dims * 4
        if len(payload) != need:
            raise DataError(f"record payload length {len(payload)} != {need}")
        if scene >= len(SCENE_CODES) or split >= len(SPLIT_CODES):
            raise DataError("bad scene or split code")
        stamps = np.frombuffer(payload, "<i8", t, off)
        labels = np.frombuffer(payload, np.uint8, t, off + 8 * t)
        feats = np.frombuffer(payload, "<f4", t * dims, off + 9 * t).reshape(t, dims)
        return cls(sid, aid, SCENE_CODES[scene], feats, labels, stamps, SPLIT_CODES[split])


@dataclass
class DatasetManifest:
    feature_variant: str
    T: int
    frame_period_ms: int = FRAME_PERIOD_MS
    class_count: int = NUM_CLASSES
    counts: dict = field(default_factory=lambda: {s: 0 for s in SPLIT_CODES})
    seed: int = 0
    config_hash: str = ""
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        _check_variant(self.feature_variant)
        if self.T not in (6, 12):
            raise DataError(f"T must be 6 or 12, got {self.T}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True).encode()

    @classmethod
    def from_json(cls, blob: bytes) -> DatasetManifest:
        data = json.loads(blob.decode())
        counts = {s: int(data.get("counts", {}).get(s, 0)) for s in SPLIT_CODES}
        return cls(data["feature_variant"], int(data["T"]), int(data["frame_period_ms"]),
                   int(data["class_count"]), counts, int(data["seed"]), str(data["config_hash"]),
                   int(data["format_version"]))


def config_hash(obj) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- container I/O ------------------------------------------------------------------

class DatasetWriter:
    """Streaming SEERSEQ1 writer; use as a context manager.

    On an exception inside the ``with`` block the partial file is removed and
    the target path is left untouched.
    """

    def __init__(self, path, manifest: DatasetManifest):
        self.path = os.fspath(path)
        self.partial = self.path + ".partial"
        self.manifest = manifest
        self.manifest.counts = {s: 0 for s in SPLIT_CODES}
        self._dims = VARIANTS[manifest.feature_variant]
        self._fh = None

    def __enter__(self):
        self._fh = open(self.partial, "wb")
        self._fh.write(MAGIC)
        self._write_manifest()
        return self

    def _write_manifest(self):
        blob = self.manifest.to_json()
        if len(blob) > MANIFEST_SLOT:
            raise DataError("manifest exceeds its reserved slot")
        blob = blob.ljust(MANIFEST_SLOT, b" ")
        self._fh.write(_U32.pack(len(blob)) + blob + _U32.pack(zlib.crc32(blob)))

    def write(self, record: SequenceRecord) -> None:
        if record.T != self.manifest.T or record.dims != self._dims:
            raise DataError(f"record shape (T={record.T}, dims={record.dims}) does not match "
                            f"the file (T={self.manifest.T}, {self.manifest.feature_variant})")
        payload = record.encode()
        self._fh.write(_U32.pack(len(payload)) + payload + _U32.pack(zlib.crc32(payload)))
        self.manifest.counts[record.split] += 1

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._fh.seek(len(MAGIC))
                self._write_manifest()
            self._fh.close()
        finally:
            if exc_type is None:
                os.replace(self.partial, self.path)
            elif os.path.exists(self.partial):
                os.remove(self.partial)
        return False


def write_dataset(path, manifest: DatasetManifest, records: Iterable[SequenceRecord]) -> DatasetManifest:
    with DatasetWriter(path, manifest) as w:
        for rec in records:
            w.write(rec)
    return w.manifest


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}", offset)
    return data


def read_manifest(fh) -> DatasetManifest:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    (n,) = _U32.unpack(_read_exact(fh, 4, "manifest length"))
    start = fh.tell()
    blob = _read_exact(fh, n, "manifest")
    (crc,) = _U32.unpack(_read_exact(fh, 4, "manifest checksum"))
    if zlib.crc32(blob) != crc:
        raise FormatError("manifest checksum mismatch", start)
    try:
        manifest = DatasetManifest.from_json(blob)
    except (ValueError, KeyError, DataError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", start) from exc
    if manifest.format_version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {manifest.format_version}", start)
    return manifest


def _iter_records(fh, manifest: DatasetManifest) -> Iterator[SequenceRecord]:
    dims = VARIANTS[manifest.feature_variant]
    seen = 0
    with fh:
        while True:
            offset = fh.tell()
            prefix = fh.read(4)
            if not prefix:
                break
            if len(prefix) != 4:
                raise FormatError("truncated record length", offset)
            (n,) = _U32.unpack(prefix)
            payload = _read_exact(fh, n, "record")
            (crc,) = _U32.unpack(_read_exact(fh, 4, "record checksum"))
            if zlib.crc32(payload) != crc:
                raise FormatError("record checksum mismatch", offset)
            try:
                rec = SequenceRecord.decode(payload)
            except DataError as exc:
                raise FormatError(f"bad record: {exc}", offset) from exc
            if rec.T != manifest.T or rec.dims != dims:
                raise FormatError("record shape disagrees with the manifest", offset)
            seen += 1
            yield rec
        if seen != manifest.total:
            raise FormatError(f"manifest promises {manifest.total} records, file holds {seen}", offset)


def read_dataset(path) -> tuple[DatasetManifest, Iterator[SequenceRecord]]:
    """Open a dataset; records are decoded lazily and validated as they stream."""
    fh = open(path, "rb")
    try:
        manifest = read_manifest(fh)
    except BaseException:
        fh.close()
        raise
    return manifest, _iter_records(fh, manifest)


def load_dataset(path) -> tuple[DatasetManifest, list[SequenceRecord]]:
    manifest, it = read_dataset(path)
    return manifest, list(it)


# -- windowing -------------------------------------------------------------------------

_STOP = object()


def record_stream(frames: Iterable, T: int, sink: Callable[[SequenceRecord], None], road: RoadModel,
                  *, variant: str = "A3", split: str = "train", first_id: int = 0,
                  capacity: int = 256, limit: int | None = None,
                  keep: Callable[[SequenceRecord], bool] | None = None) -> int:
    """Window a frame stream into per-agent, non-overlapping length-``T`` records.

    A producer thread pulls ``frames`` (objects with ``agent_id``, ``timestamp_ms``,
    ``state``, ``label`` and ``scene``) into a bounded FIFO; the calling thread
    consumes it and hands finished records to ``sink``.  ``put`` blocks while
    the FIFO is full, so no frame is dropped.  Records rejected by ``keep`` are
    not written and not counted.  Returns the number of records written.
    """
    if T not in (6, 12):
        raise DataError(f"T must be 6 or 12, got {T}")
    _check_variant(variant)
    fifo: queue.Queue = queue.Queue(maxsize=capacity)
    halt = threading.Event()
    failure: list[BaseException] = []

    def produce():
        try:
            for frame in frames:
                while not halt.is_set():
                    try:
                        fifo.put(frame, timeout=0.05)
                        break
                    except queue.Full:
                        continue
                if halt.is_set():
                    return
        except BaseException as exc:  # surfaced by the consumer
            failure.append(exc)
        finally:
            while True:
                try:
                    fifo.put(_STOP, timeout=0.05)
                    return
                except queue.Full:
                    if halt.is_set():
                        return

    producer = threading.Thread(target=produce, name="seer-record-producer", daemon=True)
    producer.start()
    windows: dict[int, list] = {}
    written = 0
    try:
        while True:
            frame = fifo.get()
            if frame is _STOP:
                break
            buf = windows.setdefault(frame.agent_id, [])
            if buf and frame.timestamp_ms - buf[-1][2] != FRAME_PERIOD_MS:
                log.debug("agent %s: timestamp gap, window restarted", frame.agent_id)
                buf.clear()
            try:
                fv = extract_features(frame.state, road, variant).as_array()
            except OutOfBoundsError:
                log.debug("agent %s left the corridor at %d ms", frame.agent_id, frame.timestamp_ms)
                buf.clear()
                continue
            buf.append((fv, int(frame.label), int(frame.timestamp_ms)))
            if len(buf) == T:
                rec = SequenceRecord(first_id + written, int(frame.agent_id), frame.scene,
                                     np.array([b[0] for b in buf]), np.array([b[1] for b in buf]),
                                     np.array([b[2] for b in buf]), split)
                buf.clear()
                if keep is None or keep(rec):
                    sink(rec)
                    written += 1
                    if limit is not None and written >= limit:
                        break
    finally:
        halt.set()
        producer.join()
    if failure:
        raise failure[0]
    return written


def split_train_test(records, test_fraction: float, seed: int):
    """Seeded shuffle split; the test set gets ``round(fraction * n)`` records."""
    if not 0 < test_fraction < 1:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    records = list(records)
    order = np.random.default_rng(seed).permutation(len(records))
    n_test = int(round(test_fraction * len(records)))
    test_idx = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def stack(records: list[SequenceRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Batch records into ``(N, T, dims)`` float64 features and ``(N, T)`` int labels."""
    if not records:
        raise DataError("no records to stack")
    x = np.stack([r.features for r in records]).astype(np.float64)
    y = np.stack([r.labels for r in records]).astype(np.int64)
    return x, y
