"""Star-topology message plane with exact transmission accounting.

Wire format of one envelope (little-endian, 27-byte header)::

    offset  size  field
    0       4     magic  b"FSVP"
    4       2     version (u16) = 1
    6       1     kind code (u8), see MessageKind
    7       4     sender (u32); AGGREGATOR = 0xFFFFFFFF
    11      8     round (u64)
    19      4     rows (u32)
    23      4     cols (u32)
    27      8*rows*cols  payload, float64 row-major

For byte streams each envelope is prefixed by its length as a u32.
"""

from __future__ import annotations

import contextlib
import enum
import struct
import threading
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    NonFinitePayload,
    NonFiniteValue,
    TrailingBytes,
    TransportError,
    TruncatedPayload,
    UnknownKind,
    UnsupportedVersion,
)

ENVELOPE_MAGIC = b"FSVP"
ENVELOPE_VERSION = 1
AGGREGATOR = 0xFFFFFFFF
BYTES_PER_FLOAT = 4  # accounting convention: single precision

_HEADER = struct.Struct("<4sHBIQII")
_FRAME = struct.Struct("<I")


class MessageKind(enum.IntEnum):
    PARTIAL_H = 1
    GLOBAL_H = 2
    PARTIAL_NORM = 3
    GLOBAL_NORM = 4
    PARTIAL_RESIDUALS = 5
    GLOBAL_RESIDUALS = 6
    LOCAL_SUBSPACE = 7
    PROXY_COV = 8
    PROXY_EIGVECS = 9
    TERMINATE = 10


@dataclass(frozen=True, eq=False)
class Message:
    kind: MessageKind
    sender: int
    round: int
    payload: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        payload = np.array(self.payload, dtype=np.float64)
        if payload.ndim != 2:
            raise DimensionMismatch(f"payload must be 2-D, got {payload.shape}")
        if not np.all(np.isfinite(payload)):
            raise NonFiniteValue("payload contains NaN or Inf")
        if not 0 <= self.sender <= 0xFFFFFFFF or not 0 <= self.round < 1 << 64:
            raise ValueError("sender must fit u32 and round u64")
        if max(payload.shape) > 0xFFFFFFFF:
            raise DimensionMismatch("payload dimension exceeds u32")
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "kind", MessageKind(self.kind))

    @property
    def float_count(self) -> int:
        return int(self.payload.size)

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.sender == other.sender
            and self.round == other.round
            and self.payload.shape == other.payload.shape
            and self.payload.tobytes() == other.payload.tobytes()
        )

    def __repr__(self):
        return f"Message({self.kind.name}, sender={self.sender}, round={self.round}, shape={self.payload.shape})"


def encode(msg: Message) -> bytes:
    rows, cols = msg.payload.shape
    header = _HEADER.pack(ENVELOPE_MAGIC, ENVELOPE_VERSION, int(msg.kind), msg.sender, msg.round, rows, cols)
    return header + np.ascontiguousarray(msg.payload, dtype="<f8").tobytes()


def decode(data: bytes) -> Message:
    """Parse one envelope. Every malformed input raises a DecodeError subclass."""
    data = bytes(data)
    if data[:4] != ENVELOPE_MAGIC[: len(data[:4])]:
        raise BadMagic(f"expected {ENVELOPE_MAGIC!r}, got {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, got {len(data)}")
    _, version, kind, sender, rnd, rows, cols = _HEADER.unpack_from(data)
    if version != ENVELOPE_VERSION:
        raise UnsupportedVersion(f"envelope version {version}")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise UnknownKind(f"kind code {kind}") from None
    need = rows * cols * 8
    body = len(data) - _HEADER.size
    if body < need:
        raise TruncatedPayload(f"payload needs {need} bytes, got {body}")
    if body > need:
        raise TrailingBytes(f"{body - need} bytes after payload")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(payload)):
        raise NonFinitePayload("payload contains NaN or Inf")
    return Message(kind, sender, rnd, payload)


def write_frame(stream: BinaryIO, msg: Message) -> None:
    body = encode(msg)
    stream.write(_FRAME.pack(len(body)) + body)


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Optional[Message]:
    """Read one length-prefixed envelope; ``None`` on a clean end of stream."""
    prefix = _read_exact(stream, _FRAME.size)
    if not prefix:
        return None
    if len(prefix) < _FRAME.size:
        raise TruncatedPayload("stream ended inside a frame length")
    (size,) = _FRAME.unpack(prefix)
    body = _read_exact(stream, size)
    if len(body) < size:
        raise TruncatedPayload(f"frame declares {size} bytes, stream had {len(body)}")
    return decode(body)


# -- accounting -----------------------------------------------------------------


@dataclass
class TransmissionLedger:
    floats_client_to_agg: int = 0
    floats_agg_to_clients: int = 0
    messages: int = 0
    rounds: int = 0
    deliveries_by_kind: dict = field(default_factory=dict)
    floats_by_phase: dict = field(default_factory=dict)

    @property
    def total_floats(self) -> int:
        return self.floats_client_to_agg + self.floats_agg_to_clients

    @property
    def bytes(self) -> int:
        return BYTES_PER_FLOAT * self.total_floats

    @property
    def bytes_float64(self) -> int:
        return 8 * self.total_floats

    def _count(self, kind: MessageKind, deliveries: int, floats: int, phase: str) -> None:
        self.deliveries_by_kind[kind] = self.deliveries_by_kind.get(kind, 0) + deliveries
        self.floats_by_phase[phase] = self.floats_by_phase.get(phase, 0) + floats

    def as_dict(self) -> dict:
        return {
            "floats_client_to_agg": self.floats_client_to_agg,
            "floats_agg_to_clients": self.floats_agg_to_clients,
            "floats": self.total_floats,
            "bytes": self.bytes,
            "bytes_float64": self.bytes_float64,
            "messages": self.messages,
            "rounds": self.rounds,
        }


@dataclass(frozen=True)
class DeliveryReceipt:
    message: Message
    recipients: int
    floats: int


@dataclass(frozen=True)
class LogEntry:
    direction: str  # "up" (client -> aggregator) or "down" (broadcast)
    message: Message


class LoopbackTransport:
    """In-process star network with bulk-synchronous rounds.

    Clients call :meth:`send_to_aggregator`; the aggregator calls :meth:`collect`,
    which is the round barrier and returns exactly one message per site ordered by
    site id. :meth:`broadcast` delivers to all sites. With ``wire=True`` every
    message is pushed through the envelope codec on its way.
    """

    def __init__(self, num_sites: int, *, wire: bool = False):
        if num_sites < 1:
            raise ValueError("need at least one site")
        self.num_sites = num_sites
        self.wire = wire
        self.ledger = TransmissionLedger()
        self.log: list[LogEntry] = []
        self._pending: dict[int, Message] = {}
        self._lock = threading.Lock()
        self._closed = False
        self._phase = "default"

    @contextlib.contextmanager
    def phase(self, name: str):
        """Attribute floats sent inside the block to accounting phase ``name``."""
        previous, self._phase = self._phase, name
        try:
            yield
        finally:
            self._phase = previous

    def _ship(self, msg: Message) -> Message:
        return decode(encode(msg)) if self.wire else msg

    def _check_open(self):
        if self._closed:
            raise TransportError("transport is closed")

    def send_to_aggregator(self, msg: Message) -> DeliveryReceipt:
        self._check_open()
        if not 0 <= msg.sender < self.num_sites:
            raise TransportError(f"unknown sender {msg.sender}")
        delivered = self._ship(msg)
        with self._lock:
            if msg.sender in self._pending:
                raise TransportError(f"site {msg.sender} already sent in this round")
            self._pending[msg.sender] = delivered
            self.ledger.floats_client_to_agg += msg.float_count
            self.ledger.messages += 1
            self.ledger._count(msg.kind, 1, msg.float_count, self._phase)
        return DeliveryReceipt(delivered, 1, msg.float_count)

    def collect(self) -> list[Message]:
        self._check_open()
        with self._lock:
            if len(self._pending) != self.num_sites:
                missing = sorted(set(range(self.num_sites)) - set(self._pending))
                raise TransportError(f"round barrier incomplete, missing sites {missing}")
            batch = [self._pending[s] for s in range(self.num_sites)]
            kinds = {m.kind for m in batch}
            if len(kinds) != 1:
                raise TransportError(f"mixed message kinds in one round: {sorted(k.name for k in kinds)}")
            self._pending.clear()
            self.ledger.rounds += 1
        self.log.extend(LogEntry("up", m) for m in batch)
        return batch

    def broadcast(self, msg: Message) -> DeliveryReceipt:
        self._check_open()
        if msg.sender != AGGREGATOR:
            raise TransportError("only the aggregator broadcasts")
        delivered = self._ship(msg)
        floats = self.num_sites * msg.float_count
        self.ledger.floats_agg_to_clients += floats
        self.ledger.messages += self.num_sites
        self.ledger._count(msg.kind, self.num_sites, floats, self._phase)
        self.log.append(LogEntry("down", delivered))
        return DeliveryReceipt(delivered, self.num_sites, floats)

    def close(self) -> None:
        self._closed = True

    def transcript_bytes(self) -> bytes:
        """Every logged message, framed, in delivery order."""
        return b"".join(
            (b"U" if e.direction == "up" else b"D") + _FRAME.pack(len(body)) + body
            for e in self.log
            for body in [encode(e.message)]
        )
