"""Stream and datagram channel contracts, plus user-space datagram
fragmentation, reassembly, and pacing.

Deadline contract: every blocking operation (connect, read, write,
datagram receive) takes a finite positive timeout in seconds.  "No
timeout" is not representable; callers that want patience pass a large
finite number.  Datagram sends never block and take no deadline.

Fragment wire layout, big-endian, followed by the payload:

    u64 datagram id | u16 index | u16 total | u16 payload length

All time-dependent behavior runs against an injectable clock so the
simulated harness can drive it deterministically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Protocol

from . import wire
from .errstack import (
    CHANNEL_CLOSED,
    CONNECTION_REFUSED,
    FRAGMENT_OVERSIZE,
    FRAGMENT_PROTOCOL,
    TIMEOUT,
    CommError,
    ErrorFrame,
    ErrorStack,
)

SUBSYSTEM = "TRANSPORT"


class CommTimeout(CommError):
    def __init__(self, message: str):
        frame = ErrorFrame(TIMEOUT, SUBSYSTEM, message)
        super().__init__(ErrorStack((frame,)))


class ConnectionRefused(CommError):
    def __init__(self, message: str = "connection refused"):
        frame = ErrorFrame(CONNECTION_REFUSED, SUBSYSTEM, message)
        super().__init__(ErrorStack((frame,)))


class ChannelClosed(CommError):
    def __init__(self, message: str = "channel closed by peer"):
        frame = ErrorFrame(CHANNEL_CLOSED, SUBSYSTEM, message)
        super().__init__(ErrorStack((frame,)))


class OversizeDatagram(CommError):
    def __init__(self, message: str):
        frame = ErrorFrame(FRAGMENT_OVERSIZE, SUBSYSTEM, message)
        super().__init__(ErrorStack((frame,)))


class FragmentProtocolError(CommError):
    def __init__(self, message: str):
        frame = ErrorFrame(FRAGMENT_PROTOCOL, SUBSYSTEM, message)
        super().__init__(ErrorStack((frame,)))


def check_deadline(timeout: float) -> float:
    """Enforce the finite-deadline contract on a timeout in seconds."""
    if not isinstance(timeout, (int, float)) or not math.isfinite(timeout) or timeout <= 0:
        raise ValueError(f"blocking operations require a finite positive deadline, got {timeout!r}")
    return float(timeout)


class Clock(Protocol):
    def now(self) -> float: ...
    async def sleep(self, seconds: float) -> None: ...


class StreamChannel(Protocol):
    """Reliable, ordered byte channel.  One sender and one receiver."""

    local_addr: str
    peer_addr: str

    async def write(self, data: bytes, timeout: float) -> int: ...
    async def read_exactly(self, n: int, timeout: float) -> bytes: ...
    def close(self) -> None: ...


class NetworkNode(Protocol):
    """A named endpoint: channel factory plus clock/entropy/ledger bundle.

    The simulated and live implementations expose the same surface so
    protocol code above this line is identical in both modes.
    """

    address: str

    async def connect(self, addr: str, timeout: float) -> StreamChannel: ...
    def listen_stream(self, handler: Callable[[StreamChannel], Awaitable[None]]) -> None: ...
    def send_datagram(self, data: bytes, addr: str) -> None: ...
    def listen_datagram(self, handler: Callable[[bytes, str], None]) -> None: ...
    def spawn(self, coro): ...


# --- fragmentation ----------------------------------------------------------

FRAGMENT_HEADER_LEN = 14
_FRAGMENT_FMT = ">QHHH"


@dataclass(frozen=True)
class FragmentHeader:
    datagram_id: int
    index: int
    total: int
    payload_len: int

    def __post_init__(self) -> None:
        if not (1 <= self.total <= 0xFFFF):
            raise FragmentProtocolError(f"fragment total {self.total} out of range")
        if not (0 <= self.index < self.total):
            raise FragmentProtocolError(
                f"fragment index {self.index} not below total {self.total}"
            )
        if not (0 <= self.datagram_id <= 0xFFFFFFFFFFFFFFFF):
            raise FragmentProtocolError("datagram id out of 64-bit range")
        if not (0 <= self.payload_len <= 0xFFFF):
            raise FragmentProtocolError("payload length out of 16-bit range")

    def pack(self) -> bytes:
        return struct.pack(
            _FRAGMENT_FMT, self.datagram_id, self.index, self.total, self.payload_len
        )

    @classmethod
    def unpack(cls, data: bytes) -> "FragmentHeader":
        if len(data) < FRAGMENT_HEADER_LEN:
            raise FragmentProtocolError("short fragment header")
        did, index, total, plen = struct.unpack_from(_FRAGMENT_FMT, data)
        return cls(did, index, total, plen)


@dataclass(frozen=True)
class PacingPolicy:
    """Fragment sizing and inter-fragment send delay (seconds)."""

    max_fragment_payload: int = 60000
    inter_fragment_delay: float = 0.0

    def __post_init__(self) -> None:
        if not (0 < self.max_fragment_payload <= 65000):
            raise ValueError("max_fragment_payload must be in 1..65000")
        if self.inter_fragment_delay < 0:
            raise ValueError("inter_fragment_delay must be non-negative")


def fragment(
    payload: bytes, policy: PacingPolicy, datagram_id: int
) -> list[tuple[FragmentHeader, bytes]]:
    """Split a payload into at most 65535 fragments of policy-bounded size."""
    if not payload:
        raise ValueError("cannot fragment an empty payload")
    size = policy.max_fragment_payload
    total = math.ceil(len(payload) / size)
    if total > 0xFFFF:
        raise OversizeDatagram(
            f"payload of {len(payload)} bytes needs {total} fragments, over the 16-bit limit"
        )
    out = []
    for index in range(total):
        piece = payload[index * size : (index + 1) * size]
        out.append((FragmentHeader(datagram_id, index, total, len(piece)), piece))
    return out


@dataclass
class _PartialDatagram:
    total: int
    parts: dict[int, bytes] = field(default_factory=dict)
    deadline: float = 0.0


class ReassemblyBuffer:
    """Per-receiver reassembly state with deadline-based eviction.

    Completion delivers a datagram exactly once; duplicate fragments are
    idempotent, including duplicates of an already-delivered datagram
    (tracked until the same eviction deadline passes).  Entries and
    completion markers past their arrival deadline are dropped, giving
    plain datagram-loss semantics for stragglers.
    """

    def __init__(self, eviction_timeout: float = 30.0):
        self.eviction_timeout = eviction_timeout
        self._partial: dict[tuple[str, int], _PartialDatagram] = {}
        self._delivered: dict[tuple[str, int], float] = {}

    def __len__(self) -> int:
        return len(self._partial)

    def sweep(self, now: float) -> int:
        dead = [k for k, e in self._partial.items() if e.deadline <= now]
        for k in dead:
            del self._partial[k]
        done = [k for k, d in self._delivered.items() if d <= now]
        for k in done:
            del self._delivered[k]
        return len(dead)

    def offer(self, sender: str, header: FragmentHeader, payload: bytes, now: float) -> bytes | None:
        """Account one fragment; return the whole payload when it completes."""
        self.sweep(now)
        if header.payload_len != len(payload):
            raise FragmentProtocolError(
                f"fragment payload length {len(payload)} does not match header {header.payload_len}"
            )
        key = (sender, header.datagram_id)
        if key in self._delivered:
            return None
        entry = self._partial.get(key)
        if entry is None:
            entry = _PartialDatagram(total=header.total)
            self._partial[key] = entry
        elif entry.total != header.total:
            del self._partial[key]
            raise FragmentProtocolError(
                f"conflicting fragment totals {entry.total} vs {header.total} for datagram {header.datagram_id}"
            )
        entry.parts.setdefault(header.index, payload)
        entry.deadline = now + self.eviction_timeout
        if len(entry.parts) == entry.total:
            del self._partial[key]
            self._delivered[key] = now + self.eviction_timeout
            return b"".join(entry.parts[i] for i in range(entry.total))
        return None


async def send_paced(
    fragments: list[tuple[FragmentHeader, bytes]],
    policy: PacingPolicy,
    send: Callable[[bytes], None],
    clock: Clock,
) -> None:
    """Send fragments in index order with the policy's inter-fragment delay."""
    for i, (header, payload) in enumerate(fragments):
        if i > 0 and policy.inter_fragment_delay > 0:
            await clock.sleep(policy.inter_fragment_delay)
        try:
            send(header.pack() + payload)
        except CommError:
            raise
        except Exception as exc:
            raise CommError.single(
                FRAGMENT_PROTOCOL, SUBSYSTEM, f"datagram send failed: {exc}"
            ) from exc


# --- frame I/O over stream channels ------------------------------------------

def _note_send(channel, kind: int) -> None:
    ledger = getattr(channel, "ledger", None)
    if ledger is not None:
        ledger.on_message(getattr(channel, "local_addr", "?"), kind)
    channel._sent_since_recv = True


def _note_recv(channel) -> None:
    if getattr(channel, "_sent_since_recv", False):
        ledger = getattr(channel, "ledger", None)
        if ledger is not None:
            ledger.on_round_trip(getattr(channel, "local_addr", "?"))
        channel._sent_since_recv = False


async def send_frame(channel: StreamChannel, frame: wire.MessageFrame, timeout: float) -> None:
    data = wire.encode_frame(frame)
    kind = frame.body[0] if frame.body else 0
    await channel.write(data, check_deadline(timeout))
    _note_send(channel, kind)


async def recv_frame(channel: StreamChannel, timeout: float, clock: Clock) -> wire.MessageFrame:
    """Read one frame, holding the whole read to a single absolute deadline."""
    deadline = clock.now() + check_deadline(timeout)

    async def _read(n: int) -> bytes:
        remaining = deadline - clock.now()
        if remaining <= 0:
            raise CommTimeout("frame read deadline expired")
        return await channel.read_exactly(n, remaining)

    header = await _read(5)
    length, flags = struct.unpack(">IB", header)
    body = await _read(length) if length else b""
    mac = None
    if flags & wire.FLAG_MAC_PRESENT:
        (maclen,) = await _read(1)
        mac = await _read(maclen) if maclen else b""
    _note_recv(channel)
    return wire.MessageFrame(flags, body, mac)
