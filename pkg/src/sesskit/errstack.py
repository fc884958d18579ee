"""Stack-of-errors failure model.

A failure is carried as an ordered stack of frames rather than a single
integer.  Each layer that sees the failure either handles it (pops the
frame and recovers) or annotates it (pushes its own frame) and propagates.
Formatting lists the most recent frame first, so the high-level symptom
leads and the root cause closes the report::

    1010 -- session invalid
    110 -- TRANSPORT: read timed out

Codes are opaque integers with no global registry; the reserved values
below are the ones this library emits itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Reserved codes emitted by this library.  111 and 1003 follow the errno /
# daemon conventions this protocol family historically used on the wire.
TIMEOUT = 110
CONNECTION_REFUSED = 111
NEGOTIATION_FAILED = 1001
AUTH_FAILED = 1003
ESTABLISH_FAILED = 1005
SESSION_INVALID = 1010
SESSION_EXPIRED = 1011
DELEGATION_DENIED = 1012
CHANNEL_CLOSED = 1020
WIRE_DECODE = 2001
WIRE_ENCODE = 2002
FRAGMENT_OVERSIZE = 2101
FRAGMENT_PROTOCOL = 2102
EMPTY_STACK = 9001
CONFIG = 9002
CRYPTO = 9003
UNKNOWN_SUITE = 9004


@dataclass(frozen=True)
class ErrorFrame:
    """One layer's contribution to a failure report.

    The message is stored exactly as it will be rendered.  Errors that
    originate in an external subsystem conventionally carry a
    ``"<SUBSYSTEM>: "`` prefix inside the message; use :meth:`tagged` to
    build such frames without double-prefixing.
    """

    code: int
    subsystem: str
    message: str

    def __post_init__(self) -> None:
        if self.code < 0:
            raise ValueError("error code must be non-negative")
        if not self.subsystem:
            raise ValueError("subsystem must be non-empty")

    @classmethod
    def tagged(cls, code: int, subsystem: str, text: str) -> "ErrorFrame":
        """Build a frame whose rendered message carries the subsystem prefix."""
        prefix = subsystem + ": "
        message = text if text.startswith(prefix) else prefix + text
        return cls(code, subsystem, message)

    def render(self) -> str:
        return f"{self.code} -- {self.message}"


@dataclass(frozen=True)
class ErrorStack:
    """Immutable stack of :class:`ErrorFrame`.

    ``frames[0]`` is the topmost (most recent, highest layer) entry;
    the oldest, lowest-layer frame is last.
    """

    frames: tuple[ErrorFrame, ...] = field(default_factory=tuple)

    def push(self, frame: ErrorFrame) -> "ErrorStack":
        """Return a new stack with ``frame`` on top; this stack is unchanged."""
        return ErrorStack((frame,) + self.frames)

    def pop(self) -> tuple[ErrorFrame, "ErrorStack"]:
        """Return the topmost frame and the remainder of the stack."""
        if not self.frames:
            raise EmptyStackError()
        return self.frames[0], ErrorStack(self.frames[1:])

    def top(self) -> ErrorFrame:
        if not self.frames:
            raise EmptyStackError()
        return self.frames[0]

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(f.code for f in self.frames)

    def has_code(self, code: int) -> bool:
        return any(f.code == code for f in self.frames)

    def format(self) -> str:
        """One line per frame, topmost first; empty stack formats to ""."""
        return "\n".join(f.render() for f in self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


_LINE_RE = re.compile(r"^(\d+) -- (.*)$")


def parse_formatted(text: str) -> list[tuple[int, str]]:
    """Split formatted stack text back into (code, message) pairs.

    Inverse of :meth:`ErrorStack.format` up to frame structure: the
    subsystem field is not recoverable, only the rendered message.
    """
    if not text:
        return []
    pairs = []
    for line in text.splitlines():
        m = _LINE_RE.match(line)
        if m is None:
            raise ValueError(f"unparseable error line: {line!r}")
        pairs.append((int(m.group(1)), m.group(2)))
    return pairs


class CommError(Exception):
    """Base failure type; carries an :class:`ErrorStack`."""

    def __init__(self, stack: ErrorStack):
        super().__init__(stack.format())
        self.stack = stack

    @classmethod
    def single(cls, code: int, subsystem: str, message: str) -> "CommError":
        return cls(ErrorStack((ErrorFrame(code, subsystem, message),)))


class EmptyStackError(CommError):
    """pop() on an empty stack: a contract violation, not a protocol failure."""

    def __init__(self) -> None:
        frame = ErrorFrame(EMPTY_STACK, "ERRSTACK", "pop on empty error stack")
        super().__init__(ErrorStack((frame,)))


def annotate(exc: CommError, code: int, subsystem: str, message: str) -> CommError:
    """Push a frame onto a propagating error and return the same exception.

    The exception object is reused so `raise annotate(exc, ...)` preserves
    the concrete error type while the stack grows layer by layer.
    """
    exc.stack = exc.stack.push(ErrorFrame(code, subsystem, message))
    exc.args = (exc.stack.format(),)
    return exc
