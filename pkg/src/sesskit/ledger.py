"""Exact per-operation accounting of messages, round trips, and
authentications, instrumented at the transport boundary.

A "round trip" is counted when a channel completes a blocking receive
after having sent at least one message since its previous receive; pure
one-way sends never add round trips.  Operations are labelled with a
context variable so counters attribute to whatever logical operation the
current task is running (establish, resume, ping, ...), including across
task spawns, which inherit the label.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field

_current_op: contextvars.ContextVar[str | None] = contextvars.ContextVar(
    "sesskit_ledger_op", default=None
)


@dataclass
class OpStats:
    messages_sent: int = 0
    round_trips: int = 0
    auths: int = 0
    wall: float = 0.0
    message_kinds: list[int] = field(default_factory=list)


@dataclass
class RoundTripLedger:
    clock: object | None = None
    ops: dict[str, OpStats] = field(default_factory=dict)
    total_messages: int = 0
    auths_initiated: dict[str, int] = field(default_factory=dict)
    auths_served: dict[str, int] = field(default_factory=dict)
    auth_events: list[tuple[str, str, str, str | None]] = field(default_factory=list)

    def _op(self, label: str) -> OpStats:
        if label not in self.ops:
            self.ops[label] = OpStats()
        return self.ops[label]

    @contextmanager
    def track(self, label: str):
        """Attribute transport events in this context to ``label``."""
        token = _current_op.set(label)
        start = self.clock.now() if self.clock is not None else None
        try:
            yield self._op(label)
        finally:
            if start is not None:
                self._op(label).wall += self.clock.now() - start
            _current_op.reset(token)

    def current_label(self) -> str | None:
        return _current_op.get()

    def on_message(self, node: str, kind: int) -> None:
        self.total_messages += 1
        label = _current_op.get()
        if label is not None:
            stats = self._op(label)
            stats.messages_sent += 1
            stats.message_kinds.append(kind)

    def on_round_trip(self, node: str) -> None:
        label = _current_op.get()
        if label is not None:
            self._op(label).round_trips += 1

    def on_auth(self, node: str, peer: str, role: str) -> None:
        """Record one full authentication performed at ``node``.

        ``role`` is "client" (initiated) or "server" (served).
        """
        table = self.auths_initiated if role == "client" else self.auths_served
        table[node] = table.get(node, 0) + 1
        label = _current_op.get()
        if label is not None:
            self._op(label).auths += 1
        self.auth_events.append((node, peer, role, label))

    def auths_at(self, node: str) -> int:
        return self.auths_initiated.get(node, 0) + self.auths_served.get(node, 0)
