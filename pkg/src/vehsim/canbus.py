"""Deterministic virtual CAN bus.

Single shared 11-bit bus with priority arbitration, a virtual microsecond
clock and a candump-style trace. No wall clock, no threads: frames queue on
sendFrame and are delivered one at a time by run_pending(), lowest arbitration
id first. Timers fire only through advance_clock().
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, TextIO

logger = logging.getLogger(__name__)

MAX_STANDARD_ID = 0x7FF  # 11-bit identifiers only
MAX_DLC = 8


class FrameError(ValueError):
    """Malformed CAN frame (bad id, dlc or payload length)."""


class BusError(RuntimeError):
    """Bus misuse: sender not attached, runaway delivery cascade."""


@dataclass
class CanFrame:
    """One classic CAN data frame. dlc defaults to len(payload)."""

    can_id: int
    payload: bytes = b""
    timestamp_us: int = 0
    dlc: int | None = None

    def __post_init__(self) -> None:
        self.payload = bytes(self.payload)
        if self.dlc is None:
            self.dlc = len(self.payload)

    def validate(self) -> None:
        if not 0 <= self.can_id <= MAX_STANDARD_ID:
            raise FrameError(f"id 0x{self.can_id:X} outside 11-bit range")
        if not 0 <= self.dlc <= MAX_DLC:
            raise FrameError(f"dlc {self.dlc} outside 0..8")
        if len(self.payload) != self.dlc:
            raise FrameError(
                f"dlc/payload mismatch: dlc={self.dlc} len={len(self.payload)}"
            )

    def trace_entry(self) -> str:
        # candump style: (seconds.micros) can0 ID#HEXDATA
        sec, usec = divmod(self.timestamp_us, 1_000_000)
        return f"({sec}.{usec:06d}) can0 {self.can_id:03X}#{self.payload.hex().upper()}"


class BusNode:
    """Base class for anything attached to the bus.

    Subclasses override on_frame (every delivered frame from *other* nodes)
    and on_timer (expiry of a timer the node scheduled).
    """

    def __init__(self, name: str) -> None:
        self.name = name

    def on_frame(self, bus: "VirtualBus", frame: CanFrame) -> None:  # pragma: no cover
        pass

    def on_timer(self, bus: "VirtualBus", tag: str) -> None:  # pragma: no cover
        pass


@dataclass(frozen=True)
class TimerExpiry:
    node: str
    tag: str
    deadline_us: int


@dataclass(order=True)
class _QueuedFrame:
    sort_key: tuple[int, int]
    frame: CanFrame = field(compare=False)
    sender: BusNode = field(compare=False)


@dataclass(order=True)
class _Timer:
    sort_key: tuple[int, int, int]  # (deadline, attach order, schedule serial)
    node: BusNode = field(compare=False)
    tag: str = field(compare=False)
    deadline_us: int = field(compare=False)


class VirtualBus:
    """The shared medium plus the virtual clock.

    Arbitration: among all queued frames the lowest can_id wins, ties broken
    by enqueue order. Each delivery goes to every node except the sender and
    is appended to the trace with the current virtual time.
    """

    # Safety valve against handler ping-pong loops; generous for real traffic.
    MAX_CASCADE = 100_000

    def __init__(self) -> None:
        self.clock_us = 0
        self.trace: list[CanFrame] = []
        self.nodes: list[BusNode] = []
        self._queue: list[_QueuedFrame] = []
        self._timers: list[_Timer] = []
        self._enqueue_seq = 0
        self._timer_seq = 0

    # -- membership ----------------------------------------------------

    def attach(self, node: BusNode) -> BusNode:
        if node in self.nodes:
            raise BusError(f"node {node.name} already attached")
        self.nodes.append(node)
        return node

    def detach(self, node: BusNode) -> None:
        self.nodes.remove(node)
        self._timers = [t for t in self._timers if t.node is not node]

    # -- frames --------------------------------------------------------

    def send_frame(self, sender: BusNode, frame: CanFrame) -> int:
        """Queue a frame for arbitration. Returns the enqueue receipt."""
        if sender not in self.nodes:
            raise BusError(f"sender {sender.name} not attached")
        frame.validate()
        receipt = self._enqueue_seq
        self._enqueue_seq += 1
        self._queue.append(_QueuedFrame((frame.can_id, receipt), frame, sender))
        return receipt

    def run_pending(self) -> int:
        """Deliver queued frames until the bus is idle. Returns deliveries made.

        Handlers may queue more frames; arbitration is re-run before every
        delivery so a lower id queued mid-cascade still jumps the line.
        """
        delivered = 0
        while self._queue:
            if delivered >= self.MAX_CASCADE:
                raise BusError("delivery cascade exceeded MAX_CASCADE")
            winner = min(self._queue)
            self._queue.remove(winner)
            frame = winner.frame
            frame.timestamp_us = self.clock_us
            self.trace.append(frame)
            delivered += 1
            for node in list(self.nodes):
                if node is not winner.sender and node in self.nodes:
                    node.on_frame(self, frame)
        return delivered

    # -- time ----------------------------------------------------------

    def schedule_timer(self, node: BusNode, deadline_us: int, tag: str) -> None:
        if node not in self.nodes:
            raise BusError(f"node {node.name} not attached")
        attach_idx = self.nodes.index(node)
        self._timers.append(
            _Timer((deadline_us, attach_idx, self._timer_seq), node, tag, deadline_us)
        )
        self._timer_seq += 1

    def cancel_timers(self, node: BusNode, tag: str | None = None) -> None:
        self._timers = [
            t for t in self._timers
            if not (t.node is node and (tag is None or t.tag == tag))
        ]

    def advance_clock(self, delta_us: int) -> list[TimerExpiry]:
        """Move the clock forward, firing due timers in deadline order.

        Deadline ties fire in node attach order. A deadline exactly at the new
        clock value is due (boundary inclusive). delta must be >= 0; zero is a
        no-op that fires nothing new.
        """
        if delta_us < 0:
            raise ValueError("clock cannot run backwards")
        target = self.clock_us + delta_us
        fired: list[TimerExpiry] = []
        while True:
            due = [t for t in self._timers if t.deadline_us <= target]
            if not due:
                break
            nxt = min(due)
            self._timers.remove(nxt)
            # Handlers observe the virtual time of their own deadline.
            self.clock_us = max(self.clock_us, nxt.deadline_us)
            fired.append(TimerExpiry(nxt.node.name, nxt.tag, nxt.deadline_us))
            if nxt.node in self.nodes:
                nxt.node.on_timer(self, nxt.tag)
        self.clock_us = target
        return fired

    # -- trace ---------------------------------------------------------

    def write_trace(self, sink: TextIO) -> int:
        for frame in self.trace:
            sink.write(frame.trace_entry() + "\n")
        return len(self.trace)


class CallbackNode(BusNode):
    """Small adapter node for tests and scripts: plain callables, no subclass."""

    def __init__(
        self,
        name: str,
        on_frame: Callable[[VirtualBus, CanFrame], None] | None = None,
        on_timer: Callable[[VirtualBus, str], None] | None = None,
    ) -> None:
        super().__init__(name)
        self._frame_cb = on_frame
        self._timer_cb = on_timer
        self.received: list[CanFrame] = []

    def on_frame(self, bus: VirtualBus, frame: CanFrame) -> None:
        self.received.append(frame)
        if self._frame_cb is not None:
            self._frame_cb(bus, frame)

    def on_timer(self, bus: VirtualBus, tag: str) -> None:
        if self._timer_cb is not None:
            self._timer_cb(bus, tag)
