"""Channel-oriented CAN transport (VW TP 2.0 style), tester and module roles.

Channel life cycle: a tester broadcasts a setup request on CAN id 0x200 naming
the destination module; the module answers from 0x200+dest with a positive
setup (0xD0) carrying the two negotiated data ids, then both sides exchange
timing parameters (0xA0/0xA1) and the channel is open. Data frames carry a
single header byte (opcode nibble | sequence nibble) plus up to 7 payload
bytes; the receiver acknowledges with 0xB|next-expected-seq at block
boundaries and after the final frame. Keep-alive is 0xA3 ping / 0xA1 reply;
0xA8 tears the channel down. All timing is virtual-clock microseconds.

Setup response layout (reconstruction, not authentic): byte 0 echoes the
destination address, byte 1 is the opcode, bytes 2..3 little-endian CAN id the
tester must transmit on, bytes 4..5 little-endian id the module transmits on,
byte 6 protocol marker 0x01.

Diagnostic messages ride the transport with a 2-byte big-endian length prefix
(max 0xFFF) followed by the service id and body; negative responses are
exactly [0x7F, serviceId, nrc].
"""

from __future__ import annotations

import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .canbus import BusNode, CanFrame, VirtualBus

logger = logging.getLogger(__name__)

SETUP_ID = 0x200            # broadcast id for channel setup requests
SETUP_RESPONSE_BASE = 0x200  # module answers from base + its address

OP_SETUP_REQUEST = 0xC0
OP_SETUP_POSITIVE = 0xD0
SETUP_REFUSED_OPCODES = (0xD6, 0xD7, 0xD8)
OP_PARAMS_REQUEST = 0xA0
OP_PARAMS_RESPONSE = 0xA1   # doubles as the keep-alive acknowledgement
OP_CHANNEL_TEST = 0xA3      # keep-alive ping
OP_DISCONNECT = 0xA8
ACK_BASE = 0xB0             # low nibble carries next expected sequence
DATA_MORE = 0x0             # high nibble: more frames follow
DATA_LAST = 0x1             # high nibble: final frame of the message

# Fixed tail of the setup request after the destination address byte.
SETUP_REQUEST_TAIL = bytes([OP_SETUP_REQUEST, 0x00, 0x10, 0x00, 0x03, 0x01])

CHUNK_SIZE = 7
MAX_MESSAGE = 4095          # 12-bit diagnostic length prefix
DEFAULT_BLOCK_SIZE = 15
SEQ_MOD = 16

ACK_TIMEOUT_US = 100_000
KEEPALIVE_INTERVAL_US = 100_000
INACTIVITY_LIMIT_US = 1_000_000

NEGATIVE_RESPONSE_SID = 0x7F
POSITIVE_RESPONSE_OFFSET = 0x40
NRC_SERVICE_NOT_SUPPORTED = 0x11
NRC_CONDITIONS_NOT_CORRECT = 0x22
NRC_SECURITY_ACCESS_DENIED = 0x33


class TpError(Exception):
    """Base class for transport failures."""


class SetupTimeout(TpError):
    pass


class SetupRefused(TpError):
    pass


class ChannelBusy(TpError):
    pass


class NotOpen(TpError):
    pass


class TransportTimeout(TpError):
    pass


class SequenceError(TpError):
    pass


class ProtocolError(TpError):
    """Malformed diagnostic message (length prefix does not match)."""


class ChannelState(Enum):
    IDLE = "idle"
    SETUP_SENT = "setup_sent"
    PARAM_EXCHANGE = "param_exchange"
    OPEN = "open"
    CLOSED = "closed"


@dataclass
class TpChannel:
    """Per-side channel state. local_id is the id this side transmits on."""

    role: str                      # "tester" or "module"
    dest_address: int
    local_id: int = 0
    remote_id: int = 0
    state: ChannelState = ChannelState.IDLE
    tx_seq: int = 0
    rx_seq: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    ack_timeout_us: int = ACK_TIMEOUT_US
    keepalive_interval_us: int = KEEPALIVE_INTERVAL_US
    inactivity_limit_us: int = INACTIVITY_LIMIT_US
    last_activity_us: int = 0
    events: list[str] = field(default_factory=list)

    # receive side bookkeeping
    rx_buffer: bytearray = field(default_factory=bytearray)
    frames_since_ack: int = 0
    acks: deque = field(default_factory=deque)
    messages: deque = field(default_factory=deque)


def chunk_payload(payload: bytes) -> list[bytes]:
    """Split a message into 7-byte chunks; an empty message is one empty chunk."""
    if not payload:
        return [b""]
    return [payload[i:i + CHUNK_SIZE] for i in range(0, len(payload), CHUNK_SIZE)]


# -- diagnostic message framing ---------------------------------------


@dataclass
class DiagRequest:
    service_id: int
    body: bytes = b""


@dataclass
class DiagResponse:
    service_id: int
    body: bytes = b""
    negative: bool = False
    nrc: int | None = None


def encode_diag_request(req: DiagRequest) -> bytes:
    content = bytes([req.service_id]) + req.body
    if len(content) > 0xFFF:
        raise ValueError("diagnostic payload exceeds 12-bit length")
    return struct.pack(">H", len(content)) + content


def _split_length_prefixed(message: bytes) -> bytes:
    if len(message) < 3:
        raise ProtocolError(f"message too short: {len(message)} bytes")
    (declared,) = struct.unpack(">H", message[:2])
    content = message[2:]
    if declared != len(content):
        raise ProtocolError(f"declared length {declared} != actual {len(content)}")
    return content


def decode_diag_request(message: bytes) -> DiagRequest:
    content = _split_length_prefixed(message)
    return DiagRequest(service_id=content[0], body=content[1:])


def encode_diag_response(resp: DiagResponse) -> bytes:
    if resp.negative:
        content = bytes([NEGATIVE_RESPONSE_SID, resp.service_id, resp.nrc or 0])
    else:
        content = bytes([resp.service_id]) + resp.body
    return struct.pack(">H", len(content)) + content


def decode_diag_response(message: bytes) -> DiagResponse:
    content = _split_length_prefixed(message)
    if content[0] == NEGATIVE_RESPONSE_SID:
        if len(content) != 3:
            raise ProtocolError("negative response must be exactly 3 bytes")
        return DiagResponse(service_id=content[1], negative=True, nrc=content[2])
    return DiagResponse(service_id=content[0], body=content[1:])


def positive_response(request_sid: int, body: bytes = b"") -> DiagResponse:
    return DiagResponse(service_id=request_sid + POSITIVE_RESPONSE_OFFSET, body=body)


def negative_response(request_sid: int, nrc: int) -> DiagResponse:
    return DiagResponse(service_id=request_sid, negative=True, nrc=nrc)


# -- shared receive-side handling --------------------------------------


def _receive_data_frame(ch: TpChannel, header: int, chunk: bytes,
                        send_ack: Callable[[int], None]) -> bytes | None:
    """Reassemble one incoming data frame; returns the message when complete.

    Acks at block boundaries and after the last frame. A sequence mismatch
    raises ValueError for the caller to translate into a channel teardown.
    """
    opcode, seq = header >> 4, header & 0xF
    if seq != ch.rx_seq:
        raise ValueError(f"expected seq {ch.rx_seq}, got {seq}")
    ch.rx_seq = (ch.rx_seq + 1) % SEQ_MOD
    ch.rx_buffer.extend(chunk)
    ch.frames_since_ack += 1
    complete: bytes | None = None
    if opcode == DATA_LAST:
        complete = bytes(ch.rx_buffer)
        ch.rx_buffer.clear()
    if opcode == DATA_LAST or ch.frames_since_ack >= ch.block_size:
        send_ack(ACK_BASE | ch.rx_seq)
        ch.frames_since_ack = 0
    return complete


# -- tester role -------------------------------------------------------


class TpTester(BusNode):
    """Tester-side endpoint. Operations pump the bus to completion, so a call
    returns only once every causally triggered frame has been delivered."""

    def __init__(self, bus: VirtualBus, name: str = "tester") -> None:
        super().__init__(name)
        self.bus = bus
        bus.attach(self)
        self.channels: dict[int, TpChannel] = {}
        self._setup_replies: dict[int, bytes] = {}   # resp can_id -> payload

    # frame dispatch

    def on_frame(self, bus: VirtualBus, frame: CanFrame) -> None:
        for ch in self.channels.values():
            if ch.state in (ChannelState.CLOSED, ChannelState.IDLE):
                continue
            if ch.state == ChannelState.SETUP_SENT:
                if frame.can_id == SETUP_RESPONSE_BASE + ch.dest_address:
                    self._setup_replies[frame.can_id] = frame.payload
                    return
            elif frame.can_id == ch.remote_id:
                self._on_channel_frame(ch, frame)
                return

    def _on_channel_frame(self, ch: TpChannel, frame: CanFrame) -> None:
        ch.last_activity_us = self.bus.clock_us
        if not frame.payload:
            return
        b0 = frame.payload[0]
        hi = b0 >> 4
        if hi in (DATA_MORE, DATA_LAST):
            try:
                done = _receive_data_frame(
                    ch, b0, frame.payload[1:],
                    lambda ack: self._send(ch.local_id, bytes([ack])))
            except ValueError:
                self._teardown(ch, "SequenceError")
                return
            if done is not None:
                ch.messages.append(done)
        elif hi == 0xB:
            ch.acks.append(b0)
        elif b0 == OP_PARAMS_RESPONSE:
            if ch.state == ChannelState.PARAM_EXCHANGE:
                ch.state = ChannelState.OPEN
        elif b0 == OP_CHANNEL_TEST:
            self._send(ch.local_id, bytes([OP_PARAMS_RESPONSE]))
        elif b0 == OP_DISCONNECT:
            if ch.state != ChannelState.CLOSED:
                ch.state = ChannelState.CLOSED
                ch.events.append("ConnectionDropped")

    def _send(self, can_id: int, payload: bytes) -> None:
        self.bus.send_frame(self, CanFrame(can_id, payload))

    def _teardown(self, ch: TpChannel, event: str) -> None:
        if ch.state != ChannelState.CLOSED:
            ch.state = ChannelState.CLOSED
            ch.events.append(event)
            if ch.local_id:
                self._send(ch.local_id, bytes([OP_DISCONNECT]))

    # operations

    def open_channel(self, dest_address: int) -> TpChannel:
        existing = self.channels.get(dest_address)
        if existing is not None and existing.state not in (
                ChannelState.CLOSED, ChannelState.IDLE):
            raise ChannelBusy(f"channel to 0x{dest_address:02X} already active")
        ch = TpChannel(role="tester", dest_address=dest_address,
                       state=ChannelState.SETUP_SENT,
                       last_activity_us=self.bus.clock_us)
        self.channels[dest_address] = ch
        resp_id = SETUP_RESPONSE_BASE + dest_address
        self._setup_replies.pop(resp_id, None)
        self._send(SETUP_ID, bytes([dest_address]) + SETUP_REQUEST_TAIL)
        self.bus.run_pending()
        if resp_id not in self._setup_replies:
            self.bus.advance_clock(ch.ack_timeout_us)
            self.bus.run_pending()
        reply = self._setup_replies.pop(resp_id, None)
        if reply is None:
            ch.state = ChannelState.CLOSED
            raise SetupTimeout(f"no setup response from 0x{dest_address:02X}")
        opcode = reply[1]
        if opcode in SETUP_REFUSED_OPCODES:
            ch.state = ChannelState.CLOSED
            raise SetupRefused(f"module 0x{dest_address:02X} refused: 0x{opcode:02X}")
        if opcode != OP_SETUP_POSITIVE or len(reply) < 7:
            ch.state = ChannelState.CLOSED
            raise ProtocolError(f"unexpected setup reply {reply.hex()}")
        ch.local_id = struct.unpack("<H", reply[2:4])[0]
        ch.remote_id = struct.unpack("<H", reply[4:6])[0]
        ch.state = ChannelState.PARAM_EXCHANGE
        # Timing bytes: ack timeout and keep-alive in 10 ms units,
        # inactivity limit in 100 ms units.
        params = bytes([
            OP_PARAMS_REQUEST,
            ch.block_size,
            ch.ack_timeout_us // 10_000,
            ch.keepalive_interval_us // 10_000,
            ch.inactivity_limit_us // 100_000,
            0x00,
        ])
        self._send(ch.local_id, params)
        self.bus.run_pending()
        if ch.state != ChannelState.OPEN:
            self.bus.advance_clock(ch.ack_timeout_us)
            self.bus.run_pending()
        if ch.state != ChannelState.OPEN:
            ch.state = ChannelState.CLOSED
            raise SetupTimeout("parameter exchange did not complete")
        ch.last_activity_us = self.bus.clock_us
        return ch

    def send_message(self, ch: TpChannel, payload: bytes) -> int:
        """Segment and send one message, honouring block-size acknowledgement."""
        if ch.state != ChannelState.OPEN:
            raise NotOpen(f"channel state is {ch.state.value}")
        if len(payload) > MAX_MESSAGE:
            raise ValueError(f"message of {len(payload)} bytes exceeds {MAX_MESSAGE}")
        chunks = chunk_payload(payload)
        sent = 0
        while sent < len(chunks):
            block = chunks[sent:sent + ch.block_size]
            frames: list[bytes] = []
            for chunk in block:
                last = sent + len(frames) == len(chunks) - 1
                header = ((DATA_LAST if last else DATA_MORE) << 4) | ch.tx_seq
                ch.tx_seq = (ch.tx_seq + 1) % SEQ_MOD
                frames.append(bytes([header]) + chunk)
            for raw in frames:
                self._send(ch.local_id, raw)
            self.bus.run_pending()
            self._await_ack(ch, frames)
            sent += len(block)
        return len(payload)

    def _await_ack(self, ch: TpChannel, frames: list[bytes]) -> None:
        expected = ACK_BASE | ch.tx_seq
        for attempt in range(2):
            if not ch.acks:
                self.bus.advance_clock(ch.ack_timeout_us)
                self.bus.run_pending()
            if ch.acks:
                got = ch.acks.popleft()
                if got != expected:
                    self._teardown(ch, "SequenceError")
                    self.bus.run_pending()
                    raise SequenceError(
                        f"ack 0x{got:02X}, expected 0x{expected:02X}")
                return
            if attempt == 0:
                logger.debug("ack timeout, retransmitting block of %d", len(frames))
                for raw in frames:
                    self._send(ch.local_id, raw)
                self.bus.run_pending()
        ch.state = ChannelState.CLOSED
        raise TransportTimeout("no acknowledgement after retransmission")

    def receive_message(self, ch: TpChannel) -> bytes | None:
        return ch.messages.popleft() if ch.messages else None

    def request(self, ch: TpChannel, req: DiagRequest) -> DiagResponse:
        """Send a diagnostic request and return the decoded response."""
        self.send_message(ch, encode_diag_request(req))
        if not ch.messages:
            self.bus.advance_clock(ch.ack_timeout_us)
            self.bus.run_pending()
        if not ch.messages:
            raise TransportTimeout(f"no response to service 0x{req.service_id:02X}")
        return decode_diag_response(ch.messages.popleft())

    def service_keep_alive(self, ch: TpChannel, now_us: int) -> CanFrame | None:
        """Ping the module if the keep-alive interval elapsed; detect drops.

        Sending the ping does not count as activity (only the module's reply
        does), so a silent peer still trips the inactivity limit.
        """
        if ch.state != ChannelState.OPEN:
            return None
        sent: CanFrame | None = None
        if now_us - ch.last_activity_us >= ch.keepalive_interval_us:
            sent = CanFrame(ch.local_id, bytes([OP_CHANNEL_TEST]))
            self.bus.send_frame(self, sent)
            self.bus.run_pending()
        if ch.state == ChannelState.OPEN and \
                now_us - ch.last_activity_us > ch.inactivity_limit_us:
            ch.state = ChannelState.CLOSED
            ch.events.append("ConnectionDropped")
        return sent

    def close(self, ch: TpChannel) -> None:
        if ch.state not in (ChannelState.CLOSED, ChannelState.IDLE):
            if ch.local_id:
                self._send(ch.local_id, bytes([OP_DISCONNECT]))
                self.bus.run_pending()
            ch.state = ChannelState.CLOSED


# -- module role -------------------------------------------------------


class TpModuleEndpoint:
    """Module-side endpoint for one destination address.

    Event driven: the owning gateway node forwards frames and timer ticks.
    Responses are segmented and streamed out block by block as the tester's
    acknowledgements come back, all within the same bus cascade.
    """

    def __init__(self, dest_address: int, module_tx_id: int, tester_tx_id: int,
                 handler: Callable[[bytes], bytes | None],
                 send_fn: Callable[[CanFrame], None]) -> None:
        self.dest_address = dest_address
        self.module_tx_id = module_tx_id
        self.tester_tx_id = tester_tx_id
        self.handler = handler
        self._send_fn = send_fn
        self.channel = TpChannel(role="module", dest_address=dest_address,
                                 local_id=module_tx_id, remote_id=tester_tx_id)
        self._tx_chunks: list[bytes] = []
        self._tx_pos = 0
        self.timer_tag = f"tp-inactivity-{dest_address:02X}"

    # helpers

    def _send(self, payload: bytes) -> None:
        self._send_fn(CanFrame(self.module_tx_id, payload))

    def _reset(self, now_us: int) -> None:
        ch = self.channel
        ch.state = ChannelState.PARAM_EXCHANGE
        ch.tx_seq = ch.rx_seq = 0
        ch.frames_since_ack = 0
        ch.rx_buffer.clear()
        ch.acks.clear()
        ch.last_activity_us = now_us
        self._tx_chunks = []
        self._tx_pos = 0

    # events from the gateway

    def handle_setup(self, bus: VirtualBus, gateway: BusNode) -> None:
        resp_id = SETUP_RESPONSE_BASE + self.dest_address
        if self.channel.state in (ChannelState.PARAM_EXCHANGE, ChannelState.OPEN):
            refuse = bytes([self.dest_address, SETUP_REFUSED_OPCODES[0],
                            0, 0, 0, 0, 0x01])
            self._send_fn(CanFrame(resp_id, refuse))
            return
        self._reset(bus.clock_us)
        reply = bytes([self.dest_address, OP_SETUP_POSITIVE]) \
            + struct.pack("<H", self.tester_tx_id) \
            + struct.pack("<H", self.module_tx_id) + b"\x01"
        self._send_fn(CanFrame(resp_id, reply))
        bus.schedule_timer(gateway, bus.clock_us + INACTIVITY_LIMIT_US + 1,
                           self.timer_tag)

    def on_can(self, bus: VirtualBus, frame: CanFrame) -> None:
        ch = self.channel
        if ch.state in (ChannelState.IDLE, ChannelState.CLOSED) or not frame.payload:
            return
        ch.last_activity_us = bus.clock_us
        b0 = frame.payload[0]
        hi = b0 >> 4
        if hi in (DATA_MORE, DATA_LAST):
            if ch.state != ChannelState.OPEN:
                return
            try:
                done = _receive_data_frame(
                    ch, b0, frame.payload[1:],
                    lambda ack: self._send(bytes([ack])))
            except ValueError:
                self._drop(ch)
                return
            if done is not None:
                response = self.handler(done)
                if response is not None:
                    self._begin_send(response)
        elif hi == 0xB:
            self._continue_send(b0)
        elif b0 == OP_PARAMS_REQUEST:
            # Echo the tester's parameters back; we accept them as offered.
            ch.block_size = frame.payload[1] if len(frame.payload) > 1 \
                else DEFAULT_BLOCK_SIZE
            self._send(bytes([OP_PARAMS_RESPONSE]) + frame.payload[1:])
            ch.state = ChannelState.OPEN
        elif b0 == OP_CHANNEL_TEST:
            self._send(bytes([OP_PARAMS_RESPONSE]))
        elif b0 == OP_DISCONNECT:
            ch.state = ChannelState.CLOSED

    def _drop(self, ch: TpChannel) -> None:
        ch.state = ChannelState.CLOSED
        ch.events.append("SequenceError")
        self._send(bytes([OP_DISCONNECT]))

    # transmit path

    def _begin_send(self, payload: bytes) -> None:
        self._tx_chunks = chunk_payload(payload)
        self._tx_pos = 0
        self._send_block()

    def _send_block(self) -> None:
        ch = self.channel
        block = self._tx_chunks[self._tx_pos:self._tx_pos + ch.block_size]
        for i, chunk in enumerate(block):
            last = self._tx_pos + i == len(self._tx_chunks) - 1
            header = ((DATA_LAST if last else DATA_MORE) << 4) | ch.tx_seq
            ch.tx_seq = (ch.tx_seq + 1) % SEQ_MOD
            self._send(bytes([header]) + chunk)
        self._tx_pos += len(block)

    def _continue_send(self, ack: int) -> None:
        ch = self.channel
        if (ack & 0xF) != ch.tx_seq:
            self._drop(ch)
            return
        if self._tx_pos < len(self._tx_chunks):
            self._send_block()
        else:
            self._tx_chunks = []
            self._tx_pos = 0

    def on_inactivity_timer(self, bus: VirtualBus, gateway: BusNode) -> None:
        ch = self.channel
        if ch.state in (ChannelState.IDLE, ChannelState.CLOSED):
            return
        idle = bus.clock_us - ch.last_activity_us
        if idle > ch.inactivity_limit_us:
            ch.state = ChannelState.CLOSED
            ch.events.append("ConnectionDropped")
            self._send(bytes([OP_DISCONNECT]))
            logger.debug("dest 0x%02X dropped after %d us idle",
                         self.dest_address, idle)
        else:
            bus.schedule_timer(
                gateway, ch.last_activity_us + ch.inactivity_limit_us + 1,
                self.timer_tag)
