"""Rolling-code key fob and the car's receiving side.

Packet layout, transmitted MSB-first, big-endian fields:

    preamble  16 bits  0xAAAA
    keyId     32 bits
    counter   32 bits
    command    8 bits
    tag       64 bits  keyed integrity tag

The tag is Speck64/128 (27-round ARX block cipher, rotations 8/3) run in
CBC-MAC mode over the 9-byte message keyId|counter|command, padded with a
single 0x80 then zeros to two 8-byte blocks, zero IV; the final cipher block
is the tag. Words pack big-endian: an 8-byte block is (x, y) as ">II", the
16-byte secret is (K3, K2, K1, K0) as ">4I" with K0 the first schedule word.
This construction is this simulator's own; it is not the cipher of any real
fob.

The car accepts a packet iff the tag verifies and the counter lands in the
forward window (lastAccepted, lastAccepted + window]; acceptance advances
lastAccepted and toggles the lock. Rejections never move the window, so a
recorded-but-blocked code stays fresh until its counter is overtaken.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

from .rfphy import (
    BasebandSignal,
    CAR_FRONT_END_CUTOFF_HZ,
    EmptySignalError,
    OokConfig,
    mix_and_filter,
    ook_demodulate,
    ook_modulate,
)

logger = logging.getLogger(__name__)

PREAMBLE = 0xAAAA
PACKET_BYTES = 19
PACKET_BITS = PACKET_BYTES * 8
SECRET_BYTES = 16
COUNTER_MAX = 0xFFFFFFFF
DEFAULT_WINDOW = 16

_M32 = 0xFFFFFFFF
_SPECK_ROUNDS = 27


class FobExhaustedError(RuntimeError):
    """Counter space used up; the fob can never produce a fresh code again."""


class FobCommand(IntEnum):
    LOCK = 0x01
    UNLOCK = 0x02


class RxStatus(Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    NO_SIGNAL = "no_signal"


class RejectReason(Enum):
    BAD_PREAMBLE = "bad_preamble"
    BAD_TAG = "bad_tag"
    STALE_COUNTER = "stale_counter"
    OUT_OF_WINDOW = "out_of_window"


@dataclass(frozen=True)
class RxResult:
    status: RxStatus
    command: FobCommand | None = None
    reason: RejectReason | None = None


# -- keyed tag ---------------------------------------------------------

def _rotr(v: int, r: int) -> int:
    return ((v >> r) | (v << (32 - r))) & _M32


def _rotl(v: int, r: int) -> int:
    return ((v << r) | (v >> (32 - r))) & _M32


def speck64_128_encrypt(secret: bytes, block: bytes) -> bytes:
    """One Speck64/128 block encryption. Key schedule recomputed per call;
    plenty fast for packet-rate use."""
    if len(secret) != SECRET_BYTES:
        raise ValueError(f"secret must be {SECRET_BYTES} bytes")
    if len(block) != 8:
        raise ValueError("block must be 8 bytes")
    k3, k2, k1, k0 = struct.unpack(">4I", secret)
    keys = [k0]
    l = [k1, k2, k3]
    for i in range(_SPECK_ROUNDS - 1):
        l.append(((keys[i] + _rotr(l[i], 8)) & _M32) ^ i)
        keys.append(_rotl(keys[i], 3) ^ l[i + 3])
    x, y = struct.unpack(">II", block)
    for rk in keys:
        x = ((_rotr(x, 8) + y) & _M32) ^ rk
        y = _rotl(y, 3) ^ x
    return struct.pack(">II", x, y)


def prf_tag(secret: bytes, key_id: int, counter: int, command: int) -> int:
    """64-bit CBC-MAC over keyId|counter|command (fixed 9-byte message)."""
    msg = struct.pack(">IIB", key_id, counter, command) + b"\x80" + bytes(6)
    state = bytes(8)
    for off in (0, 8):
        mixed = bytes(a ^ b for a, b in zip(state, msg[off:off + 8]))
        state = speck64_128_encrypt(secret, mixed)
    return int.from_bytes(state, "big")


# -- packet ------------------------------------------------------------

@dataclass(frozen=True)
class FobPacket:
    key_id: int
    counter: int
    command: int
    tag: int
    preamble: int = PREAMBLE

    def to_bytes(self) -> bytes:
        return struct.pack(">HIIBQ", self.preamble, self.key_id, self.counter,
                           self.command, self.tag)

    def to_bits(self) -> list[int]:
        out: list[int] = []
        for byte in self.to_bytes():
            out.extend((byte >> i) & 1 for i in range(7, -1, -1))
        return out

    @classmethod
    def from_bits(cls, bits: list[int]) -> "FobPacket":
        if len(bits) < PACKET_BITS:
            raise ValueError(f"need {PACKET_BITS} bits, got {len(bits)}")
        value = 0
        for bit in bits[:PACKET_BITS]:
            value = (value << 1) | (bit & 1)
        raw = value.to_bytes(PACKET_BYTES, "big")
        preamble, key_id, counter, command, tag = struct.unpack(">HIIBQ", raw)
        return cls(key_id, counter, command, tag, preamble)


def verify_tag(packet: FobPacket, secret: bytes) -> bool:
    return packet.tag == prf_tag(secret, packet.key_id, packet.counter,
                                 packet.command)


# -- fob side ----------------------------------------------------------

@dataclass
class KeyFob:
    key_id: int
    secret: bytes
    counter: int = 0
    # Convenience memory the car refreshes at ignition-off; forensically
    # interesting, not part of the radio protocol.
    vin: str | None = None
    transponder_id: str | None = None
    key_count: int | None = None
    last_mileage_km: int | None = None
    fuel_status: str | None = None

    def __post_init__(self) -> None:
        if len(self.secret) != SECRET_BYTES:
            raise ValueError(f"secret must be {SECRET_BYTES} bytes")


def press_button(fob: KeyFob, command: FobCommand,
                 cfg: OokConfig | None = None) -> tuple[FobPacket, BasebandSignal]:
    """Advance the counter, build the packet, key it onto the carrier."""
    if fob.counter >= COUNTER_MAX:
        raise FobExhaustedError("counter space exhausted")
    fob.counter += 1
    tag = prf_tag(fob.secret, fob.key_id, fob.counter, int(command))
    packet = FobPacket(fob.key_id, fob.counter, int(command), tag)
    cfg = cfg or OokConfig()
    return packet, ook_modulate(packet.to_bits(), cfg)


# -- car side ----------------------------------------------------------

@dataclass
class CarReceiver:
    key_id: int
    secret: bytes
    last_accepted: int = 0
    window: int = DEFAULT_WINDOW
    locked: bool = True

    def __post_init__(self) -> None:
        if len(self.secret) != SECRET_BYTES:
            raise ValueError(f"secret must be {SECRET_BYTES} bytes")
        if not 1 <= self.window <= 256:
            raise ValueError(f"window {self.window} outside 1..256")


def accept_packet(car: CarReceiver, packet: FobPacket) -> RxResult:
    """Window check on an already-demodulated packet. Rejections leave
    last_accepted untouched."""
    if packet.preamble != PREAMBLE:
        return RxResult(RxStatus.REJECTED, reason=RejectReason.BAD_PREAMBLE)
    if not verify_tag(packet, car.secret) or packet.key_id != car.key_id:
        return RxResult(RxStatus.REJECTED, reason=RejectReason.BAD_TAG)
    if packet.counter <= car.last_accepted:
        return RxResult(RxStatus.REJECTED, reason=RejectReason.STALE_COUNTER)
    if packet.counter > car.last_accepted + car.window:
        return RxResult(RxStatus.REJECTED, reason=RejectReason.OUT_OF_WINDOW)
    car.last_accepted = packet.counter
    command = FobCommand(packet.command) if packet.command in \
        (FobCommand.LOCK, FobCommand.UNLOCK) else None
    if command is FobCommand.UNLOCK:
        car.locked = False
    elif command is FobCommand.LOCK:
        car.locked = True
    return RxResult(RxStatus.ACCEPTED, command=command)


def car_receive(car: CarReceiver, sig: BasebandSignal,
                cfg: OokConfig | None = None) -> RxResult:
    """Wideband receive path: 400 kHz front end, no narrow cleanup filter.

    The front end mixes the fob carrier down to 0 Hz, so slicing happens at
    zero offset; in-band interference rides straight through to the slicer.
    """
    cfg = cfg or OokConfig()
    front = mix_and_filter(sig, cfg.carrier_offset_hz,
                           CAR_FRONT_END_CUTOFF_HZ,
                           CAR_FRONT_END_CUTOFF_HZ / 4)
    try:
        bits, quality = ook_demodulate(front, replace(cfg, carrier_offset_hz=0.0))
    except EmptySignalError:
        return RxResult(RxStatus.NO_SIGNAL)
    if len(bits) < PACKET_BITS:
        return RxResult(RxStatus.NO_SIGNAL)
    packet = FobPacket.from_bits(bits)
    logger.debug("rx counter=%d quality=%.3f", packet.counter, quality)
    return accept_packet(car, packet)
