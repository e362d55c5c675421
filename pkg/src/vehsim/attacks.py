"""Attacker-side tooling: jam-and-replay, scanning, harvesting, tampering.

Every procedure here runs against the simulated vehicle only and returns a
structured proof of what happened, so scenario postconditions can be checked
without trusting the attacker's own bookkeeping. The jam-and-replay flow:
transmit noise next to the fob carrier while the victim presses, capture the
superposition, recover the blocked packet with a narrow low-pass, stop
jamming and replay it clean. The car's window logic does the rest: the
blocked counter was never consumed, so the replay is fresh.

Telephone numbers lifted from harvested vCards are masked immediately: first
four characters and the final one survive, the rest become '*'. Strings of
five characters or fewer are fully masked (rule edge; see package docs).
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from enum import Enum

from .ecu import (
    START_STOP_CHANNEL,
    STOCK_LOAD_AXIS,
    STOCK_RPM_AXIS,
    decode_map_image,
    encode_adaptation,
    encode_map_image,
    scale_map_region,
    SVC_READ_MEMORY,
    SVC_WRITE_ADAPTATION,
    SVC_WRITE_MEMORY,
)
from .infotainment import InfotainmentState, VCard, serve_connection
from .keyfob import (
    CarReceiver,
    FobCommand,
    FobPacket,
    KeyFob,
    PACKET_BITS,
    RxStatus,
    car_receive,
    press_button,
    verify_tag,
)
from .rfphy import (
    BasebandSignal,
    JammerConfig,
    OokConfig,
    channel_mix,
    generate_jam,
    mix_and_filter,
    ook_demodulate,
    ook_modulate,
)
from .vwtp import (
    DiagRequest,
    NRC_SECURITY_ACCESS_DENIED,
    TpChannel,
    TpTester,
)

logger = logging.getLogger(__name__)

RECOVERY_CUTOFF_HZ = 50_000.0
RECOVERY_TRANSITION_HZ = 10_000.0

REMAP_FACTOR_MIN = 0.5
REMAP_FACTOR_MAX = 1.5

MEMORY_CHUNK = 128


class AttackFailed(Exception):
    """An attack step did not produce the state it needed.

    reason is one of: CaptureUnusable, StaleCode, Filtered, WriteRejected,
    ChecksumRejected, VerifyFailed.
    """

    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class RollJamPhase(Enum):
    IDLE = "idle"
    JAMMING = "jamming"
    CAPTURED = "captured"
    REPLAYED = "replayed"


@dataclass
class RollJamSession:
    jammer: JammerConfig = field(default_factory=JammerConfig)
    captured_signals: list[BasebandSignal] = field(default_factory=list)
    recovered_packets: list[FobPacket] = field(default_factory=list)
    phase: RollJamPhase = RollJamPhase.IDLE


@dataclass
class RollJamResult:
    proof: dict
    signals: dict[str, BasebandSignal]
    session: RollJamSession


def roll_jam(car: CarReceiver, fob: KeyFob, session: RollJamSession,
             command: FobCommand = FobCommand.UNLOCK,
             cfg: OokConfig | None = None) -> RollJamResult:
    """Run the full jam, capture, recover, replay sequence.

    Raises AttackFailed(CaptureUnusable) when the recovered packet does not
    verify, AttackFailed(StaleCode) when the final replay is not accepted
    (typically because the jam was too weak and the victim's press landed).
    """
    cfg = cfg or OokConfig()
    session.phase = RollJamPhase.JAMMING
    duration = max(session.jammer.packet_length_symbols, PACKET_BITS)
    jam = generate_jam(session.jammer, duration)

    # The victim presses while we are on the air.
    pressed, clean = press_button(fob, command, cfg)
    on_air = channel_mix([clean, jam])
    session.captured_signals.append(on_air)
    jammed_rx = car_receive(car, on_air, cfg)
    logger.debug("jammed press at the car: %s", jammed_rx.status.value)

    # Narrowband recovery from our own capture of the same superposition.
    narrow = mix_and_filter(on_air, cfg.carrier_offset_hz,
                            RECOVERY_CUTOFF_HZ, RECOVERY_TRANSITION_HZ)
    bits, quality = ook_demodulate(
        narrow, OokConfig(cfg.symbol_rate_baud, 0.0, cfg.on_amplitude))
    if len(bits) < PACKET_BITS:
        raise AttackFailed("CaptureUnusable", "too few bits recovered")
    recovered = FobPacket.from_bits(bits)
    # Harness-level validity check: a real attacker sees only preamble and
    # demod quality, but the simulation can also confirm the tag.
    if recovered.preamble != 0xAAAA or not verify_tag(recovered, fob.secret):
        raise AttackFailed("CaptureUnusable", f"demod quality {quality:.3f}")
    session.recovered_packets.append(recovered)
    session.phase = RollJamPhase.CAPTURED

    # Jammer off; replay the blocked code in the clear.
    replay_sig = ook_modulate(recovered.to_bits(), cfg)
    replay_rx = car_receive(car, replay_sig, cfg)
    if replay_rx.status is not RxStatus.ACCEPTED:
        raise AttackFailed(
            "StaleCode",
            f"replay {replay_rx.status.value}"
            + (f"/{replay_rx.reason.value}" if replay_rx.reason else ""))
    session.phase = RollJamPhase.REPLAYED
    proof = {
        "victim_counter": pressed.counter,
        "captured_counter": recovered.counter,
        "replayed_counter": recovered.counter,
        "car_last_accepted": car.last_accepted,
        "car_locked": car.locked,
        "jammed_press_status": jammed_rx.status.value,
        "jammed_press_reason": jammed_rx.reason.value if jammed_rx.reason else None,
        "capture_quality": quality,
        "phase": session.phase.value,
    }
    return RollJamResult(proof=proof, signals={
        "fob": clean, "jam": jam, "captured": on_air, "filtered": narrow,
    }, session=session)


# -- network-side reconnaissance --------------------------------------

def port_scan(state: InfotainmentState, ports=None) -> set[int]:
    """Probe every port in range; open means the service answers at all."""
    ports = range(1, 65536) if ports is None else ports
    found: set[int] = set()
    for port in ports:
        try:
            serve_connection(state, port, b"")
        except ConnectionRefusedError:
            continue
        found.add(port)
    return found


# -- telemetry harvesting ----------------------------------------------

_LINE_RE = re.compile(
    r"^(\d{2}:\d{2}:\d{2}\.\d{3})\s*\[(\w+)\]\s*\[([^\]]+)\]\s*(.*)$")
_VCARD_RE = re.compile(r"data\((\d+)\)=(BEGIN:VCARD.*END:VCARD)")
_VEHPOS_RE = re.compile(r"VehPos offroad (\S+) (\S+), (\d+) cm/s")
_MILEAGE_RE = re.compile(r"current Mileage=(\d+)")
_SPEED_RE = re.compile(r"Car speed = (-?\d+)")


def mask_number(number: str) -> str:
    """Keep the first four and last characters, star the rest."""
    if len(number) <= 5:
        return "*" * len(number)
    return number[:4] + "*" * (len(number) - 5) + number[-1]


@dataclass
class HarvestReport:
    contacts: list[VCard] = field(default_factory=list)
    positions: list[tuple[str, str]] = field(default_factory=list)
    mileage_km: int | None = None
    speeds: list[int] = field(default_factory=list)
    line_count: int = 0
    unmatched_lines: int = 0


def harvest_telemetry(stream: bytes | str) -> HarvestReport:
    """Total parser over a captured telemetry stream.

    Never raises on junk: unknown lines are counted and skipped. Positions
    keep their exact source tokens (a captured stream may itself be
    redacted); phone numbers in recovered vCards are masked on the spot.
    """
    text = stream.decode("utf-8", "replace") if isinstance(stream, bytes) else stream
    report = HarvestReport()
    for raw in text.splitlines():
        if not raw.strip():
            continue
        matched = _LINE_RE.match(raw)
        if not matched:
            report.unmatched_lines += 1
            continue
        report.line_count += 1
        message = matched.group(4)
        vcard = _VCARD_RE.search(message)
        if vcard:
            card = VCard.parse(vcard.group(2))
            card.tels = [(k, mask_number(n)) for k, n in card.tels]
            report.contacts.append(card)
            continue
        pos = _VEHPOS_RE.search(message)
        if pos:
            report.positions.append((pos.group(1), pos.group(2)))
            continue
        mileage = _MILEAGE_RE.search(message)
        if mileage:
            report.mileage_km = int(mileage.group(1))
            continue
        speed = _SPEED_RE.search(message)
        if speed:
            report.speeds.append(int(speed.group(1)))
    return report


# -- diagnostic-bus tampering ------------------------------------------

def _adaptation_write(tester: TpTester, ch: TpChannel, name: str,
                      value: float) -> None:
    resp = tester.request(ch, DiagRequest(SVC_WRITE_ADAPTATION,
                                          encode_adaptation(name, value)))
    if resp.negative:
        if resp.nrc == NRC_SECURITY_ACCESS_DENIED:
            raise AttackFailed("Filtered",
                               f"gateway blocked adaptation {name}")
        raise AttackFailed("WriteRejected", f"nrc 0x{resp.nrc:02X}")


def disable_start_stop(tester: TpTester, ch: TpChannel) -> dict:
    """Raise the start/stop voltage limit above a healthy battery: the
    feature dies silently, no fault is ever logged."""
    _adaptation_write(tester, ch, START_STOP_CHANNEL, 12.1)
    return {"channel": START_STOP_CHANNEL, "value": 12.1}


def restore_start_stop(tester: TpTester, ch: TpChannel) -> dict:
    _adaptation_write(tester, ch, START_STOP_CHANNEL, 7.5)
    return {"channel": START_STOP_CHANNEL, "value": 7.5}


# -- fuel-map tampering ------------------------------------------------

def _read_memory(tester: TpTester, ch: TpChannel, addr: int, count: int) -> bytes:
    body = addr.to_bytes(3, "big") + bytes([count])
    resp = tester.request(ch, DiagRequest(SVC_READ_MEMORY, body))
    if resp.negative:
        raise AttackFailed("WriteRejected",
                           f"memory read nrc 0x{resp.nrc:02X}")
    return resp.body


def read_map_image(tester: TpTester, ch: TpChannel) -> bytes:
    """Pull the whole map image over the diagnostic memory window."""
    header = _read_memory(tester, ch, 0, 9)
    rows, cols = struct.unpack("<HH", header[5:9])
    total = 9 + 2 * rows * cols + 2
    image = bytearray(header)
    while len(image) < total:
        count = min(MEMORY_CHUNK, total - len(image))
        image += _read_memory(tester, ch, len(image), count)
    return bytes(image)


def write_map_image(tester: TpTester, ch: TpChannel, image: bytes) -> None:
    offset = 0
    while offset < len(image):
        chunk = image[offset:offset + MEMORY_CHUNK]
        body = offset.to_bytes(3, "big") + bytes([len(chunk)]) + chunk
        resp = tester.request(ch, DiagRequest(SVC_WRITE_MEMORY, body))
        if resp.negative:
            raise AttackFailed("ChecksumRejected",
                               f"write at {offset} nrc 0x{resp.nrc:02X}")
        offset += len(chunk)


def remap(tester: TpTester, ch: TpChannel,
          rpm_range: tuple[int, int], load_range: tuple[int, int],
          factor: float,
          rpm_axis: list[int] | None = None,
          load_axis: list[int] | None = None) -> dict:
    """Read, scale, re-checksum, write back and verify the fuel map.

    The tool refuses factors outside [0.5, 1.5]; the ECU itself would take
    any well-formed image, the guard rail is purely on this side.
    """
    if not REMAP_FACTOR_MIN <= factor <= REMAP_FACTOR_MAX:
        raise ValueError(
            f"factor {factor} outside [{REMAP_FACTOR_MIN}, {REMAP_FACTOR_MAX}]")
    rpm_axis = rpm_axis if rpm_axis is not None else list(STOCK_RPM_AXIS)
    load_axis = load_axis if load_axis is not None else list(STOCK_LOAD_AXIS)

    original_image = read_map_image(tester, ch)
    original = decode_map_image(original_image, rpm_axis, load_axis)
    scaled = scale_map_region(original, rpm_range, load_range, factor)
    new_image = encode_map_image(scaled)
    write_map_image(tester, ch, new_image)

    readback = read_map_image(tester, ch)
    if readback != new_image:
        raise AttackFailed("VerifyFailed", "read-back image differs")

    diff = [
        {"rpm": rpm_axis[i], "load": load_axis[j],
         "before_mg": original.cell_mg(i, j), "after_mg": scaled.cell_mg(i, j)}
        for i in range(len(rpm_axis)) for j in range(len(load_axis))
        if original.cells[i][j] != scaled.cells[i][j]
    ]
    return {
        "factor": factor,
        "rpm_range": list(rpm_range),
        "load_range": list(load_range),
        "cells_changed": len(diff),
        "diff": diff,
        "image_bytes": len(new_image),
    }
