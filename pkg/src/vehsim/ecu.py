"""Simulated CAN gateway and engine control unit.

The gateway owns the transport endpoints and an allow-list of
(destination address, service id) pairs; anything not on the list gets a
security-access-denied negative response. Behind it sit two diagnostic
servers: the engine controller (identification, live data, fault memory,
adaptation channels and the fuel map memory window) and the infotainment
control head (its developer-mode adaptation).

Fuel maps are fixed-point: cells are stored as integer hundredths of
mg/cycle so encode/compare round-trips are exact. The serialized image is
magic "VMAP", version byte, u16-LE row/column counts, row-major u16-LE
cells (hundredths), then a u16-LE additive checksum of all preceding bytes.

Adaptation writes travel as [nameLen u8][name ascii][value u16 BE, tenths].
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction

from . import vwtp
from .canbus import BusNode, CanFrame, VirtualBus
from .vwtp import (
    DiagRequest,
    DiagResponse,
    NRC_CONDITIONS_NOT_CORRECT,
    NRC_SECURITY_ACCESS_DENIED,
    NRC_SERVICE_NOT_SUPPORTED,
    TpModuleEndpoint,
    negative_response,
    positive_response,
)

logger = logging.getLogger(__name__)

# Diagnostic service ids (KWP2000 flavor).
SVC_READ_IDENT = 0x1A
SVC_READ_LOCAL = 0x21
SVC_READ_MEMORY = 0x23
SVC_WRITE_ADAPTATION = 0x2B
SVC_WRITE_MEMORY = 0x3D

IDENT_VIN = 0x90
LOCAL_SPEED = 0x01
LOCAL_MILEAGE = 0x02
LOCAL_FAULTS = 0x03
LOCAL_CRASH = 0x04

ENGINE_ADDRESS = 0x1F
INFOTAINMENT_ADDRESS = 0x5F

# Negotiated data-id pairs per destination: (tester transmits, module transmits).
CHANNEL_ID_MAP: dict[int, tuple[int, int]] = {
    ENGINE_ADDRESS: (0x300, 0x740),
    INFOTAINMENT_ADDRESS: (0x310, 0x750),
}

# Classic broadcast diagnostics outside the transport; always refused.
RAW_DIAG_REQUEST_ID = 0x7DF
RAW_DIAG_RESPONSE_ID = 0x7E8

START_STOP_CHANNEL = "IDE08348"
DEVELOPER_MODE_CHANNEL = "DeveloperMode"

MAP_MAGIC = b"VMAP"
MAP_VERSION = 0x01

DEFAULT_ALLOW_LIST: frozenset[tuple[int, int]] = frozenset({
    (ENGINE_ADDRESS, SVC_READ_IDENT),
    (ENGINE_ADDRESS, SVC_READ_LOCAL),
    (ENGINE_ADDRESS, SVC_READ_MEMORY),
    (ENGINE_ADDRESS, SVC_WRITE_ADAPTATION),
    (ENGINE_ADDRESS, SVC_WRITE_MEMORY),
    (INFOTAINMENT_ADDRESS, SVC_WRITE_ADAPTATION),
})


class FormatError(ValueError):
    """Map image with a bad magic, version or geometry."""


class ChecksumError(ValueError):
    """Map image whose additive checksum does not match."""


class EmptyRegionError(ValueError):
    """Scaling region selects no cells."""


# -- engine map --------------------------------------------------------

STOCK_LOAD_AXIS = [0, 500, 551, 1000, 1250, 1500, 1750, 1900, 2016, 2247,
                   2499, 2750, 3000, 3250, 3500, 3750, 4000, 4250, 4500,
                   4800, 5200]
STOCK_RPM_AXIS = [500, 900, 1000]
_STOCK_ROW_MG = [30.00, 30.00, 30.00, 30.00, 39.60, 48.00, 54.00, 56.00,
                 54.75, 53.50, 52.50, 51.75, 51.00, 50.00, 49.50, 48.00,
                 47.00, 44.00, 39.00, 32.00, 0.00]


def quantize_centi(value_mg: float) -> int:
    """mg -> integer hundredths, round half up (exact over the binary value)."""
    q = Fraction(value_mg) * 100
    return int(q + Fraction(1, 2)) if q >= 0 else -int(-q + Fraction(1, 2))


@dataclass
class EngineMap:
    """Rectangular fuel-quantity map; cells are hundredths of mg/cycle."""

    rpm_axis: list[int]
    load_axis: list[int]
    cells: list[list[int]]

    def __post_init__(self) -> None:
        if len(self.cells) != len(self.rpm_axis):
            raise FormatError("row count does not match rpm axis")
        for row in self.cells:
            if len(row) != len(self.load_axis):
                raise FormatError("column count does not match load axis")

    @classmethod
    def from_mg(cls, rpm_axis: list[int], load_axis: list[int],
                rows_mg: list[list[float]]) -> "EngineMap":
        cells = [[quantize_centi(v) for v in row] for row in rows_mg]
        return cls(list(rpm_axis), list(load_axis), cells)

    def cell_mg(self, row: int, col: int) -> float:
        return self.cells[row][col] / 100.0

    def rows_mg(self) -> list[list[float]]:
        return [[c / 100.0 for c in row] for row in self.cells]

    def copy(self) -> "EngineMap":
        return EngineMap(list(self.rpm_axis), list(self.load_axis),
                         [list(row) for row in self.cells])


def stock_fuel_map() -> EngineMap:
    return EngineMap(list(STOCK_RPM_AXIS), list(STOCK_LOAD_AXIS),
                     [[quantize_centi(v) for v in _STOCK_ROW_MG]
                      for _ in STOCK_RPM_AXIS])


def encode_map_image(m: EngineMap) -> bytes:
    out = bytearray()
    out += MAP_MAGIC
    out.append(MAP_VERSION)
    out += struct.pack("<HH", len(m.rpm_axis), len(m.load_axis))
    for row in m.cells:
        for centi in row:
            if not 0 <= centi <= 0xFFFF:
                raise FormatError(f"cell value {centi} outside u16 range")
            out += struct.pack("<H", centi)
    out += struct.pack("<H", sum(out) % 0x10000)
    return bytes(out)


def decode_map_image(data: bytes,
                     rpm_axis: list[int] | None = None,
                     load_axis: list[int] | None = None) -> EngineMap:
    """Decode and verify an image. Axis values are not carried in the image;
    callers supply them (the ECU knows its own axes)."""
    if len(data) < 11:
        raise FormatError(f"image of {len(data)} bytes is shorter than header")
    if data[:4] != MAP_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    if data[4] != MAP_VERSION:
        raise FormatError(f"unsupported version {data[4]}")
    rows, cols = struct.unpack("<HH", data[5:9])
    expected = 9 + 2 * rows * cols + 2
    if len(data) != expected:
        raise FormatError(f"length {len(data)}, geometry needs {expected}")
    declared = struct.unpack("<H", data[-2:])[0]
    actual = sum(data[:-2]) % 0x10000
    if declared != actual:
        raise ChecksumError(f"checksum 0x{declared:04X} != 0x{actual:04X}")
    flat = struct.unpack(f"<{rows * cols}H", data[9:-2]) if rows * cols else ()
    cells = [list(flat[r * cols:(r + 1) * cols]) for r in range(rows)]
    return EngineMap(
        list(rpm_axis) if rpm_axis is not None else list(range(rows)),
        list(load_axis) if load_axis is not None else list(range(cols)),
        cells)


def scale_map_region(m: EngineMap, rpm_range: tuple[int, int],
                     load_range: tuple[int, int], factor: float) -> EngineMap:
    """Multiply every cell whose axis values fall in the given inclusive
    ranges, re-quantizing half-up to hundredths. Other cells stay identical."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    rows = [i for i, rpm in enumerate(m.rpm_axis)
            if rpm_range[0] <= rpm <= rpm_range[1]]
    cols = [j for j, load in enumerate(m.load_axis)
            if load_range[0] <= load <= load_range[1]]
    if not rows or not cols:
        raise EmptyRegionError(
            f"rpm {rpm_range} x load {load_range} selects no cells")
    f = Fraction(factor)
    out = m.copy()
    for i in rows:
        for j in cols:
            out.cells[i][j] = int(m.cells[i][j] * f + Fraction(1, 2))
    return out


# -- vehicle state -----------------------------------------------------

@dataclass
class FaultRecord:
    code: int
    mileage_at_trigger_km: int
    timestamp_us: int
    resolved: bool = False


@dataclass
class CrashRecord:
    brakes_applied: bool
    impact_timestamp_us: int
    impact_direction: str = "front"


# Adaptation channels: name -> (min, max) in engineering units.
ADAPTATION_BOUNDS: dict[str, tuple[float, float]] = {
    START_STOP_CHANNEL: (0.0, 25.5),
    DEVELOPER_MODE_CHANNEL: (0.0, 1.0),
}


@dataclass
class VehicleState:
    vin: str = "SIMVEH00000000001"
    mileage_km: int = 11580
    speed_mph: float = 48.0
    battery_volts: float = 12.0
    locked: bool = True
    adaptations: dict[str, float] = field(
        default_factory=lambda: {START_STOP_CHANNEL: 7.5})
    faults: list[FaultRecord] = field(default_factory=list)
    crash_data: CrashRecord | None = None
    engine_map: EngineMap = field(default_factory=stock_fuel_map)

    def __post_init__(self) -> None:
        if len(self.vin) != 17:
            raise ValueError(f"vin must be 17 characters, got {len(self.vin)}")

    @property
    def start_stop_enabled(self) -> bool:
        # Below the configured voltage limit the feature silently stays off.
        return self.battery_volts >= self.adaptations.get(START_STOP_CHANNEL, 7.5)


def encode_adaptation(name: str, value: float) -> bytes:
    raw = name.encode("ascii")
    return bytes([len(raw)]) + raw + struct.pack(">H", int(round(value * 10)))


def decode_adaptation(body: bytes) -> tuple[str, float]:
    if len(body) < 1:
        raise ValueError("empty adaptation body")
    n = body[0]
    if len(body) != 1 + n + 2:
        raise ValueError("adaptation body length mismatch")
    name = body[1:1 + n].decode("ascii")
    tenths = struct.unpack(">H", body[1 + n:])[0]
    return name, tenths / 10.0


# -- diagnostic servers ------------------------------------------------

class EngineDiagServer:
    """Engine-controller services over an open transport channel."""

    def __init__(self, state: VehicleState) -> None:
        self.state = state
        self._staged = bytearray()

    def map_image(self) -> bytes:
        return encode_map_image(self.state.engine_map)

    def handle(self, req: DiagRequest) -> DiagResponse:
        sid = req.service_id
        if sid == SVC_READ_IDENT:
            return self._read_ident(req)
        if sid == SVC_READ_LOCAL:
            return self._read_local(req)
        if sid == SVC_READ_MEMORY:
            return self._read_memory(req)
        if sid == SVC_WRITE_MEMORY:
            return self._write_memory(req)
        if sid == SVC_WRITE_ADAPTATION:
            return self._write_adaptation(req)
        return negative_response(sid, NRC_SERVICE_NOT_SUPPORTED)

    def _read_ident(self, req: DiagRequest) -> DiagResponse:
        if len(req.body) != 1 or req.body[0] != IDENT_VIN:
            return negative_response(req.service_id, NRC_SERVICE_NOT_SUPPORTED)
        return positive_response(
            req.service_id, bytes([IDENT_VIN]) + self.state.vin.encode("ascii"))

    def _read_local(self, req: DiagRequest) -> DiagResponse:
        if len(req.body) != 1:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        local_id = req.body[0]
        if local_id == LOCAL_SPEED:
            data = struct.pack(">H", int(round(self.state.speed_mph)))
        elif local_id == LOCAL_MILEAGE:
            data = struct.pack(">I", self.state.mileage_km)
        elif local_id == LOCAL_FAULTS:
            data = bytes([len(self.state.faults)])
            for f in self.state.faults:
                data += struct.pack(">HIQB", f.code, f.mileage_at_trigger_km,
                                    f.timestamp_us, int(f.resolved))
        elif local_id == LOCAL_CRASH:
            crash = self.state.crash_data
            if crash is None:
                data = b"\x00"
            else:
                direction = crash.impact_direction.encode("ascii")[:16]
                data = bytes([1, int(crash.brakes_applied)]) \
                    + struct.pack(">Q", crash.impact_timestamp_us) \
                    + bytes([len(direction)]) + direction
        else:
            return negative_response(req.service_id, NRC_SERVICE_NOT_SUPPORTED)
        return positive_response(req.service_id, bytes([local_id]) + data)

    def _read_memory(self, req: DiagRequest) -> DiagResponse:
        if len(req.body) != 4:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        addr = int.from_bytes(req.body[:3], "big")
        count = req.body[3]
        image = self.map_image()
        if addr + count > len(image):
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        return positive_response(req.service_id, image[addr:addr + count])

    def _write_memory(self, req: DiagRequest) -> DiagResponse:
        if len(req.body) < 4:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        addr = int.from_bytes(req.body[:3], "big")
        count = req.body[3]
        data = req.body[4:]
        if len(data) != count:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        if addr == 0:
            self._staged.clear()
        if addr != len(self._staged):
            # Writes must be contiguous from address zero.
            self._staged.clear()
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        self._staged.extend(data)
        total = self._expected_total()
        if total is not None and len(self._staged) >= total:
            staged = bytes(self._staged)
            self._staged.clear()
            if len(staged) != total:
                return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
            try:
                replacement = decode_map_image(
                    staged, self.state.engine_map.rpm_axis,
                    self.state.engine_map.load_axis)
            except (FormatError, ChecksumError) as exc:
                logger.debug("staged image rejected: %s", exc)
                return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
            self.state.engine_map = replacement
        return positive_response(req.service_id, req.body[:3])

    def _expected_total(self) -> int | None:
        if len(self._staged) < 9:
            return None
        rows, cols = struct.unpack("<HH", bytes(self._staged[5:9]))
        return 9 + 2 * rows * cols + 2

    def _write_adaptation(self, req: DiagRequest) -> DiagResponse:
        try:
            name, value = decode_adaptation(req.body)
        except ValueError:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        bounds = ADAPTATION_BOUNDS.get(name)
        if name == DEVELOPER_MODE_CHANNEL or bounds is None:
            # Developer mode lives on the infotainment head, not here.
            return negative_response(req.service_id, NRC_SERVICE_NOT_SUPPORTED)
        if not bounds[0] <= value <= bounds[1]:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        self.state.adaptations[name] = value
        return positive_response(req.service_id, req.body[-2:])


class InfotainmentControlServer:
    """Control-head diagnostics: only the developer-mode adaptation."""

    def __init__(self, on_developer_mode) -> None:
        self.on_developer_mode = on_developer_mode
        self.developer_mode = 0.0

    def handle(self, req: DiagRequest) -> DiagResponse:
        if req.service_id != SVC_WRITE_ADAPTATION:
            return negative_response(req.service_id, NRC_SERVICE_NOT_SUPPORTED)
        try:
            name, value = decode_adaptation(req.body)
        except ValueError:
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        if name != DEVELOPER_MODE_CHANNEL:
            return negative_response(req.service_id, NRC_SERVICE_NOT_SUPPORTED)
        if value not in (0.0, 1.0):
            return negative_response(req.service_id, NRC_CONDITIONS_NOT_CORRECT)
        self.developer_mode = value
        self.on_developer_mode(bool(value))
        return positive_response(req.service_id, req.body[-2:])


# -- gateway -----------------------------------------------------------

def gateway_filter(allow_list: frozenset[tuple[int, int]],
                   dest_address: int, req: DiagRequest) -> bool:
    return (dest_address, req.service_id) in allow_list


class GatewayNode(BusNode):
    """Bus node fronting the diagnostic servers.

    Owns one transport endpoint per destination address and applies the
    allow-list before dispatching a decoded request. Classic broadcast
    requests on 0x7DF never reach a server; they are answered with a
    single negative frame (len, 0x7F, service id, nrc).
    """

    def __init__(self, bus: VirtualBus, handlers: dict[int, object],
                 allow_list: frozenset[tuple[int, int]] = DEFAULT_ALLOW_LIST,
                 name: str = "gateway") -> None:
        super().__init__(name)
        self.bus = bus
        bus.attach(self)
        self.allow_list = allow_list
        self.handlers = handlers
        self.endpoints: dict[int, TpModuleEndpoint] = {}
        for dest, (tester_tx, module_tx) in CHANNEL_ID_MAP.items():
            if dest not in handlers:
                continue
            self.endpoints[dest] = TpModuleEndpoint(
                dest, module_tx, tester_tx,
                handler=self._make_dispatch(dest),
                send_fn=lambda fr: self.bus.send_frame(self, fr))

    def _make_dispatch(self, dest: int):
        def dispatch(message: bytes) -> bytes:
            try:
                req = vwtp.decode_diag_request(message)
            except (vwtp.ProtocolError, IndexError):
                resp = negative_response(0x00, NRC_CONDITIONS_NOT_CORRECT)
                return vwtp.encode_diag_response(resp)
            if not gateway_filter(self.allow_list, dest, req):
                logger.debug("filtered service 0x%02X to 0x%02X",
                             req.service_id, dest)
                resp = negative_response(req.service_id,
                                         NRC_SECURITY_ACCESS_DENIED)
            else:
                resp = self.handlers[dest].handle(req)
            return vwtp.encode_diag_response(resp)
        return dispatch

    def on_frame(self, bus: VirtualBus, frame: CanFrame) -> None:
        if frame.can_id == vwtp.SETUP_ID and frame.payload:
            endpoint = self.endpoints.get(frame.payload[0])
            if endpoint is not None:
                endpoint.handle_setup(bus, self)
            return
        if frame.can_id == RAW_DIAG_REQUEST_ID:
            # Raw (non-transport) probe: always a negative response, never data.
            sid = frame.payload[1] if len(frame.payload) > 1 else 0x00
            reply = bytes([0x03, vwtp.NEGATIVE_RESPONSE_SID, sid,
                           NRC_SECURITY_ACCESS_DENIED])
            bus.send_frame(self, CanFrame(RAW_DIAG_RESPONSE_ID, reply))
            return
        for endpoint in self.endpoints.values():
            if frame.can_id == endpoint.tester_tx_id:
                endpoint.on_can(bus, frame)
                return

    def on_timer(self, bus: VirtualBus, tag: str) -> None:
        for endpoint in self.endpoints.values():
            if tag == endpoint.timer_tag:
                endpoint.on_inactivity_timer(bus, self)
                return
