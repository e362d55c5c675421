"""Scenario configuration and vehicle assembly.

A scenario config is a JSON document (see README for the full grammar);
missing keys fall back to the built-in defaults, which describe one
fictional but fully populated passenger car: warm engine data on the
diagnostic bus, a chatty infotainment unit with a paired phone, and a
rolling-code fob bonded to the car. CLI flags can override single keys by
dotted path ("vehicle.mileage_km=2000").

build_vehicle() wires the whole thing onto one virtual bus and returns the
composite; everything downstream (attacks, forensics, the CLI runners)
works against that object.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import ecu, infotainment, keyfob, rfphy, vwtp
from .canbus import VirtualBus
from .ecu import (
    CrashRecord,
    EngineDiagServer,
    FaultRecord,
    GatewayNode,
    InfotainmentControlServer,
    VehicleState,
)
from .infotainment import (
    ContactEvent,
    ContextEvent,
    GpsEvent,
    InfotainmentState,
    MileageEvent,
    SpeedEvent,
    VCard,
    emit_telemetry,
)
from .keyfob import CarReceiver, KeyFob
from .rfphy import JammerConfig
from .vwtp import DiagRequest, TpChannel, TpTester

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, key_path: str, detail: str) -> None:
        super().__init__(f"config key '{key_path}': {detail}")
        self.key_path = key_path


DEFAULT_CONFIG: dict = {
    "seed": 42,
    "vehicle": {
        "vin": "SIMVEH00000000001",
        "mileage_km": 11580,
        "speed_mph": 48.0,
        "battery_volts": 12.0,
        "locked": True,
        "adaptations": {"IDE08348": 7.5},
        "faults": [],
        "sensors": [],
    },
    "gateway": {
        "allow_list": [[dest, svc] for dest, svc in sorted(ecu.DEFAULT_ALLOW_LIST)],
    },
    "infotainment": {
        "open_ports": sorted(infotainment.DEFAULT_OPEN_PORTS),
        "paired_devices": [["38:F9:D3:4A:10:21", "iPhone"]],
        "contacts": [
            {"full_name": "Tom Adam", "name": "Adam;Tom",
             "tels": [["CELL", "07765551237"], ["HOME", "01334 812345"]],
             "missed": None},
            {"full_name": "Stuart White", "name": "White;Stuart",
             "tels": [["CELL", "07745551271"]],
             "missed": "20171106T130835"},
        ],
        "call_log": [
            {"number": "07765551237", "kind": "dialled",
             "timestamp": "20171106T125910"},
            {"number": "07745551271", "kind": "missed",
             "timestamp": "20171106T130835"},
        ],
        "gps_track": [[56.264731, -3.720325, 0]],
        "current_track": "Everlong",
        "thumbnails": 3,
        "voice_data_present": False,
        "mileage_km": 11580,
        "speed": 0,
    },
    "keyfob": {
        "present": True,
        "key_id": 0x12AB34CD,
        "secret_hex": "000102030405060708090a0b0c0d0e0f",
        "counter": 0,
        "window": 16,
        "transponder_id": "TRP-7G260144",
        "key_count": 2,
        "fuel_status": "5/8",
        "in_range": True,
    },
    "rf": {
        "jam_offset_hz": 20_000.0,
        "jam_width_hz": 60_000.0,
        "jam_power": 3.0,
        "jam_seed": None,
        "packet_symbols": 160,
    },
    "remap": {
        "factor": 1.1,
        "rpm_range": [500, 1000],
        "load_range": [1900, 4500],
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None) -> dict:
    """Defaults merged with the JSON file at path (if given)."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<root>", f"cannot read {path}: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("<root>", "top level must be an object")
    return deep_merge(DEFAULT_CONFIG, user)


def apply_overrides(config: dict, assignments: list[str]) -> dict:
    """Apply 'dotted.path=value' overrides; values parse as JSON when they
    can, bare strings otherwise."""
    out = copy.deepcopy(config)
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise ConfigError(key, "override must look like path=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"'{part}' is not a section")
        node[parts[-1]] = value
    return out


def validate_config(config: dict) -> None:
    for section in ("vehicle", "infotainment", "keyfob", "rf"):
        if section not in config or not isinstance(config[section], dict):
            raise ConfigError(section, "missing required section")
    vin = config["vehicle"].get("vin")
    if not isinstance(vin, str) or len(vin) != 17:
        raise ConfigError("vehicle.vin", "must be a 17-character string")
    secret = config["keyfob"].get("secret_hex", "")
    try:
        if len(bytes.fromhex(secret)) != keyfob.SECRET_BYTES:
            raise ValueError
    except (ValueError, TypeError):
        raise ConfigError("keyfob.secret_hex",
                          "must be 32 hex characters") from None
    window = config["keyfob"].get("window", keyfob.DEFAULT_WINDOW)
    if not isinstance(window, int) or not 1 <= window <= 256:
        raise ConfigError("keyfob.window", "must be an integer in 1..256")


# -- assembly ----------------------------------------------------------

@dataclass
class Vehicle:
    """Everything on and around one simulated car."""

    config: dict
    seed: int
    bus: VirtualBus
    state: VehicleState
    engine_server: EngineDiagServer
    head_server: InfotainmentControlServer
    gateway: GatewayNode
    obd: TpTester
    infotainment: InfotainmentState
    fob: KeyFob | None
    car: CarReceiver
    jammer: JammerConfig
    _owned_channels: list[TpChannel] = field(default_factory=list)

    def engine_channel(self) -> TpChannel:
        """An open diagnostic channel to the engine controller, reusing the
        existing one when it is still up."""
        existing = self.obd.channels.get(ecu.ENGINE_ADDRESS)
        if existing is not None and existing.state is vwtp.ChannelState.OPEN:
            return existing
        ch = self.obd.open_channel(ecu.ENGINE_ADDRESS)
        self._owned_channels.append(ch)
        return ch

    def head_channel(self) -> TpChannel:
        existing = self.obd.channels.get(ecu.INFOTAINMENT_ADDRESS)
        if existing is not None and existing.state is vwtp.ChannelState.OPEN:
            return existing
        ch = self.obd.open_channel(ecu.INFOTAINMENT_ADDRESS)
        self._owned_channels.append(ch)
        return ch


def build_vehicle(config: dict | None = None, seed: int | None = None) -> Vehicle:
    config = config if config is not None else copy.deepcopy(DEFAULT_CONFIG)
    validate_config(config)
    if seed is None:
        seed = int(config.get("seed", 42))

    v = config["vehicle"]
    state = VehicleState(
        vin=v["vin"],
        mileage_km=int(v.get("mileage_km", 11580)),
        speed_mph=float(v.get("speed_mph", 48.0)),
        battery_volts=float(v.get("battery_volts", 12.0)),
        locked=bool(v.get("locked", True)),
        adaptations=dict(v.get("adaptations", {"IDE08348": 7.5})),
        faults=[FaultRecord(int(f["code"]), int(f["mileage_km"]),
                            int(f.get("timestamp_us", 0)),
                            bool(f.get("resolved", False)))
                for f in v.get("faults", [])],
    )

    info_cfg = config["infotainment"]
    info = InfotainmentState(
        open_ports=set(int(p) for p in info_cfg.get("open_ports", [])),
        paired_devices=[tuple(d) for d in info_cfg.get("paired_devices", [])],
        call_log=[infotainment.CallRecord(c["number"], c["kind"], c["timestamp"])
                  for c in info_cfg.get("call_log", [])],
        current_track=info_cfg.get("current_track", ""),
        mileage_km=int(info_cfg.get("mileage_km", state.mileage_km)),
        thumbnails=int(info_cfg.get("thumbnails", 0)),
        voice_data_present=bool(info_cfg.get("voice_data_present", False)),
    )
    _seed_telemetry(info, info_cfg)

    bus = VirtualBus()
    engine_server = EngineDiagServer(state)
    head_server = InfotainmentControlServer(
        on_developer_mode=lambda on: setattr(info, "developer_mode", on))
    allow = frozenset(
        (int(d), int(s)) for d, s in config.get("gateway", {}).get(
            "allow_list", [list(p) for p in sorted(ecu.DEFAULT_ALLOW_LIST)]))
    gateway = GatewayNode(bus, {
        ecu.ENGINE_ADDRESS: engine_server,
        ecu.INFOTAINMENT_ADDRESS: head_server,
    }, allow_list=allow)
    obd = TpTester(bus)

    k = config["keyfob"]
    secret = bytes.fromhex(k["secret_hex"])
    fob: KeyFob | None = None
    if k.get("present", True):
        fob = KeyFob(
            key_id=int(k["key_id"]), secret=secret,
            counter=int(k.get("counter", 0)),
            transponder_id=k.get("transponder_id"),
            key_count=k.get("key_count"), fuel_status=k.get("fuel_status"))
        if k.get("in_range", True):
            # The fob was in the car recently; its convenience memory is current.
            fob.vin = state.vin
            fob.last_mileage_km = state.mileage_km
    car = CarReceiver(key_id=int(k["key_id"]), secret=secret,
                      last_accepted=int(k.get("counter", 0)),
                      window=int(k.get("window", keyfob.DEFAULT_WINDOW)),
                      locked=state.locked)

    rf = config.get("rf", {})
    jam_seed = rf.get("jam_seed")
    jammer = JammerConfig(
        frequency_offset_hz=float(rf.get("jam_offset_hz", 20_000.0)),
        channel_width_hz=float(rf.get("jam_width_hz", 60_000.0)),
        tx_power=float(rf.get("jam_power", 3.0)),
        packet_length_symbols=int(rf.get("packet_symbols", 160)),
        seed=int(jam_seed) if jam_seed is not None else seed)

    return Vehicle(config=config, seed=seed, bus=bus, state=state,
                   engine_server=engine_server, head_server=head_server,
                   gateway=gateway, obd=obd, infotainment=info, fob=fob,
                   car=car, jammer=jammer)


def _seed_telemetry(info: InfotainmentState, info_cfg: dict) -> None:
    """Replay the configured history through the emitter so the stream,
    contact store and GPS track all agree."""
    contacts = [
        VCard(full_name=c["full_name"], name=c["name"],
              tels=[tuple(t) for t in c.get("tels", [])],
              missed_call_timestamp=c.get("missed"))
        for c in info_cfg.get("contacts", [])
    ]
    if contacts:
        emit_telemetry(info, ContactEvent(contacts[0]))
    for lat, lon, cm_s in info_cfg.get("gps_track", []):
        emit_telemetry(info, GpsEvent(float(lat), float(lon), int(cm_s)))
    emit_telemetry(info, MileageEvent(int(info_cfg.get("mileage_km",
                                                       info.mileage_km))))
    for card in contacts[1:]:
        emit_telemetry(info, ContactEvent(card))
    emit_telemetry(info, ContextEvent())
    emit_telemetry(info, SpeedEvent(int(info_cfg.get("speed", 0))))


# -- scenario helpers --------------------------------------------------

def ignition_off(vehicle: Vehicle) -> None:
    """Park the car: the in-range fob refreshes its convenience memory."""
    if vehicle.fob is not None and vehicle.config["keyfob"].get("in_range", True):
        vehicle.fob.vin = vehicle.state.vin
        vehicle.fob.last_mileage_km = vehicle.state.mileage_km


def inject_fault(vehicle: Vehicle, code: int, mileage_km: int | None = None,
                 timestamp_us: int | None = None) -> FaultRecord:
    record = FaultRecord(
        code=code,
        mileage_at_trigger_km=(mileage_km if mileage_km is not None
                               else vehicle.state.mileage_km),
        timestamp_us=(timestamp_us if timestamp_us is not None
                      else vehicle.bus.clock_us))
    vehicle.state.faults.append(record)
    return record


def inject_crash(vehicle: Vehicle, brakes_applied: bool,
                 impact_timestamp_us: int,
                 impact_direction: str = "front") -> CrashRecord:
    record = CrashRecord(brakes_applied, impact_timestamp_us, impact_direction)
    vehicle.state.crash_data = record
    return record


# -- diagnostic client helpers ----------------------------------------

def diag_read_vin(tester: TpTester, ch: TpChannel) -> str:
    resp = tester.request(ch, DiagRequest(ecu.SVC_READ_IDENT,
                                          bytes([ecu.IDENT_VIN])))
    if resp.negative:
        raise vwtp.ProtocolError(f"vin read refused, nrc {resp.nrc}")
    return resp.body[1:].decode("ascii")


def diag_read_speed_mph(tester: TpTester, ch: TpChannel) -> int:
    resp = tester.request(ch, DiagRequest(ecu.SVC_READ_LOCAL,
                                          bytes([ecu.LOCAL_SPEED])))
    if resp.negative:
        raise vwtp.ProtocolError(f"speed read refused, nrc {resp.nrc}")
    return struct.unpack(">H", resp.body[1:3])[0]


def diag_read_mileage_km(tester: TpTester, ch: TpChannel) -> int:
    resp = tester.request(ch, DiagRequest(ecu.SVC_READ_LOCAL,
                                          bytes([ecu.LOCAL_MILEAGE])))
    if resp.negative:
        raise vwtp.ProtocolError(f"mileage read refused, nrc {resp.nrc}")
    return struct.unpack(">I", resp.body[1:5])[0]


def diag_read_faults(tester: TpTester, ch: TpChannel) -> list[FaultRecord]:
    resp = tester.request(ch, DiagRequest(ecu.SVC_READ_LOCAL,
                                          bytes([ecu.LOCAL_FAULTS])))
    if resp.negative:
        raise vwtp.ProtocolError(f"fault read refused, nrc {resp.nrc}")
    count = resp.body[1]
    out: list[FaultRecord] = []
    offset = 2
    for _ in range(count):
        code, mileage, ts, resolved = struct.unpack(
            ">HIQB", resp.body[offset:offset + 15])
        out.append(FaultRecord(code, mileage, ts, bool(resolved)))
        offset += 15
    return out


def diag_read_crash(tester: TpTester, ch: TpChannel) -> CrashRecord | None:
    resp = tester.request(ch, DiagRequest(ecu.SVC_READ_LOCAL,
                                          bytes([ecu.LOCAL_CRASH])))
    if resp.negative:
        raise vwtp.ProtocolError(f"crash read refused, nrc {resp.nrc}")
    if resp.body[1] == 0:
        return None
    brakes = bool(resp.body[2])
    (ts,) = struct.unpack(">Q", resp.body[3:11])
    dir_len = resp.body[11]
    direction = resp.body[12:12 + dir_len].decode("ascii")
    return CrashRecord(brakes, ts, direction)


def write_developer_mode(tester: TpTester, ch: TpChannel, on: bool) -> bool:
    resp = tester.request(ch, DiagRequest(
        ecu.SVC_WRITE_ADAPTATION,
        ecu.encode_adaptation(ecu.DEVELOPER_MODE_CHANNEL, 1.0 if on else 0.0)))
    return not resp.negative


# -- methodology walk --------------------------------------------------

def attack_surface(config: dict) -> str:
    """Walk the five enumeration steps over a scenario config and render
    the findings as a plain-text report."""
    validate_config(config)
    v = config["vehicle"]
    info = config["infotainment"]
    rf_cfg = config.get("rf", {})
    ports = sorted(int(p) for p in info.get("open_ports", []))
    sensors = [str(s) for s in v.get("sensors", [])]
    carrier_mhz = (rfphy.DEFAULT_ORIGIN_HZ
                   + rfphy.FOB_CARRIER_OFFSET_HZ) / 1e6

    lines = ["attack surface enumeration", ""]
    lines.append(f"I. vehicular space: passenger car simulation, vin {v['vin']}")
    lines.append(
        f"II. short range wireless: remote fob on {carrier_mhz:.3f} MHz "
        f"(on-off keyed, rolling code); jammer profile "
        f"{rf_cfg.get('jam_width_hz', 60_000.0) / 1e3:.0f} kHz wide")
    ui_bits = ["OBD-II diagnostic port (channel-oriented transport, "
               "gateway filtered)"]
    if ports:
        ui_bits.append("infotainment unit, open ports "
                       + ", ".join(str(p) for p in ports))
    ui_bits.append("USB debug destination behind the engineering menu")
    lines.append("III. accessible user interfaces: " + "; ".join(ui_bits))
    if infotainment.PORT_WEB in ports:
        lines.append(f"IV. internet access: web server on port "
                     f"{infotainment.PORT_WEB}")
    else:
        lines.append("IV. internet access: none")
    if sensors:
        lines.append("V. sensors and autonomy: " + ", ".join(sensors))
    else:
        lines.append("V. sensors and autonomy: none - no lidar or radar fitted")
    return "\n".join(lines) + "\n"
