"""vehsim: a virtual vehicle for security experiments.

One simulated passenger car, end to end: a CAN bus with a channel-oriented
diagnostic transport and a filtering gateway, an engine controller with a
writable fuel map, a leaky infotainment unit, and a rolling-code key fob
with the radio path modeled at complex baseband. On top of the simulation
sit the published attacks (roll-jam, telemetry harvesting, diagnostic
tampering, remapping) and a forensic extractor that reads the same stores
back out without disturbing them.

Everything is deterministic: virtual clocks, seeded noise, fixed-point
maps. The same seed always reproduces the same bytes.
"""

from .attacks import (
    AttackFailed,
    HarvestReport,
    RollJamResult,
    RollJamSession,
    harvest_telemetry,
    mask_number,
    port_scan,
    remap,
    roll_jam,
)
from .canbus import BusError, CanFrame, FrameError, VirtualBus
from .ecu import (
    EngineDiagServer,
    EngineMap,
    GatewayNode,
    VehicleState,
    decode_map_image,
    encode_map_image,
    scale_map_region,
    stock_fuel_map,
)
from .forensics import (
    ForensicReport,
    cross_examine,
    extract_all,
    render_report,
    state_fingerprint,
)
from .infotainment import InfotainmentState, TelemetryLine, VCard, emit_telemetry
from .keyfob import CarReceiver, FobCommand, FobPacket, KeyFob, press_button
from .rfphy import BasebandSignal, JammerConfig, OokConfig, generate_jam
from .scenario import DEFAULT_CONFIG, Vehicle, build_vehicle, load_config
from .vwtp import DiagRequest, DiagResponse, TpChannel, TpTester

__version__ = "0.1.0"

__all__ = [
    "AttackFailed", "BasebandSignal", "BusError", "CanFrame", "CarReceiver",
    "DEFAULT_CONFIG", "DiagRequest", "DiagResponse", "EngineDiagServer",
    "EngineMap", "FobCommand", "FobPacket", "ForensicReport", "FrameError",
    "GatewayNode", "HarvestReport", "InfotainmentState", "JammerConfig",
    "KeyFob", "OokConfig", "RollJamResult", "RollJamSession", "TelemetryLine",
    "TpChannel", "TpTester", "VCard", "Vehicle", "VehicleState", "VirtualBus",
    "build_vehicle", "cross_examine", "decode_map_image", "encode_map_image",
    "emit_telemetry", "extract_all", "generate_jam", "harvest_telemetry",
    "load_config", "mask_number", "port_scan", "press_button", "remap",
    "render_report", "roll_jam", "scale_map_region", "state_fingerprint",
    "stock_fuel_map",
]
