"""Infotainment head unit: leaky services, log stream, engineering menu.

Three TCP services are modeled: 25010 answers any connection with a fixed
brush-off XML document, 15361 dumps the unauthenticated telemetry log, and
49101 is a small read-only web server whose /info document enumerates the
paths worth visiting. The telemetry grammar is

    HH:MM:SS.mmm [Level][dotted.source.tag] message

with vCard payloads inlined using ".." as the property separator. The
engineering menu can only be unlocked through the developer-mode adaptation
written over the diagnostic bus; once open, the debug destination can be
pointed at USB, which mirrors every telemetry line into a pluggable log.

The default transport is in-process (serve_connection); a loopback TCP
adapter is provided for poking with real tools like netcat or a browser.
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum

logger = logging.getLogger(__name__)

PORT_TELEMETRY = 15361
PORT_BACKEND = 25010
PORT_WEB = 49101
DEFAULT_OPEN_PORTS = frozenset({PORT_TELEMETRY, PORT_BACKEND, PORT_WEB})

VCARD_SEPARATOR = ".."

TAG_BLUETOOTH = "iMX6.WLAdapter.tsd.wladap"
TAG_GPS = "iMX6.Navi.tsd.mibstd2.psd.v15.shortrange.LinkTree"
TAG_MILEAGE = "iMX6.onlineVHR.OSVHR"
TAG_SPEECH = "iMX6.ASR.asr.engine"
TAG_RADIO = "J5e.Radio.System"

BACKEND_XML = ('<?xml version="1.0"?>\n'
               '<service name="vehicle-backend"><status>go away</status>'
               '</service>\n')

# 16:05:02.301 as milliseconds past midnight; an arbitrary but stable epoch.
DEFAULT_LOG_EPOCH_MS = ((16 * 3600 + 5 * 60 + 2) * 1000) + 301
LOG_STEP_MS = 1000


class DebugDestination(Enum):
    INTERNAL = "internal"
    USB = "usb"


@dataclass
class VCard:
    full_name: str
    name: str                      # structured "Last;First"
    tels: list[tuple[str, str]] = field(default_factory=list)
    missed_call_timestamp: str | None = None

    def serialize(self) -> str:
        props = ["BEGIN:VCARD", "VERSION:3.0", f"FN:{self.full_name}",
                 f"N:{self.name}"]
        props += [f"TEL;TYPE={kind}:{number}" for kind, number in self.tels]
        if self.missed_call_timestamp:
            props.append(f"X-IRMC-CALL-DATETIME;MISSED:{self.missed_call_timestamp}")
        props.append("END:VCARD")
        return VCARD_SEPARATOR.join(props)

    @classmethod
    def parse(cls, wire: str) -> "VCard":
        card = cls(full_name="", name="")
        for prop in wire.split(VCARD_SEPARATOR):
            prop = prop.strip()
            if prop.startswith("FN:"):
                card.full_name = prop[3:]
            elif prop.startswith("N:"):
                card.name = prop[2:]
            elif prop.startswith("TEL;TYPE="):
                kind, _, number = prop[9:].partition(":")
                card.tels.append((kind, number))
            elif prop.startswith("X-IRMC-CALL-DATETIME;MISSED:"):
                card.missed_call_timestamp = prop.split(":", 1)[1]
        return card


@dataclass
class CallRecord:
    number: str
    kind: str                      # "dialled" | "missed" | "received"
    timestamp: str                 # compact local time, e.g. 20171106T130835


@dataclass(frozen=True)
class TelemetryLine:
    time_str: str
    level: str
    tag: str
    message: str

    def render(self) -> str:
        return f"{self.time_str} [{self.level}][{self.tag}] {self.message}"


# Telemetry event inputs.

@dataclass(frozen=True)
class GpsEvent:
    lat: float
    lon: float
    speed_cm_s: int = 0


@dataclass(frozen=True)
class SpeedEvent:
    value: int


@dataclass(frozen=True)
class MileageEvent:
    km: int


@dataclass(frozen=True)
class ContactEvent:
    card: VCard


@dataclass(frozen=True)
class ContextEvent:
    context: str = "Phone.Speech.ContactNames"


@dataclass
class InfotainmentState:
    open_ports: set[int] = field(default_factory=lambda: set(DEFAULT_OPEN_PORTS))
    paired_devices: list[tuple[str, str]] = field(default_factory=list)
    contacts: list[VCard] = field(default_factory=list)
    call_log: list[CallRecord] = field(default_factory=list)
    gps_track: list[tuple[float, float, int]] = field(default_factory=list)
    current_track: str = ""
    mileage_km: int = 11580
    current_speed: int = 0
    thumbnails: int = 0
    voice_data_present: bool = False
    developer_mode: bool = False
    engineering_menu_accessible: bool = False
    debug_destination: DebugDestination = DebugDestination.INTERNAL
    telemetry: list[TelemetryLine] = field(default_factory=list)
    usb_log: list[str] = field(default_factory=list)
    log_clock_ms: int = DEFAULT_LOG_EPOCH_MS


def _format_time(ms_of_day: int) -> str:
    ms_of_day %= 24 * 3600 * 1000
    ms = ms_of_day % 1000
    s = (ms_of_day // 1000) % 60
    m = (ms_of_day // 60_000) % 60
    h = ms_of_day // 3_600_000
    return f"{h:02d}:{m:02d}:{s:02d}.{ms:03d}"


def emit_telemetry(state: InfotainmentState, event) -> TelemetryLine:
    """Turn a domain event into its log line; the line also lands on the
    telemetry stream and, when the debug destination is USB, the USB log."""
    if isinstance(event, GpsEvent):
        tag = TAG_GPS
        message = (f"VehPos offroad {event.lat:.6f} {event.lon:.6f}, "
                   f"{event.speed_cm_s} cm/s, conf: 1000")
        state.gps_track.append((event.lat, event.lon, event.speed_cm_s))
    elif isinstance(event, SpeedEvent):
        tag = TAG_RADIO
        message = f"Car speed = {event.value}"
        state.current_speed = event.value
    elif isinstance(event, MileageEvent):
        tag = TAG_MILEAGE
        message = ("[PID=532558 TID= 5] [OSVHR]   CarcomBapKm received "
                   f"from CarCom with current Mileage={event.km}")
        state.mileage_km = event.km
    elif isinstance(event, ContactEvent):
        tag = TAG_BLUETOOTH
        wire = event.card.serialize()
        message = ("Adapte.   BT_APPL_PIM_DATA_IND: parse_status=0 (success), "
                   f"object_done=1, data({len(wire)})={wire}")
        state.contacts.append(event.card)
    elif isinstance(event, ContextEvent):
        tag = TAG_SPEECH
        message = f"ContextManager:embedGuestContext() {event.context}"
    else:
        raise TypeError(f"unknown telemetry event {type(event).__name__}")
    line = TelemetryLine(_format_time(state.log_clock_ms), "Info", tag, message)
    state.log_clock_ms += LOG_STEP_MS
    state.telemetry.append(line)
    if state.debug_destination is DebugDestination.USB:
        state.usb_log.append(line.render())
    return line


# -- services ----------------------------------------------------------

def http_get(state: InfotainmentState, path: str) -> tuple[int, str, str]:
    """Returns (status, content type, body) for the port-49101 web server."""
    if path == "/info":
        body = ('<?xml version="1.0"?>\n'
                '<dirs><dir>/rc</dir><dir>/rc/info</dir></dirs>\n')
        return 200, "text/xml", body
    if path == "/rc":
        return 200, "text/plain", "rc\n  info\n"
    if path == "/rc/info":
        lat, lon = (state.gps_track[-1][:2] if state.gps_track else (0.0, 0.0))
        body = (f"Position = {lat:.6f} {lon:.6f}\n"
                f"Speed = {state.current_speed} mph\n"
                f"Mileage = {state.mileage_km} km\n")
        return 200, "text/plain", body
    return 404, "text/plain", "not found\n"


_HTTP_REASONS = {200: "OK", 404: "Not Found"}


def _http_response(status: int, content_type: str, body: str) -> bytes:
    payload = body.encode()
    head = (f"HTTP/1.0 {status} {_HTTP_REASONS.get(status, 'Error')}\r\n"
            f"Content-Type: {content_type}\r\n"
            f"Content-Length: {len(payload)}\r\n\r\n")
    return head.encode() + payload


def serve_connection(state: InfotainmentState, port: int, request: bytes) -> bytes:
    """One connection against a service port; in-process transport."""
    if port not in state.open_ports:
        raise ConnectionRefusedError(f"port {port} is closed")
    if port == PORT_BACKEND:
        return BACKEND_XML.encode()
    if port == PORT_TELEMETRY:
        # No authentication, no request parsing: connecting is enough.
        return ("".join(line.render() + "\n" for line in state.telemetry)).encode()
    if port == PORT_WEB:
        try:
            first = request.split(b"\r\n", 1)[0].decode("ascii", "replace")
            method, path, _ = first.split(" ", 2)
        except ValueError:
            return _http_response(404, "text/plain", "not found\n")
        if method != "GET":
            return _http_response(404, "text/plain", "not found\n")
        return _http_response(*http_get(state, path))
    # Port flagged open but carrying no modeled service.
    return b""


# -- engineering menu --------------------------------------------------

def set_engineering_menu(state: InfotainmentState, enabled: bool) -> None:
    """Menu unlock; the only door in is the developer-mode adaptation."""
    if enabled and not state.developer_mode:
        raise PermissionError("engineering menu requires the developer-mode "
                              "adaptation")
    state.engineering_menu_accessible = enabled


def set_debug_destination(state: InfotainmentState,
                          dest: DebugDestination) -> None:
    if not state.engineering_menu_accessible:
        raise PermissionError("debug destination is an engineering-menu "
                              "setting")
    state.debug_destination = dest


# -- loopback TCP adapter ---------------------------------------------

class InfotainmentTcpAdapter:
    """Real sockets on 127.0.0.1 bridging to serve_connection.

    Each configured open port gets a listener thread; connections are read
    once (short timeout), answered and closed, matching how the in-process
    transport behaves.
    """

    def __init__(self, state: InfotainmentState, host: str = "127.0.0.1",
                 port_map: dict[int, int] | None = None) -> None:
        self.state = state
        self.host = host
        self.port_map = port_map or {p: p for p in sorted(state.open_ports)}
        self._servers: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._running = False
        self.bound: dict[int, int] = {}

    def start(self) -> dict[int, int]:
        self._running = True
        for service_port, bind_port in sorted(self.port_map.items()):
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind((self.host, bind_port))
            srv.listen(8)
            srv.settimeout(0.2)
            self._servers.append(srv)
            self.bound[service_port] = srv.getsockname()[1]
            t = threading.Thread(target=self._serve_loop,
                                 args=(srv, service_port), daemon=True)
            t.start()
            self._threads.append(t)
            logger.info("listening on %s:%d for service %d", self.host,
                        self.bound[service_port], service_port)
        return dict(self.bound)

    def _serve_loop(self, srv: socket.socket, service_port: int) -> None:
        while self._running:
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.settimeout(0.2)
                try:
                    request = conn.recv(65536)
                except socket.timeout:
                    request = b""
                except OSError:
                    continue
                try:
                    reply = serve_connection(self.state, service_port, request)
                except ConnectionRefusedError:
                    reply = b""
                try:
                    conn.sendall(reply)
                except OSError:
                    pass

    def stop(self) -> None:
        self._running = False
        for srv in self._servers:
            try:
                srv.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=1.0)
        self._servers.clear()
        self._threads.clear()
