import socket

import pytest

from vehsim.infotainment import (
    BACKEND_XML,
    ContactEvent,
    ContextEvent,
    DebugDestination,
    DEFAULT_LOG_EPOCH_MS,
    GpsEvent,
    InfotainmentState,
    InfotainmentTcpAdapter,
    LOG_STEP_MS,
    MileageEvent,
    PORT_BACKEND,
    PORT_TELEMETRY,
    PORT_WEB,
    SpeedEvent,
    TAG_BLUETOOTH,
    TAG_GPS,
    TAG_MILEAGE,
    TAG_RADIO,
    TAG_SPEECH,
    TelemetryLine,
    VCard,
    emit_telemetry,
    http_get,
    serve_connection,
    set_debug_destination,
    set_engineering_menu,
)

TOM = VCard("Tom Adam", "Adam;Tom",
            [("CELL", "07765551237"), ("HOME", "01334 812345")])


# -- vcards ------------------------------------------------------------

def test_vcard_wire_format():
    wire = TOM.serialize()
    assert wire == ("BEGIN:VCARD..VERSION:3.0..FN:Tom Adam..N:Adam;Tom.."
                    "TEL;TYPE=CELL:07765551237..TEL;TYPE=HOME:01334 812345.."
                    "END:VCARD")


def test_vcard_round_trip_with_missed_call():
    card = VCard("Stuart White", "White;Stuart", [("CELL", "07745551271")],
                 missed_call_timestamp="20171106T130835")
    back = VCard.parse(card.serialize())
    assert back == card


def test_vcard_parse_tolerates_stray_spacing():
    noisy = ("BEGIN:VCARD..VERSION:3.0 ..FN:Tom Adam..N:Adam;Tom.."
             "TEL;TYPE=CELL:07765551237..END:VCARD")
    card = VCard.parse(noisy)
    assert card.full_name == "Tom Adam"
    assert card.tels == [("CELL", "07765551237")]


# -- telemetry emission ------------------------------------------------

def test_default_epoch_renders_the_expected_clock():
    assert DEFAULT_LOG_EPOCH_MS == 57_902_301
    line = TelemetryLine("16:05:02.301", "Info", TAG_RADIO, "Car speed = 0")
    assert line.render() == "16:05:02.301 [Info][J5e.Radio.System] Car speed = 0"


def test_gps_line_and_track_mirror():
    state = InfotainmentState()
    line = emit_telemetry(state, GpsEvent(56.264731, -3.720325, 0))
    assert line.render() == (
        "16:05:02.301 [Info][" + TAG_GPS + "] "
        "VehPos offroad 56.264731 -3.720325, 0 cm/s, conf: 1000")
    assert state.gps_track == [(56.264731, -3.720325, 0)]


def test_speed_line_and_state_mirror():
    state = InfotainmentState()
    line = emit_telemetry(state, SpeedEvent(48))
    assert line.tag == TAG_RADIO
    assert line.message == "Car speed = 48"
    assert state.current_speed == 48


def test_mileage_line_and_state_mirror():
    state = InfotainmentState()
    line = emit_telemetry(state, MileageEvent(11581))
    assert line.tag == TAG_MILEAGE
    assert line.message == ("[PID=532558 TID= 5] [OSVHR]   CarcomBapKm "
                            "received from CarCom with current Mileage=11581")
    assert state.mileage_km == 11581


def test_contact_line_embeds_the_serialized_card():
    state = InfotainmentState()
    line = emit_telemetry(state, ContactEvent(TOM))
    wire = TOM.serialize()
    assert line.tag == TAG_BLUETOOTH
    assert line.message == ("Adapte.   BT_APPL_PIM_DATA_IND: parse_status=0 "
                            f"(success), object_done=1, data({len(wire)})={wire}")
    assert state.contacts == [TOM]


def test_context_line():
    state = InfotainmentState()
    line = emit_telemetry(state, ContextEvent())
    assert line.tag == TAG_SPEECH
    assert line.message == ("ContextManager:embedGuestContext() "
                            "Phone.Speech.ContactNames")


def test_log_clock_steps_one_second_per_line():
    state = InfotainmentState()
    first = emit_telemetry(state, SpeedEvent(1))
    second = emit_telemetry(state, SpeedEvent(2))
    third = emit_telemetry(state, SpeedEvent(3))
    assert (first.time_str, second.time_str, third.time_str) == \
        ("16:05:02.301", "16:05:03.301", "16:05:04.301")
    assert state.log_clock_ms == DEFAULT_LOG_EPOCH_MS + 3 * LOG_STEP_MS


def test_log_clock_wraps_at_midnight():
    state = InfotainmentState(log_clock_ms=24 * 3600 * 1000 - 500)
    line = emit_telemetry(state, SpeedEvent(5))
    assert line.time_str == "23:59:59.500"
    assert emit_telemetry(state, SpeedEvent(5)).time_str == "00:00:00.500"


def test_unknown_event_type_is_an_error():
    state = InfotainmentState()
    with pytest.raises(TypeError):
        emit_telemetry(state, object())


# -- web service -------------------------------------------------------

def test_http_get_directory_listing():
    status, ctype, body = http_get(InfotainmentState(), "/info")
    assert status == 200 and ctype == "text/xml"
    assert "<dir>/rc</dir>" in body and "<dir>/rc/info</dir>" in body


def test_http_get_rc_and_rc_info():
    state = InfotainmentState()
    emit_telemetry(state, GpsEvent(56.264731, -3.720325, 0))
    emit_telemetry(state, SpeedEvent(48))
    assert http_get(state, "/rc") == (200, "text/plain", "rc\n  info\n")
    status, _, body = http_get(state, "/rc/info")
    assert status == 200
    assert body == ("Position = 56.264731 -3.720325\n"
                    "Speed = 48 mph\n"
                    "Mileage = 11580 km\n")


def test_http_get_without_a_fix_reports_zeros():
    _, _, body = http_get(InfotainmentState(), "/rc/info")
    assert body.startswith("Position = 0.000000 0.000000\n")


def test_http_get_unknown_path():
    assert http_get(InfotainmentState(), "/etc/passwd")[0] == 404


# -- connection handling -----------------------------------------------

def test_closed_port_refuses():
    with pytest.raises(ConnectionRefusedError):
        serve_connection(InfotainmentState(), 22, b"")


def test_backend_port_tells_you_to_go_away():
    reply = serve_connection(InfotainmentState(), PORT_BACKEND, b"")
    assert reply == BACKEND_XML.encode()
    assert b"go away" in reply


def test_telemetry_port_streams_every_line():
    state = InfotainmentState()
    emit_telemetry(state, SpeedEvent(48))
    emit_telemetry(state, MileageEvent(11580))
    reply = serve_connection(state, PORT_TELEMETRY, b"")
    assert reply.decode() == "".join(l.render() + "\n" for l in state.telemetry)


def test_web_port_speaks_http():
    state = InfotainmentState()
    reply = serve_connection(state, PORT_WEB, b"GET /rc HTTP/1.0\r\n\r\n")
    assert reply.startswith(b"HTTP/1.0 200 OK\r\n")
    assert reply.endswith(b"rc\n  info\n")
    assert b"Content-Length: 10\r\n" in reply


def test_web_port_rejects_non_get_and_garbage():
    state = InfotainmentState()
    assert b"404" in serve_connection(state, PORT_WEB, b"POST / HTTP/1.0\r\n\r\n")
    assert b"404" in serve_connection(state, PORT_WEB, b"\xff\xfe")


def test_open_port_without_a_service_answers_empty():
    state = InfotainmentState()
    state.open_ports.add(1234)
    assert serve_connection(state, 1234, b"") == b""


# -- engineering menu --------------------------------------------------

def test_menu_requires_developer_mode():
    state = InfotainmentState()
    with pytest.raises(PermissionError):
        set_engineering_menu(state, True)
    assert not state.engineering_menu_accessible
    state.developer_mode = True
    set_engineering_menu(state, True)
    assert state.engineering_menu_accessible


def test_menu_can_always_be_closed():
    state = InfotainmentState(developer_mode=True,
                              engineering_menu_accessible=True)
    state.developer_mode = False
    set_engineering_menu(state, False)
    assert not state.engineering_menu_accessible


def test_debug_destination_requires_the_menu():
    state = InfotainmentState(developer_mode=True)
    with pytest.raises(PermissionError):
        set_debug_destination(state, DebugDestination.USB)
    set_engineering_menu(state, True)
    set_debug_destination(state, DebugDestination.USB)
    assert state.debug_destination is DebugDestination.USB


def test_usb_destination_mirrors_new_lines_only():
    state = InfotainmentState(developer_mode=True)
    emit_telemetry(state, SpeedEvent(10))          # before the switch
    set_engineering_menu(state, True)
    set_debug_destination(state, DebugDestination.USB)
    line = emit_telemetry(state, SpeedEvent(20))
    assert state.usb_log == [line.render()]
    set_debug_destination(state, DebugDestination.INTERNAL)
    emit_telemetry(state, SpeedEvent(30))
    assert len(state.usb_log) == 1


# -- loopback sockets --------------------------------------------------

def _fetch(port, payload=b""):
    with socket.create_connection(("127.0.0.1", port), timeout=2) as sock:
        if payload:
            sock.sendall(payload)
        sock.shutdown(socket.SHUT_WR)
        chunks = []
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                return b"".join(chunks)
            chunks.append(chunk)


def test_tcp_adapter_round_trip():
    state = InfotainmentState()
    emit_telemetry(state, SpeedEvent(48))
    adapter = InfotainmentTcpAdapter(
        state, port_map={PORT_TELEMETRY: 0, PORT_BACKEND: 0, PORT_WEB: 0})
    bound = adapter.start()
    try:
        assert set(bound) == {PORT_TELEMETRY, PORT_BACKEND, PORT_WEB}
        assert all(p > 0 for p in bound.values())
        telemetry = _fetch(bound[PORT_TELEMETRY])
        assert telemetry == serve_connection(state, PORT_TELEMETRY, b"")
        backend = _fetch(bound[PORT_BACKEND])
        assert b"go away" in backend
        web = _fetch(bound[PORT_WEB], b"GET /rc/info HTTP/1.0\r\n\r\n")
        assert b"Mileage = 11580 km" in web
    finally:
        adapter.stop()
