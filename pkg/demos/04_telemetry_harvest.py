#!/usr/bin/env python3
"""Scan the head unit, read the open services, harvest the log stream."""

from vehsim.attacks import harvest_telemetry, port_scan
from vehsim.infotainment import PORT_TELEMETRY, http_get, serve_connection
from vehsim.scenario import build_vehicle

vehicle = build_vehicle()
info = vehicle.infotainment

open_ports = port_scan(info)
print("open ports:", sorted(open_ports))

# 25010 is the backend link. It knows we are not the backend.
print("port 25010 says:")
print(serve_connection(info, 25010, b"").decode())

# 49101 is a little web server with live vehicle data.
for path in ("/info", "/rc", "/rc/info"):
    status, _, body = http_get(info, path)
    print(f"GET {path} -> {status}")
    print("   ", body.replace("\n", "\n    ").rstrip())

# 15361 answers any connection with the developer log stream.
stream = serve_connection(info, PORT_TELEMETRY, b"")
lines = stream.decode().splitlines()
print()
print(f"port {PORT_TELEMETRY} stream, {len(lines)} lines:")
for line in lines:
    print("   ", line[:100])
print()

report = harvest_telemetry(stream)
print("harvested:")
print(f"  mileage: {report.mileage_km} km")
print(f"  positions: {report.positions}")
print(f"  speeds: {report.speeds}")
for card in report.contacts:
    tels = ", ".join(f"{kind} {number}" for kind, number in card.tels)
    missed = f", missed call {card.missed_call_timestamp}" \
        if card.missed_call_timestamp else ""
    print(f"  contact: {card.full_name} ({tels}{missed})")
print()
print("numbers are masked at harvest time. the stream itself is not.")
