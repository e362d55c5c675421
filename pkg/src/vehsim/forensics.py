"""Post-incident extraction and cross-checking of vehicle data stores.

The extractor plays the role of an investigator with physical access: it
pulls the engine controller's records over the diagnostic bus, images the
infotainment data stores directly, and reads out whatever the key fob
cached at last ignition-off. Sources that are not reachable show up as
explicit absent markers rather than silently vanishing from the report.

Nothing here mutates vehicle state; state_fingerprint() exists so tests
and the CLI can prove that.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

from . import vwtp
from .ecu import CrashRecord, FaultRecord
from .scenario import (
    Vehicle,
    diag_read_crash,
    diag_read_faults,
    diag_read_mileage_km,
    diag_read_speed_mph,
    diag_read_vin,
)

logger = logging.getLogger(__name__)

ABSENT = "absent"


@dataclass
class ForensicReport:
    """One section per data source; None means the source was unreachable."""

    infotainment: dict | None = None
    gps: dict | None = None
    ecu: dict | None = None
    keyfob: dict | None = None

    def to_document(self) -> dict:
        return {
            "infotainment": self.infotainment if self.infotainment is not None else ABSENT,
            "gps": self.gps if self.gps is not None else ABSENT,
            "ecu": self.ecu if self.ecu is not None else ABSENT,
            "keyfob": self.keyfob if self.keyfob is not None else ABSENT,
        }


def _fault_dict(f: FaultRecord) -> dict:
    return {"code": f.code, "mileage_km": f.mileage_at_trigger_km,
            "timestamp_us": f.timestamp_us, "resolved": f.resolved}


def _crash_dict(c: CrashRecord | None) -> dict | None:
    if c is None:
        return None
    return {"brakes_applied": c.brakes_applied,
            "impact_timestamp_us": c.impact_timestamp_us,
            "impact_direction": c.impact_direction}


def extract_infotainment(vehicle: Vehicle) -> dict:
    info = vehicle.infotainment
    return {
        "paired_devices": [list(d) for d in info.paired_devices],
        "contacts": [
            {"full_name": c.full_name, "name": c.name,
             "tels": [list(t) for t in c.tels],
             "missed": c.missed_call_timestamp}
            for c in info.contacts
        ],
        "call_log": [
            {"number": r.number, "kind": r.kind, "timestamp": r.timestamp}
            for r in info.call_log
        ],
        "current_track": info.current_track,
        "thumbnails": info.thumbnails,
        "voice_data_present": info.voice_data_present,
        "mileage_km": info.mileage_km,
    }


def extract_gps(vehicle: Vehicle) -> dict:
    track = vehicle.infotainment.gps_track
    stops: list[list[float]] = []
    for lat, lon, cm_s in track:
        if cm_s == 0 and (not stops or stops[-1] != [lat, lon]):
            stops.append([lat, lon])
    return {
        "point_count": len(track),
        "last_locations": [[lat, lon] for lat, lon, _ in track[-5:]],
        "stops": stops,
    }


def extract_ecu(vehicle: Vehicle) -> dict | None:
    """Identity, odometer, faults and crash memory over the diagnostic bus.

    Returns None when the controller cannot be reached or refuses the reads;
    a partially answering controller still yields a partial section.
    """
    try:
        ch = vehicle.engine_channel()
    except vwtp.TpError as exc:
        logger.debug("engine channel unavailable: %s", exc)
        return None
    section: dict = {}
    try:
        section["vin"] = diag_read_vin(vehicle.obd, ch)
        section["mileage_km"] = diag_read_mileage_km(vehicle.obd, ch)
        section["speed_mph"] = diag_read_speed_mph(vehicle.obd, ch)
        section["faults"] = [_fault_dict(f)
                             for f in diag_read_faults(vehicle.obd, ch)]
        section["crash"] = _crash_dict(diag_read_crash(vehicle.obd, ch))
    except vwtp.TpError as exc:
        logger.debug("ecu extraction stopped early: %s", exc)
        if not section:
            return None
    return section


def extract_keyfob(vehicle: Vehicle) -> dict | None:
    fob = vehicle.fob
    if fob is None:
        return None
    return {
        "key_id": fob.key_id,
        "counter": fob.counter,
        "vin": fob.vin,
        "transponder_id": fob.transponder_id,
        "key_count": fob.key_count,
        "last_mileage_km": fob.last_mileage_km,
        "fuel_status": fob.fuel_status,
    }


def extract_all(vehicle: Vehicle) -> ForensicReport:
    return ForensicReport(
        infotainment=extract_infotainment(vehicle),
        gps=extract_gps(vehicle),
        ecu=extract_ecu(vehicle),
        keyfob=extract_keyfob(vehicle),
    )


def render_report(report: ForensicReport) -> str:
    return json.dumps(report.to_document(), sort_keys=True, indent=2) + "\n"


# -- consistency checks ------------------------------------------------

def cross_examine(report: ForensicReport) -> list[dict]:
    """Compare sections against each other; one finding per violation."""
    findings: list[dict] = []
    e, k = report.ecu, report.keyfob
    if e is not None and k is not None:
        if k.get("vin") is not None and k["vin"] != e.get("vin"):
            findings.append({
                "check": "vin_match",
                "detail": f"fob remembers vin {k['vin']} but the engine "
                          f"controller reports {e.get('vin')}",
            })
        fob_km = k.get("last_mileage_km")
        if fob_km is not None and e.get("mileage_km") is not None \
                and fob_km > e["mileage_km"]:
            findings.append({
                "check": "odometer_rollback",
                "detail": f"fob cached {fob_km} km at last ignition-off, "
                          f"odometer now reads {e['mileage_km']} km",
            })
    if e is not None and e.get("mileage_km") is not None:
        for fault in e.get("faults", []):
            if fault["mileage_km"] > e["mileage_km"]:
                findings.append({
                    "check": "fault_mileage",
                    "detail": f"fault 0x{fault['code']:04X} logged at "
                              f"{fault['mileage_km']} km, beyond the odometer "
                              f"reading of {e['mileage_km']} km",
                })
    return findings


# -- state fingerprint -------------------------------------------------

def _state_document(vehicle: Vehicle) -> dict:
    state = vehicle.state
    info = vehicle.infotainment
    fob = vehicle.fob
    doc = {
        "vehicle": {
            "vin": state.vin,
            "mileage_km": state.mileage_km,
            "speed_mph": state.speed_mph,
            "battery_volts": state.battery_volts,
            "locked": state.locked,
            "adaptations": dict(sorted(state.adaptations.items())),
            "faults": [_fault_dict(f) for f in state.faults],
            "crash": _crash_dict(state.crash_data),
            "engine_map": {
                "rpm_axis": list(state.engine_map.rpm_axis),
                "load_axis": list(state.engine_map.load_axis),
                "cells": [list(row) for row in state.engine_map.cells],
            },
        },
        "infotainment": {
            "open_ports": sorted(info.open_ports),
            "paired_devices": [list(d) for d in info.paired_devices],
            "contacts": [c.serialize() for c in info.contacts],
            "call_log": [[r.number, r.kind, r.timestamp] for r in info.call_log],
            "gps_track": [list(p) for p in info.gps_track],
            "current_track": info.current_track,
            "mileage_km": info.mileage_km,
            "current_speed": info.current_speed,
            "thumbnails": info.thumbnails,
            "voice_data_present": info.voice_data_present,
            "developer_mode": info.developer_mode,
            "engineering_menu_accessible": info.engineering_menu_accessible,
            "debug_destination": info.debug_destination.value,
            "telemetry": [line.render() for line in info.telemetry],
            "usb_log": list(info.usb_log),
        },
        "keyfob": None if fob is None else {
            "key_id": fob.key_id,
            "counter": fob.counter,
            "vin": fob.vin,
            "transponder_id": fob.transponder_id,
            "key_count": fob.key_count,
            "last_mileage_km": fob.last_mileage_km,
            "fuel_status": fob.fuel_status,
        },
        "car_receiver": {
            "key_id": vehicle.car.key_id,
            "last_accepted": vehicle.car.last_accepted,
            "window": vehicle.car.window,
            "locked": vehicle.car.locked,
        },
    }
    return doc


def state_fingerprint(vehicle: Vehicle) -> str:
    """SHA-256 over the persistent, owner-visible state of the vehicle.

    Transport bookkeeping and the bus trace are deliberately out of scope:
    reading the car out is expected to exchange frames, and a read-only
    extraction must fingerprint identically before and after.
    """
    doc = _state_document(vehicle)
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
