"""Command line front door.

Three subcommands: attack-surface walks the enumeration methodology over a
config and prints the findings; run executes one named scenario end to end
and drops its artifacts in an output directory; serve exposes the simulated
infotainment services on real loopback sockets.

Exit codes: 0 on success, 1 when a scenario runs but its postconditions do
not hold, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path

from . import attacks, forensics, rfphy, scenario
from .attacks import AttackFailed, RollJamSession
from .canbus import CanFrame
from .ecu import RAW_DIAG_REQUEST_ID, RAW_DIAG_RESPONSE_ID
from .infotainment import PORT_TELEMETRY, InfotainmentTcpAdapter, serve_connection
from .keyfob import FobCommand
from .scenario import ConfigError, Vehicle, build_vehicle

logger = logging.getLogger(__name__)

SCENARIOS = ("rolljam", "harvest", "obd-tamper", "remap", "forensic",
             "full-sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vehsim",
        description="virtual vehicle security testbed")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    surface = sub.add_parser(
        "attack-surface",
        help="enumerate the attack surface of a configured vehicle")
    _add_config_args(surface)

    run = sub.add_parser("run", help="run one scenario end to end")
    run.add_argument("scenario", choices=SCENARIOS)
    _add_config_args(run)
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--out", default="out", metavar="DIR",
                     help="artifact directory (default: ./out)")

    serve = sub.add_parser(
        "serve", help="expose the infotainment services on loopback sockets")
    _add_config_args(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--ephemeral", action="store_true",
                       help="bind OS-assigned ports instead of the real ones")
    serve.add_argument("--duration", type=float, default=None, metavar="SECONDS",
                       help="stop after this long (default: run until ^C)")
    return parser


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="scenario config (JSON), merged over defaults")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="PATH=VALUE",
                        help="override one config key by dotted path")


def _load_config(args: argparse.Namespace) -> dict:
    config = scenario.load_config(args.config)
    config = scenario.apply_overrides(config, args.overrides)
    scenario.validate_config(config)
    return config


# -- scenario runners --------------------------------------------------
# Each returns (postconditions hold, report payload) and leaves its
# artifacts under out_dir.

def _run_rolljam(vehicle: Vehicle, out_dir: Path) -> tuple[bool, dict]:
    if vehicle.fob is None:
        raise AttackFailed("CaptureUnusable", "scenario has no fob to victimize")
    session = RollJamSession(jammer=vehicle.jammer)
    result = attacks.roll_jam(vehicle.car, vehicle.fob, session,
                              command=FobCommand.UNLOCK)
    vehicle.state.locked = vehicle.car.locked
    for name, sig in result.signals.items():
        rfphy.write_iq(sig, out_dir / f"{name}.iq")
    proof = result.proof
    ok = (proof["phase"] == "replayed"
          and proof["jammed_press_status"] != "accepted"
          and proof["replayed_counter"] == proof["victim_counter"]
          and vehicle.car.last_accepted == proof["replayed_counter"]
          and vehicle.car.locked is False)
    payload = dict(proof)
    payload["artifacts"] = sorted(p.name for p in out_dir.iterdir())
    return ok, payload


def _run_harvest(vehicle: Vehicle, out_dir: Path) -> tuple[bool, dict]:
    info = vehicle.infotainment
    open_ports = attacks.port_scan(info)
    stream = serve_connection(info, PORT_TELEMETRY, b"")
    (out_dir / "telemetry.log").write_bytes(stream)
    report = attacks.harvest_telemetry(stream)

    masked_ok = all("*" in number or not number
                    for card in report.contacts for _, number in card.tels)
    ok = (open_ports == set(info.open_ports)
          and report.mileage_km == info.mileage_km
          and len(report.contacts) >= 1
          and len(report.positions) >= 1
          and masked_ok)
    payload = {
        "open_ports": sorted(open_ports),
        "line_count": report.line_count,
        "mileage_km": report.mileage_km,
        "speeds": report.speeds,
        "positions": [list(p) for p in report.positions],
        "contacts": [
            {"full_name": c.full_name, "tels": [list(t) for t in c.tels]}
            for c in report.contacts
        ],
    }
    return ok, payload


def _run_obd_tamper(vehicle: Vehicle, out_dir: Path) -> tuple[bool, dict]:
    ch = vehicle.engine_channel()
    state = vehicle.state
    before = state.start_stop_enabled
    faults_before = len(state.faults)

    attacks.disable_start_stop(vehicle.obd, ch)
    disabled = not state.start_stop_enabled
    silent = len(state.faults) == faults_before

    attacks.restore_start_stop(vehicle.obd, ch)
    restored = state.start_stop_enabled

    # A classic broadcast probe for contrast: the gateway answers every raw
    # request with a refusal, whatever the service.
    probe = CanFrame(RAW_DIAG_REQUEST_ID, bytes([0x02, 0x10, 0x01]))
    vehicle.bus.send_frame(vehicle.obd, probe)
    vehicle.bus.run_pending()
    raw_replies = [f.payload.hex() for f in vehicle.bus.trace
                   if f.can_id == RAW_DIAG_RESPONSE_ID]

    ok = before and disabled and silent and restored and bool(raw_replies)
    payload = {
        "start_stop_before": before,
        "start_stop_during": not disabled,
        "start_stop_after": restored,
        "fault_count_delta": len(state.faults) - faults_before,
        "raw_probe_replies": raw_replies,
    }
    return ok, payload


def _run_remap(vehicle: Vehicle, out_dir: Path) -> tuple[bool, dict]:
    params = vehicle.config.get("remap", {})
    factor = float(params.get("factor", 1.1))
    rpm_range = tuple(params.get("rpm_range", [500, 1000]))
    load_range = tuple(params.get("load_range", [1900, 4500]))
    ch = vehicle.engine_channel()

    original = copy.deepcopy(vehicle.state.engine_map)
    result = attacks.remap(vehicle.obd, ch, rpm_range, load_range, factor,
                           rpm_axis=original.rpm_axis,
                           load_axis=original.load_axis)

    from .ecu import encode_map_image, scale_map_region
    expected = scale_map_region(original, rpm_range, load_range, factor)
    installed = vehicle.state.engine_map
    ok = (result["cells_changed"] > 0
          and encode_map_image(installed) == encode_map_image(expected))
    payload = dict(result)
    return ok, payload


def _run_forensic(vehicle: Vehicle, out_dir: Path) -> tuple[bool, dict]:
    before = forensics.state_fingerprint(vehicle)
    report = forensics.extract_all(vehicle)
    after = forensics.state_fingerprint(vehicle)
    findings = forensics.cross_examine(report)
    (out_dir / "forensic.txt").write_text(forensics.render_report(report))

    ok = (before == after
          and report.ecu is not None
          and report.ecu.get("vin") == vehicle.state.vin)
    payload = {
        "fingerprint_before": before,
        "fingerprint_after": after,
        "read_only": before == after,
        "findings": findings,
        "sections_present": sorted(
            name for name, section in report.to_document().items()
            if section != forensics.ABSENT),
    }
    return ok, payload


_RUNNERS = {
    "rolljam": _run_rolljam,
    "harvest": _run_harvest,
    "obd-tamper": _run_obd_tamper,
    "remap": _run_remap,
    "forensic": _run_forensic,
}


def _finish(vehicle: Vehicle, out_dir: Path, name: str, ok: bool,
            payload: dict) -> None:
    with open(out_dir / "trace.log", "w") as sink:
        vehicle.bus.write_trace(sink)
    document = {"scenario": name, "ok": ok, "report": payload}
    (out_dir / "report.txt").write_text(
        json.dumps(document, sort_keys=True, indent=2) + "\n")


def run_scenario(name: str, config: dict, seed: int | None,
                 out_dir: Path) -> bool:
    """Build a fresh vehicle, run one scenario, write its artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    vehicle = build_vehicle(copy.deepcopy(config), seed)
    try:
        ok, payload = _RUNNERS[name](vehicle, out_dir)
    except AttackFailed as exc:
        ok, payload = False, {"error": str(exc), "reason": exc.reason}
    _finish(vehicle, out_dir, name, ok, payload)
    return ok


def run_full_sweep(config: dict, seed: int | None, out_dir: Path) -> bool:
    out_dir.mkdir(parents=True, exist_ok=True)
    results: dict[str, bool] = {}
    for name in ("rolljam", "harvest", "obd-tamper", "remap", "forensic"):
        results[name] = run_scenario(name, config, seed, out_dir / name)
    (out_dir / "report.txt").write_text(
        json.dumps({"scenario": "full-sweep", "ok": all(results.values()),
                    "results": results}, sort_keys=True, indent=2) + "\n")
    return all(results.values())


# -- subcommand handlers -----------------------------------------------

def _cmd_attack_surface(args: argparse.Namespace) -> int:
    config = _load_config(args)
    sys.stdout.write(scenario.attack_surface(config))
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    if args.scenario == "full-sweep":
        ok = run_full_sweep(config, args.seed, out_dir)
    else:
        ok = run_scenario(args.scenario, config, args.seed, out_dir)
    print(f"{args.scenario}: {'ok' if ok else 'FAILED'} "
          f"(artifacts in {out_dir})")
    return 0 if ok else 1


def _cmd_serve(args: argparse.Namespace) -> int:
    config = _load_config(args)
    vehicle = build_vehicle(config)
    port_map = None
    if args.ephemeral:
        port_map = {p: 0 for p in sorted(vehicle.infotainment.open_ports)}
    adapter = InfotainmentTcpAdapter(vehicle.infotainment, host=args.host,
                                     port_map=port_map)
    bound = adapter.start()
    for service_port, bind_port in sorted(bound.items()):
        print(f"service {service_port} on {args.host}:{bind_port}")
    sys.stdout.flush()
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        adapter.stop()
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "attack-surface":
            return _cmd_attack_surface(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_serve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
