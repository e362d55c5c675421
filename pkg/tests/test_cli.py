import json
import socket
import subprocess
import sys
import threading

import pytest

from vehsim.cli import build_parser, main


def run_cli(*argv, capsys=None):
    return main(list(argv))


# -- parsing -----------------------------------------------------------

def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["run", "no-such-scenario"])
    assert err.value.code == 2


def test_parser_knows_all_scenarios():
    parser = build_parser()
    for name in ("rolljam", "harvest", "obd-tamper", "remap", "forensic",
                 "full-sweep"):
        args = parser.parse_args(["run", name])
        assert args.scenario == name
        assert args.out == "out"


# -- attack-surface ----------------------------------------------------

def test_attack_surface_prints_the_walk(capsys):
    assert main(["attack-surface"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("attack surface enumeration")
    assert "434.420 MHz" in out


def test_attack_surface_honours_set_overrides(capsys):
    assert main(["attack-surface", "--set",
                 "vehicle.vin=TESTVIN0000000001"]) == 0
    assert "TESTVIN0000000001" in capsys.readouterr().out


# -- config errors -----------------------------------------------------

def test_bad_override_value_exits_two(capsys):
    assert main(["run", "rolljam", "--set", "keyfob.window=0"]) == 2
    assert "keyfob.window" in capsys.readouterr().err


def test_missing_config_file_exits_two(tmp_path, capsys):
    assert main(["run", "harvest", "--config",
                 str(tmp_path / "absent.json")]) == 2


# -- scenario runs -----------------------------------------------------

def test_run_rolljam_artifacts(tmp_path, capsys):
    out = tmp_path / "rj"
    assert main(["run", "rolljam", "--out", str(out)]) == 0
    assert "rolljam: ok" in capsys.readouterr().out
    names = sorted(p.name for p in out.iterdir())
    assert names == ["captured.iq", "captured.iq.hdr", "filtered.iq",
                     "filtered.iq.hdr", "fob.iq", "fob.iq.hdr", "jam.iq",
                     "jam.iq.hdr", "report.txt", "trace.log"]
    report = json.loads((out / "report.txt").read_text())
    assert report["scenario"] == "rolljam"
    assert report["ok"] is True
    assert report["report"]["replayed_counter"] == 1


def test_run_rolljam_without_a_fob_fails_cleanly(tmp_path, capsys):
    out = tmp_path / "rj"
    code = main(["run", "rolljam", "--set", "keyfob.present=false",
                 "--out", str(out)])
    assert code == 1
    report = json.loads((out / "report.txt").read_text())
    assert report["ok"] is False
    assert report["report"]["reason"] == "CaptureUnusable"


def test_run_rolljam_with_a_dead_jammer_reports_stale_code(tmp_path, capsys):
    out = tmp_path / "rj"
    code = main(["run", "rolljam", "--set", "rf.jam_power=0",
                 "--out", str(out)])
    assert code == 1
    report = json.loads((out / "report.txt").read_text())
    assert report["report"]["reason"] == "StaleCode"


def test_run_harvest(tmp_path, capsys):
    out = tmp_path / "hv"
    assert main(["run", "harvest", "--out", str(out)]) == 0
    report = json.loads((out / "report.txt").read_text())
    assert report["ok"] is True
    assert report["report"]["open_ports"] == [15361, 25010, 49101]
    assert report["report"]["mileage_km"] == 11580
    # The captured stream itself is an artifact.
    log = (out / "telemetry.log").read_text()
    assert log.count("\n") == 6


def test_run_obd_tamper(tmp_path, capsys):
    out = tmp_path / "ot"
    assert main(["run", "obd-tamper", "--out", str(out)]) == 0
    report = json.loads((out / "report.txt").read_text())
    body = report["report"]
    assert body["start_stop_before"] is True
    assert body["start_stop_during"] is False
    assert body["start_stop_after"] is True
    assert body["fault_count_delta"] == 0
    assert body["raw_probe_replies"] == ["037f1033"]


def test_run_remap(tmp_path, capsys):
    out = tmp_path / "rm"
    assert main(["run", "remap", "--out", str(out)]) == 0
    report = json.loads((out / "report.txt").read_text())
    body = report["report"]
    assert body["factor"] == 1.1
    assert body["cells_changed"] == 36   # 12 loads in 1900..4500, three rows
    assert body["image_bytes"] == 137


def test_run_forensic(tmp_path, capsys):
    out = tmp_path / "fo"
    assert main(["run", "forensic", "--out", str(out)]) == 0
    report = json.loads((out / "report.txt").read_text())
    body = report["report"]
    assert body["read_only"] is True
    assert body["findings"] == []
    assert body["sections_present"] == ["ecu", "gps", "infotainment", "keyfob"]
    assert (out / "forensic.txt").exists()


def test_run_full_sweep_layout(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["run", "full-sweep", "--seed", "42", "--out", str(out)]) == 0
    summary = json.loads((out / "report.txt").read_text())
    assert summary["ok"] is True
    assert summary["results"] == {"rolljam": True, "harvest": True,
                                  "obd-tamper": True, "remap": True,
                                  "forensic": True}
    for sub in summary["results"]:
        assert (out / sub / "report.txt").exists()
        assert (out / sub / "trace.log").exists()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vehsim", "attack-surface"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert "attack surface enumeration" in proc.stdout


# -- serve -------------------------------------------------------------

def test_serve_binds_ephemeral_loopback_sockets(capsys):
    result = {}

    def target():
        result["code"] = main(["serve", "--ephemeral", "--duration", "1.2"])

    thread = threading.Thread(target=target)
    thread.start()
    try:
        # Wait for the banner, then poke the web service while it is up.
        import time
        bound = {}
        for _ in range(40):
            time.sleep(0.05)
            text = capsys.readouterr().out
            for line in text.splitlines():
                if line.startswith("service "):
                    parts = line.split()
                    bound[int(parts[1])] = int(parts[3].rsplit(":", 1)[1])
            if len(bound) == 3:
                break
        assert set(bound) == {15361, 25010, 49101}
        with socket.create_connection(("127.0.0.1", bound[49101]),
                                      timeout=2) as sock:
            sock.sendall(b"GET /rc/info HTTP/1.0\r\n\r\n")
            sock.shutdown(socket.SHUT_WR)
            reply = b""
            while True:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                reply += chunk
        assert b"Mileage = 11580 km" in reply
    finally:
        thread.join(timeout=5)
    assert result["code"] == 0
