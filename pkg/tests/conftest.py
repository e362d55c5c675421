import re

import pytest

from vehsim.scenario import build_vehicle

# A captured port-15361 stream from a real head unit, hard wraps removed.
# Numbers and names arrive pre-redacted; timestamps are not equally spaced.
CAPTURED_TELEMETRY = (
    "16:05:02.301 [Info][iMX6.WLAdapter.tsd.wladap] Adapte.   "
    "BT_APPL_PIM_DATA_IND: parse_status=0 (success), object_done=1, "
    "data(117)=BEGIN:VCARD..VERSION:3.0 ..FN:T*m A**m..N:A**m;T*m.."
    "TEL;TYPE=CELL:07765*****7..TEL;TYPE=HOME:01**4 8****5..END:VCARD\n"
    "16:05:05.440 [Info][iMX6.Navi.tsd.mibstd2.psd.v15.shortrange.LinkTree]"
    "         VehPos offroad 56.2****4 -3.72****8, 0 cm/s, conf: 1000\n"
    "16:05:11.579 [Info][iMX6.onlineVHR.OSVHR] [PID=532558 TID= 5] [OSVHR]"
    "   CarcomBapKm received from CarCom with current Mileage=11580\n"
    "16:07:29.817 [Info] [iMX6.WLAdapter.tsd.wladap]  Adapte. "
    "BT_APPL_PIM_DATA_IND: parse_status=0 (success), object_done=1, "
    "data(144)=BEGIN:VCARD..VERSION:3.0..FN:St***rt W**te..N:W**te;St***rt.."
    "TEL;TYPE=CELL:0774*****71..X-IRMC-CALL-DATETIME;MISSED:20171106T130835"
    "..END:VCARD\n"
    "16:07:48.191 [Info][iMX6.ASR.asr.engine]  "
    "ContextManager:embedGuestContext() Phone.Speech.ContactNames\n"
    "16:18:56.099[Info][J5e.Radio.System]  Car speed = 0\n"
)


@pytest.fixture
def vehicle():
    return build_vehicle()


# One verdict line per acceptance criterion, printed after the run so the
# lines survive output capture regardless of pytest flags.

_criterion_verdicts: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)",
                  report.nodeid)
    if m is None:
        return
    number, slug = int(m.group(1)), m.group(2).replace("_", " ")
    if report.when == "call" or report.failed:
        passed = _criterion_verdicts.get(number, (slug, True))[1]
        _criterion_verdicts[number] = (slug, passed and report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_verdicts):
        slug, passed = _criterion_verdicts[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"[{verdict}] criterion {number}: {slug}")
