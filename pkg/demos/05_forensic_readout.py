#!/usr/bin/env python3
#
# Forensic readout walkthrough.
#
# Plays an investigator with bench access to a parked vehicle: pull the
# engine controller records over the diagnostic bus, image the head unit
# stores, read what the fob cached at the last ignition-off, and render
# the whole thing as one report.
#
# Two properties matter in court and both are shown below:
#   1. extraction does not write anything (state fingerprint unchanged)
#   2. the same vehicle always yields byte-identical reports
#
# The second half builds a tampered twin of the vehicle (reflashed fob
# VIN, clocked odometer, fault record from beyond the displayed mileage)
# and lets the cross-examination pass surface each lie.

from vehsim.forensics import (
    cross_examine,
    extract_all,
    render_report,
    state_fingerprint,
)
from vehsim.scenario import build_vehicle, ignition_off, inject_fault

# --- clean readout ----------------------------------------------------

vehicle = build_vehicle()
ignition_off(vehicle)   # fob caches mileage + VIN, like a real parking event

before = state_fingerprint(vehicle)
report = extract_all(vehicle)
after = state_fingerprint(vehicle)

print("fingerprint before extraction:", before)
print("fingerprint after extraction: ", after)
print("read-only:", "yes" if before == after else "NO (bug)")
print()

text = render_report(report)
print(text)

again = render_report(extract_all(vehicle))
print("second extraction byte-identical:", text == again)
print()

# --- tampered twin ----------------------------------------------------

twin = build_vehicle()
ignition_off(twin)                    # fob now remembers 11580 km
twin.fob.vin = "WVWZZZ00000000000"    # fob swapped in from another car
twin.state.mileage_km = 11000         # odometer clocked after the fact
inject_fault(twin, 0x1102, mileage_km=12000)   # fault from a mileage the
                                               # odometer says never happened

findings = cross_examine(extract_all(twin))
print(f"cross-examination of the tampered twin: {len(findings)} findings")
for f in findings:
    print(f"  [{f['check']}] {f['detail']}")

print()
print("same pass on the clean vehicle:", cross_examine(report) or "no findings")
