#!/usr/bin/env python3
"""The rolljam sequence, narrated.

The receiver only takes counters ahead of the last accepted one, so a
plain replay is dead on arrival. The trick is to make sure the car never
consumes the code you record: jam the band while the victim presses,
recover their packet from your own capture with a narrow filter, then
send it yourself once the jammer is off.

Writes the four baseband captures (fob, jam, superposition, filtered)
as .iq files under demo_out/ so an SDR viewer can look at them.
"""

from pathlib import Path

from vehsim.attacks import RollJamSession, roll_jam
from vehsim.rfphy import write_iq
from vehsim.scenario import build_vehicle

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)

vehicle = build_vehicle()
car, fob = vehicle.car, vehicle.fob

print(f"car locked: {car.locked}, last accepted counter: {car.last_accepted}")
print(f"victim fob counter: {fob.counter}")
print()

print("jammer on. victim presses unlock...")
session = RollJamSession(jammer=vehicle.jammer)
result = roll_jam(car, fob, session)
proof = result.proof

print(f"  press used counter {proof['victim_counter']}")
print(f"  car saw: {proof['jammed_press_status']} "
      f"({proof['jammed_press_reason']})")
print(f"  our narrowband recovery: counter {proof['captured_counter']}, "
      f"demod quality {proof['capture_quality']:.3f}")
print()
print("jammer off. replaying the recorded packet...")
print(f"  car accepted counter {proof['car_last_accepted']}")
print(f"  car locked now: {proof['car_locked']}")
print()

for name, sig in result.signals.items():
    path = write_iq(sig, OUT / f"{name}.iq")
    print(f"wrote {path} ({len(sig)} samples)")

print()
print("note the victim is none the wiser. their press seemed to do")
print("nothing, and the next press will work normally.")
