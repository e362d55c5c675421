#!/usr/bin/env python3
# Drive the diagnostic stack by hand: raw frames first, then a proper
# channel through the gateway. Prints every step, ends with the bus trace.

from vehsim.canbus import CallbackNode, CanFrame
from vehsim.scenario import (
    build_vehicle,
    diag_read_mileage_km,
    diag_read_speed_mph,
    diag_read_vin,
)

vehicle = build_vehicle()
bus = vehicle.bus

# --- step 1: the classic broadcast probe -------------------------------
# Everyone tries 0x7DF first. The gateway answers, but only to refuse.

probe = bus.attach(CallbackNode("handheld-scantool"))
bus.send_frame(probe, CanFrame(0x7DF, bytes([0x02, 0x10, 0x01])))
bus.run_pending()

for frame in probe.received:
    print(f"raw reply on 0x{frame.can_id:03X}: {frame.payload.hex()}")
print("the 7F .. 33 pattern is a refusal. broadcast diagnostics go nowhere.")
print()

# --- step 2: a real channel --------------------------------------------
# The gateway speaks a channel-oriented transport. Set one up to the
# engine controller and the same services start answering.

ch = vehicle.engine_channel()
print(f"channel open: we transmit on 0x{ch.local_id:03X}, "
      f"the module answers on 0x{ch.remote_id:03X}")

print("vin     :", diag_read_vin(vehicle.obd, ch))
print("mileage :", diag_read_mileage_km(vehicle.obd, ch), "km")
print("speed   :", diag_read_speed_mph(vehicle.obd, ch), "mph")
print()

# --- step 3: what actually crossed the wire ----------------------------

print(f"{len(bus.trace)} frames on the bus. last ten:")
import io
sink = io.StringIO()
bus.write_trace(sink)
for line in sink.getvalue().splitlines()[-10:]:
    print(" ", line)
