#!/usr/bin/env python3
# Fuel map remap over the diagnostic bus.

from vehsim.attacks import read_map_image, remap
from vehsim.ecu import decode_map_image, STOCK_LOAD_AXIS, STOCK_RPM_AXIS
from vehsim.scenario import build_vehicle

# tuning parameters
FACTOR = 1.1
RPM_RANGE = (500, 1000)
LOAD_RANGE = (1900, 4500)


def show(m, title):
    print(title)
    header = "rpm\\load " + " ".join(f"{l:>5d}" for l in m.load_axis[:8])
    print(header, "...")
    for i, rpm in enumerate(m.rpm_axis):
        row = " ".join(f"{m.cell_mg(i, j):5.2f}" for j in range(8))
        print(f"{rpm:>8d} {row} ...")
    print()


vehicle = build_vehicle()
ch = vehicle.engine_channel()

image = read_map_image(vehicle.obd, ch)
print(f"pulled {len(image)} byte image over the memory-read service")
before = decode_map_image(image, list(STOCK_RPM_AXIS), list(STOCK_LOAD_AXIS))
show(before, "stock map (mg per stroke, first 8 load columns):")

receipt = remap(vehicle.obd, ch, RPM_RANGE, LOAD_RANGE, FACTOR)
print(f"scaled {receipt['cells_changed']} cells by {FACTOR} in "
      f"rpm {RPM_RANGE} load {LOAD_RANGE}, re-checksummed, wrote back, "
      f"read back identical")
print()
show(vehicle.state.engine_map, "installed map:")

print("changed cells:")
for entry in receipt["diff"][:6]:
    print(f"  rpm {entry['rpm']:>4d} load {entry['load']:>4d}: "
          f"{entry['before_mg']:.2f} -> {entry['after_mg']:.2f}")
print(f"  ... {len(receipt['diff']) - 6} more")
