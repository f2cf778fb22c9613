#!/usr/bin/env python3
"""Regenerates the bundled approximate spectra and basis-material tables.

The spectra are Kramers-law tungsten bremsstrahlung with W K-lines, hardened
by 1 mm of copper, sampled at 1 keV. The attenuation tables are log-log
interpolations of tabulated NIST mass attenuation coefficients for water and
ICRU-44 cortical bone. These are approximations, not measured tube output.
"""
import math
from pathlib import Path

# energy [keV] -> mu/rho [cm^2/g]
WATER = [(10, 5.329), (15, 1.673), (20, 0.8096), (30, 0.3756), (40, 0.2683),
         (50, 0.2269), (60, 0.2059), (80, 0.1837), (100, 0.1707), (150, 0.1505)]
BONE = [(10, 28.51), (15, 9.032), (20, 4.001), (30, 1.331), (40, 0.6655),
        (50, 0.4242), (60, 0.3148), (80, 0.2229), (100, 0.1855), (150, 0.1480)]
COPPER = [(10, 215.9), (15, 74.05), (20, 33.79), (30, 10.92), (40, 4.862),
          (50, 2.613), (60, 1.593), (80, 0.7630), (100, 0.4584), (150, 0.2217)]
COPPER_DENSITY = 8.96  # g/cm^3
FILTER_CM = 0.1

# W characteristic lines: (energy keV, relative strength per unit bremsstrahlung at line)
W_LINES = [(58, 0.6), (59, 1.0), (67, 0.35), (69, 0.08)]
W_K_EDGE = 69.5


def loglog(table, e):
    for (e0, m0), (e1, m1) in zip(table, table[1:]):
        if e0 <= e <= e1:
            t = (math.log(e) - math.log(e0)) / (math.log(e1) - math.log(e0))
            return math.exp(math.log(m0) + t * (math.log(m1) - math.log(m0)))
    raise ValueError(e)


def spectrum(kvp):
    rows = []
    for e in range(10, kvp + 1):
        w = max(kvp - e, 0) / e
        if kvp > W_K_EDGE:
            for line_e, strength in W_LINES:
                if e == line_e:
                    w += strength * 0.02 * (kvp - W_K_EDGE) ** 1.6 / e
        w *= math.exp(-loglog(COPPER, e) * COPPER_DENSITY * FILTER_CM)
        rows.append([e, w])
    peak = max(w for _, w in rows)
    return [(e, w / peak if w / peak > 1e-12 else 0.0) for e, w in rows]


def main():
    out = Path(__file__).resolve().parent
    for kvp, name in ((80, "spectrum_80kv_1mmcu.csv"), (140, "spectrum_140kv_1mmcu.csv")):
        with open(out / name, "w", newline="\n") as fh:
            fh.write("energy_kev,weight\n")
            for e, w in spectrum(kvp):
                fh.write(f"{e},{w:.12g}\n")
    with open(out / "materials_bone_water.csv", "w", newline="\n") as fh:
        fh.write("energy_kev,phi,theta\n")
        for e in range(10, 151):
            fh.write(f"{e},{loglog(BONE, e):.10g},{loglog(WATER, e):.10g}\n")


if __name__ == "__main__":
    main()
