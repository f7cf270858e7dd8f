"""Regenerate the shipped IEEE-37 feeder and measurement documents.

Line data are the published underground-cable configurations 721-724
(ohm/mile series impedance, uS/mile shunt susceptance) and segment lengths
of the IEEE 37-node test feeder. The 799-701 regulator and the 709-775
transformer are dropped; bus 701 is the substation. Quantities are
normalised to V_base = 4.8 kV / sqrt(3) line-to-neutral and S_base = 10 kVA
per phase (Z_base = 768 ohm). The small power base keeps the WLS problem
well conditioned for the fixed per-unit noise levels of the measurement set.

Run from the repository root:

    python scripts/make_ieee37_fixture.py
"""
import json
import math
from pathlib import Path

import numpy as np

V_BASE = 4800.0 / math.sqrt(3.0)
S_BASE = 10e3
Z_BASE = V_BASE**2 / S_BASE
FT_PER_MILE = 5280.0


def _sym(d0, d1, off01, off02, off12):
    return np.array([[d0, off01, off02], [off01, d1, off12], [off02, off12, d0]])


CONFIGS = {
    "721": (_sym(0.2926 + 0.1973j, 0.2646 + 0.1900j, 0.0673 - 0.0368j, 0.0337 - 0.0417j, 0.0673 - 0.0368j), 159.7919),
    "722": (_sym(0.4751 + 0.2973j, 0.4488 + 0.2678j, 0.1629 - 0.0326j, 0.1234 - 0.0607j, 0.1629 - 0.0326j), 127.8306),
    "723": (_sym(1.2936 + 0.6713j, 1.3022 + 0.6326j, 0.4871 + 0.2111j, 0.4585 + 0.1521j, 0.4871 + 0.2111j), 74.8405),
    "724": (_sym(2.0952 + 0.7758j, 2.1068 + 0.7398j, 0.5204 + 0.2738j, 0.4926 + 0.2123j, 0.5204 + 0.2738j), 60.2483),
}

SEGMENTS = [
    ("701", "702", 960, "722"), ("702", "705", 400, "724"), ("702", "713", 360, "723"),
    ("702", "703", 1320, "722"), ("703", "727", 240, "724"), ("703", "730", 600, "723"),
    ("704", "714", 80, "724"), ("704", "720", 800, "723"), ("705", "742", 320, "724"),
    ("705", "712", 240, "724"), ("706", "725", 280, "724"), ("707", "724", 760, "724"),
    ("707", "722", 120, "724"), ("708", "733", 320, "723"), ("708", "732", 320, "724"),
    ("709", "731", 600, "723"), ("709", "708", 320, "723"), ("710", "735", 200, "724"),
    ("710", "736", 1280, "724"), ("711", "741", 400, "723"), ("711", "740", 200, "724"),
    ("713", "704", 520, "723"), ("714", "718", 520, "724"), ("720", "707", 920, "724"),
    ("720", "706", 600, "723"), ("727", "744", 280, "723"), ("730", "709", 200, "723"),
    ("733", "734", 560, "723"), ("734", "737", 640, "723"), ("734", "710", 520, "724"),
    ("737", "738", 400, "723"), ("738", "711", 400, "723"), ("744", "728", 200, "724"),
    ("744", "729", 280, "724"),
]
# normally-open tie lines used by the reconfiguration scenarios
TIES = [("742", "744", 400, "723"), ("735", "737", 400, "723"), ("703", "741", 600, "723")]
SWITCHED = {("710", "735"), ("703", "730"), ("727", "744")}

# spot loads in kW/kvar on (a-b, b-c, c-a); the substation load at 701 is not modelled
LOADS = {
    "712": [None, None, (85, 40)], "713": [None, None, (85, 40)],
    "714": [(17, 8), (21, 10), None], "718": [(85, 40), None, None],
    "720": [None, None, (85, 40)], "722": [None, (140, 70), (21, 10)],
    "724": [None, (42, 21), None], "725": [None, (42, 21), None],
    "727": [None, None, (42, 21)], "728": [(42, 21), (42, 21), (42, 21)],
    "729": [(42, 21), None, None], "730": [None, None, (85, 40)],
    "731": [None, (85, 40), None], "732": [None, None, (42, 21)],
    "733": [(85, 40), None, None], "734": [None, None, (42, 21)],
    "735": [None, None, (85, 40)], "736": [None, (42, 21), None],
    "737": [(140, 70), None, None], "738": [(126, 62), None, None],
    "740": [None, None, (85, 40)], "741": [None, None, (42, 21)],
    "742": [(8, 4), (85, 40), None], "744": [(42, 21), None, None],
}
DER_KW = 100.0
DERS = {
    "705": ["ab", "bc"], "706": ["bc"], "707": ["bc", "ca"],
    "708": ["bc"], "710": ["ab"], "711": ["ca"],
}
PAIRS = [["a", "b"], ["b", "c"], ["c", "a"]]
PAIR_NAMES = {"ab": ["a", "b"], "bc": ["b", "c"], "ca": ["c", "a"]}

BUSES = [
    "701", "702", "703", "704", "705", "706", "707", "708", "709", "710", "711",
    "712", "713", "714", "718", "720", "722", "724", "725", "727", "728", "729",
    "730", "731", "732", "733", "734", "735", "736", "737", "738", "740", "741",
    "742", "744",
]


def branch_doc(frm, to, length_ft, cfg, switchable=False, closed=True):
    z_mile, b_us = CONFIGS[cfg]
    miles = length_ft / FT_PER_MILE
    z = z_mile * miles / Z_BASE
    ysh = 1j * b_us * 1e-6 * miles * Z_BASE * np.eye(3)
    return {
        "id": f"{frm}-{to}", "from": frm, "to": to, "phases": ["a", "b", "c"],
        "Z_real": z.real.round(12).tolist(), "Z_imag": z.imag.round(12).tolist(),
        "Ysh_real": ysh.real.round(12).tolist(), "Ysh_imag": ysh.imag.round(12).tolist(),
        "switchable": switchable, "closed": closed,
    }


def feeder_doc():
    branches = [branch_doc(f, t, ln, c, switchable=(f, t) in SWITCHED) for f, t, ln, c in SEGMENTS]
    branches += [branch_doc(f, t, ln, c, switchable=True, closed=False) for f, t, ln, c in TIES]
    injections = []
    for bus, conns in DERS.items():
        injections.append({
            "id": f"G{bus}", "bus": bus, "kind": "der", "connection": "delta",
            "terminals": [PAIR_NAMES[p] for p in conns],
            "rating": [DER_KW * len(conns) * 1e3 / S_BASE, 0.0],
            "split": [1.0 / len(conns)] * len(conns),
        })
    for bus, per_pair in LOADS.items():
        terms = [(PAIRS[k], pq) for k, pq in enumerate(per_pair) if pq is not None]
        p_tot = sum(pq[0] for _, pq in terms)
        q_tot = sum(pq[1] for _, pq in terms)
        injections.append({
            "id": f"L{bus}", "bus": bus, "kind": "load", "connection": "delta",
            "terminals": [t for t, _ in terms],
            "rating": [p_tot * 1e3 / S_BASE, q_tot * 1e3 / S_BASE],
            "split": [round(pq[0] / p_tot, 12) for _, pq in terms],
        })
    return {
        "schema": "feeder/1",
        "name": "ieee37",
        "base": {"v_ln_volts": V_BASE, "s_phase_va": S_BASE, "z_ohm": Z_BASE},
        "buses": [{"id": b, "phases": ["a", "b", "c"]} for b in BUSES],
        "branches": branches,
        "injections": injections,
        "switch_scenarios": {
            "A": {"727-744": False, "742-744": True},
            "B": {"703-730": False, "703-741": True},
            "C": {"710-735": False, "735-737": True},
        },
    }


def measurement_doc():
    # pseudo-measurements on 23 load buses (734 carries a PMU instead) plus the 6 DER buses
    pseudo = sorted(DERS) + [b for b in LOADS if b != "734"]
    return {
        "schema": "measurements/1",
        "feeder": "ieee37",
        "pmu_buses": ["701", "704", "709", "734"],
        # greedy choice maximising the smallest weighted singular value of the
        # constrained noiseless Jacobian at nominal load
        "current_mag_branches": ["701-702", "702-705", "703-727", "704-720", "705-742", "707-722", "709-708"],
        "pseudo_buses": pseudo,
        "sigma": {"pmu": 1e-3, "current_mag": 1e-2, "pseudo": 1e-1},
    }


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "warmdsse" / "data"
    (out / "ieee37.json").write_text(json.dumps(feeder_doc(), indent=1) + "\n")
    (out / "ieee37_measurements.json").write_text(json.dumps(measurement_doc(), indent=1) + "\n")
    print("wrote", out)
