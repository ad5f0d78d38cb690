"""Regenerate the bundled 14-bus dataset and the two slope cases.

Values prefixed with ``_`` in the output are comments.  Converter ratings and
per-length cable data are fixed inputs; branch lengths, controller gains and
power set-points are this package's own choices (listed under
``_non_published``).
"""

import json
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "droopstab" / "data"

BRANCHES = [
    (1, 2, 120), (1, 5, 180), (2, 3, 150), (2, 4, 170), (2, 5, 140),
    (3, 4, 160), (4, 5, 110), (4, 7, 130), (4, 9, 190), (5, 6, 150),
    (6, 11, 140), (6, 12, 160), (6, 13, 120), (7, 8, 100), (7, 9, 110),
    (9, 10, 130), (9, 14, 200), (10, 11, 120), (12, 13, 140), (13, 14, 170),
]
DROOP = {1: 20, 2: 20, 3: 35, 6: 45, 8: 12}  # MW/kV, first case
P0_DROOP = -135.0  # MW
P_SET = {4: 120, 5: 80, 7: 60, 9: 150, 10: 50, 11: 40, 12: 40, 13: 70, 14: 60}
KEYS = ("kp_i", "ki_i", "kp_pq", "ki_pq")
GAINS_FILE = Path(__file__).resolve().parent / "gains.json"

CASES = {
    "case1.json": DROOP,
    "case2.json": {1: 25, 2: 25, 3: 30, 6: 40, 8: 15},
}


def q(value, unit):
    return {"value": value, "unit": unit}


def converter(node):
    rect = node in DROOP
    d = {
        "node": str(node),
        "mode": "droop" if rect else "fixed-power",
        "c_sm": q(20 if rect else 25, "mF"),
        "n_sm": 435 if rect else 363,
        "l_arm": q(0.16 if rect else 0.1, "H"),
        "r_arm": q(2.175 if rect else 1.815, "ohm"),
        "l0": q(0.0, "H"),
        "r0": q(1.0, "ohm"),
        "l_s": q(200, "mH"),
        "c_g": q(1, "uF"),
        "v_dc_nom": q(1000, "kV"),
        "pcc_voltage_dq": [q(400, "kV"), q(0, "kV")],
        "omega0": q(50, "Hz"),
        "p_set": q(P0_DROOP if rect else P_SET[node], "MW"),
        "q_set": q(0, "Mvar"),
    }
    if rect:
        d["droop"] = {"k": q(DROOP[node], "MW/kV"), "v_dc_ref": q(500, "kV"), "p0": q(P0_DROOP, "MW")}
    return d


def load_gains(path=GAINS_FILE):
    """Per-node gains ``[kp_i, ki_i, kp_pq, ki_pq]``; an ``inv`` entry becomes the default."""
    raw = json.loads(Path(path).read_text())
    out = {"default": dict(zip(KEYS, raw.pop("inv")))} if "inv" in raw else {}
    out.update({node: dict(zip(KEYS, g)) for node, g in raw.items()})
    return out


def main(gains):
    doc = {
        "_about": "14-bus MMC-MTDC reference grid. Converter ratings and per-length cable "
        "data are fixed inputs; branch lengths, set-points and controller gains "
        "(keys listed in _non_published) are implementer choices.",
        "_non_published": ["lines[*].length", "converters[*].p_set", "droop.p0", "gains", "omega0", "l0", "r0"],
        "nodes": [str(i) for i in range(1, 15)],
        "lines": [
            {"from": str(a), "to": str(b), "length": q(km, "km"),
             "r": q(0.01273, "ohm/km"), "l": q(0.9337, "mH/km"), "c": q(0.01274, "uF/km")}
            for a, b, km in BRANCHES
        ],
        "converters": [converter(i) for i in range(1, 15)],
        "gains": gains,
        "scenario": [],
    }
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "ref14.json").write_text(json.dumps(doc, indent=1) + "\n")
    for name, slopes in CASES.items():
        case = {"_about": "droop slopes of one expansion case, MW/kV",
                "slopes": {f"k{n}": q(v, "MW/kV") for n, v in slopes.items()}}
        (OUT / name).write_text(json.dumps(case, indent=1) + "\n")


if __name__ == "__main__":
    main(load_gains(*sys.argv[1:2]))
