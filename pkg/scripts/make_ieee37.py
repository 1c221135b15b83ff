"""Regenerate ``src/voltvar_ord/data/ieee37.json``.

Single-phase (positive-sequence) equivalent of the IEEE 37-node test feeder.
Line configurations use self-minus-mutual impedances of the published phase
impedance matrices; spot loads are summed across phases. Bus numbering is a
BFS order from the substation (node 799 -> bus 0).
"""

import json
import sys
from pathlib import Path

V_LL_KV = 4.8
S_BASE_MVA = 2.5
V0 = 1.02  # substation setpoint; puts the high-solar afternoon in an overvoltage regime
Z_BASE = V_LL_KV**2 / S_BASE_MVA

# ohm per mile, positive sequence
CONFIGS = {
    "721": (0.2253, 0.2341),
    "722": (0.3122, 0.3299),
    "723": (0.8065, 0.4602),
    "724": (1.5748, 0.5020),
}
XFM_Z_PU = (0.0009, 0.0181)  # 500 kVA, on its own base
XFM_KVA = 500.0

SEGMENTS = [
    ("799", "701", 1850, "721"),
    ("701", "702", 960, "722"),
    ("702", "705", 400, "724"),
    ("702", "713", 360, "723"),
    ("702", "703", 1320, "722"),
    ("703", "727", 240, "724"),
    ("703", "730", 600, "723"),
    ("704", "714", 80, "724"),
    ("704", "720", 800, "723"),
    ("705", "742", 320, "724"),
    ("705", "712", 240, "724"),
    ("706", "725", 280, "724"),
    ("707", "724", 760, "724"),
    ("707", "722", 120, "724"),
    ("708", "733", 320, "723"),
    ("708", "732", 320, "724"),
    ("709", "731", 600, "723"),
    ("709", "708", 320, "723"),
    ("710", "735", 200, "724"),
    ("710", "736", 1280, "724"),
    ("711", "741", 400, "723"),
    ("711", "740", 200, "724"),
    ("713", "704", 520, "723"),
    ("714", "718", 520, "724"),
    ("720", "707", 920, "724"),
    ("720", "706", 600, "723"),
    ("727", "744", 280, "723"),
    ("730", "709", 200, "723"),
    ("733", "734", 560, "723"),
    ("734", "737", 640, "723"),
    ("734", "710", 520, "724"),
    ("737", "738", 400, "723"),
    ("738", "711", 400, "723"),
    ("744", "728", 200, "724"),
    ("744", "729", 280, "724"),
    ("709", "775", 0, "XFM-1"),
]

# kW summed over phases
SPOT_LOADS_KW = {
    "701": 630, "712": 85, "713": 85, "714": 38, "718": 85, "720": 85,
    "722": 161, "724": 42, "725": 42, "727": 42, "728": 126, "729": 42,
    "730": 85, "731": 85, "732": 42, "733": 85, "734": 42, "735": 85,
    "736": 42, "737": 140, "738": 126, "740": 85, "741": 42, "742": 93,
    "744": 42,
}

# solar-hosting nodes; DER peak output is 1.6x the host's nominal load
DER_NODES = ["742", "725", "728", "731", "733", "736", "738", "741", "740", "735"]
SOLAR_TO_LOAD = 1.6


def main(out: Path) -> None:
    children: dict[str, list] = {}
    for a, b, length, cfg in SEGMENTS:
        children.setdefault(a, []).append((b, length, cfg))
    order = ["799"]
    i = 0
    while i < len(order):
        order.extend(c for c, _, _ in children.get(order[i], []))
        i += 1
    idx = {node: k for k, node in enumerate(order)}

    lines = []
    for a, b, length, cfg in SEGMENTS:
        if cfg == "XFM-1":
            r, x = (z * S_BASE_MVA * 1000.0 / XFM_KVA for z in XFM_Z_PU)
        else:
            r_mi, x_mi = CONFIGS[cfg]
            miles = length / 5280.0
            r, x = r_mi * miles / Z_BASE, x_mi * miles / Z_BASE
        lines.append({"from": idx[a], "to": idx[b], "r": round(r, 10), "x": round(x, 10)})
    lines.sort(key=lambda d: d["to"])

    loads = [
        {"bus": idx[node], "p_nom": round(kw / 1000.0 / S_BASE_MVA, 10)}
        for node, kw in sorted(SPOT_LOADS_KW.items(), key=lambda kv: idx[kv[0]])
    ]
    ders = []
    for node in sorted(DER_NODES, key=lambda nd: idx[nd]):
        p_hat = SOLAR_TO_LOAD * SPOT_LOADS_KW[node] / 1000.0 / S_BASE_MVA
        ders.append({"bus": idx[node], "p_hat": round(p_hat, 10), "q_hat": round(0.46 * p_hat, 10)})

    doc = {
        "format": "voltvar-feeder/1",
        "name": "ieee37-single-phase",
        "notes": f"base {S_BASE_MVA} MVA, {V_LL_KV} kV; bus order " + " ".join(order),
        "v0": V0,
        "buses": list(range(len(order))),
        "lines": lines,
        "ders": ders,
        "loads": loads,
    }
    out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "voltvar_ord" / "data" / "ieee37.json"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
