"""Regenerate the bundled network, load and time-series fixtures.

Run from the repository root::

    python scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from loadreconf.forecast import synthetic_load_series, write_load_csv

OUT = Path(__file__).resolve().parents[1] / "src" / "loadreconf" / "data"

V_MIN, V_MAX = 0.9 ** 2, 1.1 ** 2


def bus(i, role="load", p=0.0, q=0.0):
    d = {"id": i, "role": role, "v_min": V_MIN, "v_max": V_MAX, "p": round(p, 6), "q": round(q, 6)}
    if role == "slack":
        d["v_set"] = 1.0
    return d


def branch(k, a, b, r, x, switchable=False, name=None, closed=True, l_max=None):
    d = {"id": k, "from": a, "to": b, "r": round(r, 6), "x": round(x, 6),
         "l_max": l_max, "switchable": switchable}
    if switchable:
        d["name"] = name
        d["closed"] = closed
    return d


def write(name, data):
    (OUT / name).write_text(json.dumps(data, indent=2) + "\n")


def single_line():
    write("single_line.json", {
        "base_mva": 1.0, "base_kv": 12.47,
        "buses": [bus(1, "slack"), bus(2, p=0.1, q=0.05)],
        "branches": [branch(1, 1, 2, 0.01, 0.01)],
    })


def ring4():
    write("ring4.json", {
        "base_mva": 1.0, "base_kv": 12.47,
        "buses": [bus(1, "slack"), bus(2, p=0.05, q=0.02), bus(3, p=0.05, q=0.02), bus(4, p=0.05, q=0.02)],
        "branches": [
            branch(1, 1, 2, 0.01, 0.02, True, "S-1"),
            branch(2, 2, 3, 0.01, 0.02, True, "S-2"),
            branch(3, 3, 4, 0.01, 0.02, True, "S-3", closed=False),
            branch(4, 4, 1, 0.01, 0.02, True, "S-4"),
        ],
    })


def desk16():
    # slack area {1..12}; two islands {13,14} and {15,16} reached through ties
    loads = {2: (0.04, 0.015), 3: (0.03, 0.01), 4: (0.05, 0.02), 5: (0.03, 0.012),
             6: (0.04, 0.015), 7: (0.02, 0.008), 8: (0.03, 0.01), 9: (0.025, 0.01),
             10: (0.035, 0.012), 11: (0.03, 0.01), 12: (0.02, 0.008), 13: (0.04, 0.015),
             14: (0.03, 0.01), 15: (0.035, 0.012), 16: (0.03, 0.01)}
    buses = [bus(1, "slack")] + [bus(i, p=loads[i][0], q=loads[i][1]) for i in range(2, 17)]
    fixed = [(1, 2, 0.010), (2, 3, 0.012), (3, 4, 0.015), (4, 5, 0.012), (5, 6, 0.010),
             (3, 7, 0.020), (7, 8, 0.020), (8, 9, 0.018), (5, 10, 0.018), (10, 11, 0.020),
             (11, 12, 0.020), (13, 14, 0.015), (15, 16, 0.015)]
    branches = [branch(k + 1, a, b, r, 2 * r) for k, (a, b, r) in enumerate(fixed)]
    ties = [(6, 13, 0.020, "TS-1", True), (9, 15, 0.015, "TS-2", True),
            (14, 15, 0.010, "TS-3", False), (12, 16, 0.012, "TS-4", False)]
    for k, (a, b, r, name, closed) in enumerate(ties):
        branches.append(branch(100 + k + 1, a, b, r, 2 * r, True, name, closed))
    write("desk16.json", {"base_mva": 1.0, "base_kv": 12.47, "buses": buses, "branches": branches})
    # spike around bus 5 makes feeding {13,14} through TS-1 costly
    spike = {str(b): {"p": p, "q": q} for b, (p, q) in loads.items()}
    for b in (5, 6, 10):
        spike[str(b)] = {"p": round(loads[b][0] * 3, 6), "q": round(loads[b][1] * 3, 6)}
    write("desk16_spike_loads.json", {"loads": spike})


def desk8():
    loads = {2: (0.05, 0.02), 3: (0.04, 0.015), 4: (0.03, 0.01), 5: (0.04, 0.015),
             6: (0.06, 0.02), 7: (0.03, 0.01), 8: (0.05, 0.02)}
    buses = [bus(1, "slack")] + [bus(i, p=loads[i][0], q=loads[i][1]) for i in range(2, 9)]
    fixed = [(1, 2, 0.012), (2, 3, 0.015), (2, 4, 0.02), (5, 6, 0.015), (7, 8, 0.015)]
    branches = [branch(k + 1, a, b, r, 2 * r) for k, (a, b, r) in enumerate(fixed)]
    ties = [(3, 5, 0.02, "TS-1", True), (4, 7, 0.02, "TS-2", False),
            (6, 7, 0.01, "TS-3", False), (2, 8, 0.015, "TS-4", True)]
    for k, (a, b, r, name, closed) in enumerate(ties):
        branches.append(branch(100 + k + 1, a, b, r, 2 * r, True, name, closed))
    write("desk8.json", {"base_mva": 1.0, "base_kv": 12.47, "buses": buses, "branches": branches})
    spike = {str(b): {"p": p, "q": q} for b, (p, q) in loads.items()}
    for b in (3, 6):
        spike[str(b)] = {"p": round(loads[b][0] * 3, 6), "q": round(loads[b][1] * 3, 6)}
    write("desk8_spike_loads.json", {"loads": spike})


def feeder123(seed=123):
    """Synthetic 123-bus radial feeder with four tie switches (not the IEEE data)."""
    rng = np.random.default_rng(seed)
    sizes = {"main": 101, "north": 12, "south": 10}
    buses, branches = [bus(1, "slack")], []
    ids = {"main": [1], "north": [], "south": []}
    nxt = 2
    k = 1
    for area in ("main", "north", "south"):
        need = sizes[area] - len(ids[area])
        for _ in range(need):
            p = float(rng.uniform(0.001, 0.006))
            buses.append(bus(nxt, p=p, q=0.4 * p))
            members = ids[area]
            if members:
                # attach near the end of the list to obtain long laterals
                lo = max(0, len(members) - 6)
                parent = members[int(rng.integers(lo, len(members)))]
                r = float(rng.uniform(0.002, 0.008))
                branches.append(branch(k, parent, nxt, r, 2 * r))
                k += 1
            members.append(nxt)
            nxt += 1
    main, north, south = ids["main"], ids["north"], ids["south"]
    ties = [(main[40], north[0], "TS-1", True), (main[70], south[0], "TS-2", True),
            (north[-1], south[-1], "TS-3", False), (main[-1], south[4], "TS-4", False)]
    for t, (a, b, name, closed) in enumerate(ties):
        r = float(rng.uniform(0.003, 0.006))
        branches.append(branch(1000 + t + 1, a, b, r, 2 * r, True, name, closed))
    write("feeder123.json", {"base_mva": 1.0, "base_kv": 4.16, "buses": buses, "branches": branches})


def load_series():
    series = synthetic_load_series(days=4, resolution_minutes=5, noise=0.01, seed=7)
    write_load_csv(series, OUT / "sinusoid_load.csv")
    const = synthetic_load_series(days=2, resolution_minutes=5, noise=0.0, amplitude=0.0, seed=0)
    write_load_csv(const, OUT / "constant_load.csv")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    single_line()
    ring4()
    desk16()
    desk8()
    feeder123()
    load_series()
