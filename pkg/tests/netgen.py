"""Random radial networks for property and oracle tests."""

import numpy as np

from loadreconf.netmodel import Branch, BranchKind, Bus, BusRole, Network

V_MIN, V_MAX = 0.81, 1.21


def random_tree(rng, n_buses, max_load=0.2, r_range=(0.002, 0.01), x_range=(0.002, 0.02)):
    """Random tree rooted at slack bus 1; bus k attaches to a uniformly drawn earlier bus."""
    buses = [Bus(1, BusRole.SLACK, V_MIN, V_MAX)]
    for k in range(2, n_buses + 1):
        p = float(rng.uniform(0.0, max_load))
        q = float(rng.uniform(0.0, 0.5 * p))
        buses.append(Bus(k, BusRole.LOAD, V_MIN, V_MAX, p, q))
    branches = []
    for k in range(2, n_buses + 1):
        parent = int(rng.integers(1, k))
        # random orientation exercises the flipping logic
        a, b = (parent, k) if rng.random() < 0.5 else (k, parent)
        branches.append(Branch(k - 1, a, b, float(rng.uniform(*r_range)), float(rng.uniform(*x_range))))
    return Network(tuple(buses), tuple(branches))


def ring(n, r=0.01, x=0.02, load=0.05):
    """``n`` buses on a cycle, every edge switchable, bus 1 slack."""
    buses = [Bus(1, BusRole.SLACK, V_MIN, V_MAX)]
    buses += [Bus(k, BusRole.LOAD, V_MIN, V_MAX, load, 0.4 * load) for k in range(2, n + 1)]
    branches = [
        Branch(k, k, k % n + 1, r, x, kind=BranchKind.SWITCHABLE, name=f"S-{k}")
        for k in range(1, n + 1)
    ]
    return Network(tuple(buses), tuple(branches))


def random_meshed(rng, n_buses, n_extra, n_slack=1):
    """Tree plus ``n_extra`` random chords; a random subset of edges is switchable."""
    buses = [Bus(k, BusRole.SLACK if k <= n_slack else BusRole.LOAD, V_MIN, V_MAX, 0.0, 0.0)
             for k in range(1, n_buses + 1)]
    edges = [(int(rng.integers(1, k)), k) for k in range(2, n_buses + 1)]
    for _ in range(n_extra):
        a, b = rng.choice(np.arange(1, n_buses + 1), size=2, replace=False)
        edges.append((int(a), int(b)))
    branches = []
    for k, (a, b) in enumerate(edges, start=1):
        kind = BranchKind.SWITCHABLE if rng.random() < 0.6 else BranchKind.FIXED
        branches.append(Branch(k, a, b, 0.01, 0.02, kind=kind, name=f"B{k}"))
    return Network(tuple(buses), tuple(branches))


def independent_is_radial(n_buses, slack, edges):
    """DFS forest check written without union-find: acyclic, spanning, one slack per tree."""
    adj = {b: [] for b in range(n_buses)}
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    seen = {}
    for root in range(n_buses):
        if root in seen:
            continue
        comp, stack = [], [(root, None)]
        seen[root] = root
        while stack:
            node, via = stack.pop()
            comp.append(node)
            for nxt, k in adj[node]:
                if k == via:
                    continue
                if nxt in seen:
                    return False
                seen[nxt] = root
                stack.append((nxt, k))
        if sum(1 for c in comp if c in slack) != 1:
            return False
    return True
