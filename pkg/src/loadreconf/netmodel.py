"""Distribution network graph, switch configurations and radiality checks."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .parallel import parallel_map

DEFAULT_SWITCH_CAP = 20


class NetworkError(ValueError):
    """Base class for network input problems."""


class NetworkParseError(NetworkError):
    pass


class NetworkValidationError(NetworkError):
    pass


class BusRole(str, Enum):
    SLACK = "slack"
    LOAD = "load"


class BranchKind(str, Enum):
    FIXED = "fixed"
    SWITCHABLE = "switchable"


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``v_min``/``v_max`` bound the *squared* voltage magnitude. ``v_set`` is the
    squared voltage held at a slack bus and is ignored for load buses.
    """

    id: int
    role: BusRole
    v_min: float
    v_max: float
    demand_p: float = 0.0
    demand_q: float = 0.0
    v_set: float = 1.0

    @property
    def is_slack(self) -> bool:
        return self.role is BusRole.SLACK


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    l_max: float = float("inf")
    kind: BranchKind = BranchKind.FIXED
    name: str = ""
    # normal (baseline) state; meaningful for switchable branches only
    closed: bool = True

    @property
    def switchable(self) -> bool:
        return self.kind is BranchKind.SWITCHABLE

    @property
    def label(self) -> str:
        return self.name or f"SW-{self.id}"


@dataclass(frozen=True)
class SwitchConfiguration:
    """Closed/open state of every switchable branch, in network order."""

    states: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(bool(s) for s in self.states))

    def __len__(self) -> int:
        return len(self.states)

    def as_bits(self) -> str:
        return "".join("1" if s else "0" for s in self.states)

    @classmethod
    def from_bits(cls, bits: str) -> "SwitchConfiguration":
        if set(bits) - {"0", "1"}:
            raise ValueError(f"invalid switch bit string {bits!r}")
        return cls(tuple(c == "1" for c in bits))


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 1.0
    base_kv: float = 1.0
    _bus_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate_network(self)
        object.__setattr__(
            self, "_bus_index", {b.id: k for k, b in enumerate(self.buses)}
        )

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self, bus_id: int) -> int:
        return self._bus_index[bus_id]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self._bus_index[bus_id]]

    @property
    def slack_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.is_slack]

    @property
    def switchable_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.switchable]

    @property
    def n_switchable(self) -> int:
        return len(self.switchable_branches)

    def default_loads(self) -> dict[int, tuple[float, float]]:
        return {b.id: (b.demand_p, b.demand_q) for b in self.buses if not b.is_slack}

    def baseline_configuration(self) -> SwitchConfiguration:
        return SwitchConfiguration(tuple(br.closed for br in self.switchable_branches))

    def all_closed(self) -> SwitchConfiguration:
        return SwitchConfiguration((True,) * self.n_switchable)

    def closed_branches(self, cfg: SwitchConfiguration) -> list[Branch]:
        _check_cfg(self, cfg)
        states = iter(cfg.states)
        out = []
        for br in self.branches:
            if not br.switchable or next(states):
                out.append(br)
        return out

    def opened_switches(self, cfg: SwitchConfiguration) -> list[str]:
        _check_cfg(self, cfg)
        return [br.label for br, s in zip(self.switchable_branches, cfg.states) if not s]

    def with_loads(self, loads: dict[int, tuple[float, float]]) -> "Network":
        unknown = set(loads) - set(self.bus_ids)
        if unknown:
            raise NetworkValidationError(f"loads reference unknown buses {sorted(unknown)}")
        buses = []
        for b in self.buses:
            if b.id in loads and not b.is_slack:
                p, q = loads[b.id]
                b = Bus(b.id, b.role, b.v_min, b.v_max, float(p), float(q), b.v_set)
            buses.append(b)
        return Network(tuple(buses), self.branches, self.base_mva, self.base_kv)


def validate_network(net: Network) -> None:
    ids = [b.id for b in net.buses]
    seen = set()
    for i in ids:
        if i in seen:
            raise NetworkValidationError(f"duplicate bus id {i}")
        seen.add(i)
    if not net.buses:
        raise NetworkValidationError("network has no buses")
    if not any(b.is_slack for b in net.buses):
        raise NetworkValidationError("network has no slack bus")
    for b in net.buses:
        if not (0 < b.v_min < b.v_max):
            raise NetworkValidationError(
                f"bus {b.id}: voltage bounds must satisfy 0 < v_min < v_max"
            )
        if b.is_slack and not (b.v_min <= b.v_set <= b.v_max):
            raise NetworkValidationError(f"bus {b.id}: v_set outside [v_min, v_max]")
        if not (np.isfinite(b.demand_p) and np.isfinite(b.demand_q)):
            raise NetworkValidationError(f"bus {b.id}: non-finite demand")
    br_ids = set()
    for br in net.branches:
        if br.id in br_ids:
            raise NetworkValidationError(f"duplicate branch id {br.id}")
        br_ids.add(br.id)
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"branch {br.id}: from_bus equals to_bus")
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise NetworkValidationError(f"branch {br.id}: unknown bus {end}")
        if br.r < 0:
            raise NetworkValidationError(f"branch {br.id}: negative resistance")
        if br.r == 0 and br.x == 0:
            raise NetworkValidationError(f"branch {br.id}: zero impedance")
        if not br.l_max > 0:
            raise NetworkValidationError(f"branch {br.id}: l_max must be positive")


def _check_cfg(net: Network, cfg: SwitchConfiguration) -> None:
    if len(cfg) != net.n_switchable:
        raise ValueError(
            f"configuration has {len(cfg)} entries, network has "
            f"{net.n_switchable} switchable branches"
        )


# ---------------------------------------------------------------- file I/O

def network_from_dict(data: dict, source: str = "<dict>") -> Network:
    def field_of(obj, key, where, cast=float, default=None):
        if key not in obj:
            if default is not None:
                return default
            raise NetworkParseError(f"{source}: {where}: missing field {key!r}")
        try:
            return cast(obj[key])
        except (TypeError, ValueError) as exc:
            raise NetworkParseError(
                f"{source}: {where}: bad value for {key!r}: {obj[key]!r}"
            ) from exc

    for key in ("buses", "branches"):
        if not isinstance(data.get(key), list):
            raise NetworkParseError(f"{source}: top-level {key!r} must be an array")
    buses = []
    for k, raw in enumerate(data["buses"]):
        where = f"buses[{k}]"
        role = field_of(raw, "role", where, str)
        try:
            role = BusRole(role)
        except ValueError:
            raise NetworkParseError(f"{source}: {where}: unknown role {role!r}") from None
        buses.append(
            Bus(
                id=field_of(raw, "id", where, int),
                role=role,
                v_min=field_of(raw, "v_min", where),
                v_max=field_of(raw, "v_max", where),
                demand_p=field_of(raw, "p", where, default=0.0),
                demand_q=field_of(raw, "q", where, default=0.0),
                v_set=field_of(raw, "v_set", where, default=1.0),
            )
        )
    branches = []
    for k, raw in enumerate(data["branches"]):
        where = f"branches[{k}]"
        switchable = field_of(raw, "switchable", where, bool, default=False)
        l_max = raw.get("l_max")
        branches.append(
            Branch(
                id=field_of(raw, "id", where, int),
                from_bus=field_of(raw, "from", where, int),
                to_bus=field_of(raw, "to", where, int),
                r=field_of(raw, "r", where),
                x=field_of(raw, "x", where),
                l_max=float("inf") if l_max is None else field_of(raw, "l_max", where),
                kind=BranchKind.SWITCHABLE if switchable else BranchKind.FIXED,
                name=str(raw.get("name", "")),
                closed=field_of(raw, "closed", where, bool, default=True),
            )
        )
    return Network(
        tuple(buses),
        tuple(branches),
        base_mva=field_of(data, "base_mva", "top level", default=1.0),
        base_kv=field_of(data, "base_kv", "top level", default=1.0),
    )


def network_to_dict(net: Network) -> dict:
    return {
        "base_mva": net.base_mva,
        "base_kv": net.base_kv,
        "buses": [
            {
                "id": b.id,
                "role": b.role.value,
                "v_min": b.v_min,
                "v_max": b.v_max,
                "p": b.demand_p,
                "q": b.demand_q,
                **({"v_set": b.v_set} if b.is_slack else {}),
            }
            for b in net.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "l_max": None if np.isinf(br.l_max) else br.l_max,
                "switchable": br.switchable,
                **({"name": br.name} if br.name else {}),
                **({"closed": br.closed} if br.switchable else {}),
            }
            for br in net.branches
        ],
    }


def load_network(path) -> Network:
    """Read and validate a network JSON file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise NetworkParseError(f"{path}: top level must be an object")
    return network_from_dict(data, source=str(path))


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")


# ---------------------------------------------------------------- topology

class DisjointSet:
    """Union-find with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def adjacency_matrix(net: Network, cfg: SwitchConfiguration) -> np.ndarray:
    """0/1 bus adjacency matrix of the closed-branch subgraph (rows follow ``net.buses``)."""
    n = net.n_buses
    A = np.zeros((n, n), dtype=np.int8)
    for br in net.closed_branches(cfg):
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        A[i, j] = A[j, i] = 1
    return A


def is_radial(net: Network, cfg: SwitchConfiguration) -> bool:
    """True iff closed branches form a forest with exactly one slack bus per tree.

    Equivalent to rank(A) = N - d with the edge count N - d, where d is the
    number of slack buses.
    """
    closed = net.closed_branches(cfg)
    n = net.n_buses
    d = len(net.slack_buses)
    if len(closed) != n - d:
        return False
    dsu = DisjointSet(n)
    for br in closed:
        if not dsu.union(net.bus_index(br.from_bus), net.bus_index(br.to_bus)):
            return False
    # forest with N - d edges has exactly d components; each needs its own slack
    slack_roots = {dsu.find(net.bus_index(b.id)) for b in net.slack_buses}
    return len(slack_roots) == d


def _radial_chunk(net: Network, start: int, stop: int) -> list[int]:
    s = net.n_switchable
    out = []
    for k in range(start, stop):
        cfg = _config_from_index(k, s)
        if is_radial(net, cfg):
            out.append(k)
    return out


def _config_from_index(k: int, s: int) -> SwitchConfiguration:
    # index 0 = all open; most significant bit is the first switch
    return SwitchConfiguration(tuple(bool((k >> (s - 1 - i)) & 1) for i in range(s)))


def all_configurations(net: Network, cap: int = DEFAULT_SWITCH_CAP) -> list[SwitchConfiguration]:
    """Every one of the 2**S switch permutations, in lexicographic order."""
    s = net.n_switchable
    _check_cap(s, cap)
    return [SwitchConfiguration(bits) for bits in itertools.product((False, True), repeat=s)]


def _check_cap(s: int, cap: int) -> None:
    if s > cap:
        raise ValueError(
            f"{s} switchable branches means 2**{s} permutations; raise the cap "
            f"(currently {cap}) explicitly if this is intended"
        )


def enumerate_radial_configurations(
    net: Network, cap: int = DEFAULT_SWITCH_CAP, n_jobs: int = 1
) -> list[SwitchConfiguration]:
    """Radial members of all 2**S switch permutations, lexicographically ordered."""
    s = net.n_switchable
    _check_cap(s, cap)
    total = 1 << s
    n_chunks = max(1, min(n_jobs, total))
    bounds = np.linspace(0, total, n_chunks + 1).astype(int)
    chunks = [(net, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    found = parallel_map(_radial_chunk_args, chunks, n_jobs=n_jobs)
    indices = sorted(itertools.chain.from_iterable(found))
    return [_config_from_index(k, s) for k in indices]


def _radial_chunk_args(args):
    return _radial_chunk(*args)


def configuration_by_opened(net: Network, opened: Iterable[str]) -> SwitchConfiguration:
    """Build a configuration from the labels of the switches that are open."""
    opened = set(opened)
    labels = [br.label for br in net.switchable_branches]
    unknown = opened - set(labels)
    if unknown:
        raise ValueError(f"unknown switch labels {sorted(unknown)}")
    return SwitchConfiguration(tuple(lab not in opened for lab in labels))


def oriented_tree(net: Network, cfg: SwitchConfiguration) -> tuple[list[int], list[Branch], list[bool]]:
    """Bus visit order and parent-to-child oriented closed branches of a radial cfg.

    Returns ``(order, branches, flipped)``: bus indices in breadth-first order
    from the slack buses, closed branches sorted by the visit order of their
    child bus, and whether each branch runs opposite to its file orientation.
    """
    if not is_radial(net, cfg):
        raise ValueError("configuration is not radial")
    n = net.n_buses
    adj: list[list[tuple[int, Branch]]] = [[] for _ in range(n)]
    for br in net.closed_branches(cfg):
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        adj[i].append((j, br))
        adj[j].append((i, br))
    seen = [False] * n
    order: list[int] = []
    tree: list[Branch] = []
    flipped: list[bool] = []
    queue = [net.bus_index(b.id) for b in net.slack_buses]
    for q in queue:
        seen[q] = True
    head = 0
    while head < len(queue):
        i = queue[head]
        head += 1
        order.append(i)
        for j, br in adj[i]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
                tree.append(br)
                flipped.append(net.bus_index(br.from_bus) != i)
    return order, tree, flipped


def relabel(net: Network, mapping: dict[int, int]) -> Network:
    """Copy of ``net`` with bus ids renamed through ``mapping``."""
    buses = tuple(
        Bus(mapping[b.id], b.role, b.v_min, b.v_max, b.demand_p, b.demand_q, b.v_set)
        for b in net.buses
    )
    branches = tuple(
        Branch(br.id, mapping[br.from_bus], mapping[br.to_bus], br.r, br.x, br.l_max,
               br.kind, br.name, br.closed)
        for br in net.branches
    )
    return Network(buses, branches, net.base_mva, net.base_kv)


__all__: Sequence[str] = [
    "Bus", "Branch", "BusRole", "BranchKind", "Network", "SwitchConfiguration",
    "NetworkError", "NetworkParseError", "NetworkValidationError",
    "load_network", "save_network", "network_from_dict", "network_to_dict",
    "adjacency_matrix", "is_radial", "enumerate_radial_configurations",
    "all_configurations", "configuration_by_opened", "oriented_tree", "relabel",
    "DisjointSet",
]
