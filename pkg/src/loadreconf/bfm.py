"""Branch flow (DistFlow) model of a radial configuration and its convex relaxation.

Variables are squared voltage magnitudes ``v`` per bus, squared current
magnitudes ``l`` and sending-end flows ``P + iQ`` per closed branch. Branches
are oriented away from the slack bus, so the sending end of a branch is the
bus closer to the feeder head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .netmodel import Branch, Network, SwitchConfiguration, oriented_tree

DEFAULT_TOL = 1e-6


class StateMismatchError(ValueError):
    """State keys do not match the problem's bus or closed-branch sets."""


@dataclass
class BranchFlowState:
    v: dict[int, float]
    l: dict[int, float]
    P: dict[int, float]
    Q: dict[int, float]
    s: dict[int, complex] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v": {str(k): float(x) for k, x in self.v.items()},
            "l": {str(k): float(x) for k, x in self.l.items()},
            "P": {str(k): float(x) for k, x in self.P.items()},
            "Q": {str(k): float(x) for k, x in self.Q.items()},
            "s": {str(k): [float(z.real), float(z.imag)] for k, z in self.s.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BranchFlowState":
        return cls(
            v={int(k): float(x) for k, x in data["v"].items()},
            l={int(k): float(x) for k, x in data["l"].items()},
            P={int(k): float(x) for k, x in data["P"].items()},
            Q={int(k): float(x) for k, x in data["Q"].items()},
            s={int(k): complex(*x) for k, x in data.get("s", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class OPFProblem:
    """Loss-minimisation problem for one radial switch configuration.

    ``loads`` maps bus id to ``(p, q)`` demand in per-unit; buses that are
    missing take their demand from the network file.
    """

    def __init__(
        self,
        network: Network,
        config: SwitchConfiguration | None = None,
        loads: dict[int, tuple[float, float]] | None = None,
    ):
        if config is None:
            config = network.baseline_configuration()
        self.network = network
        self.config = config
        merged = network.default_loads()
        if loads:
            for bus_id, pq in loads.items():
                if bus_id not in merged:
                    if bus_id in network.bus_ids:
                        continue  # demand at a slack bus is absorbed by its injection
                    raise ValueError(f"load given for unknown bus {bus_id}")
                merged[bus_id] = (float(pq[0]), float(pq[1]))
        self.loads = merged
        # raises on non-radial configurations
        self.order, self.branches, flipped = oriented_tree(network, config)
        self.sending: dict[int, int] = {}
        self.receiving: dict[int, int] = {}
        for br, flip in zip(self.branches, flipped):
            a, b = (br.to_bus, br.from_bus) if flip else (br.from_bus, br.to_bus)
            self.sending[br.id] = a
            self.receiving[br.id] = b

    @property
    def branch_ids(self) -> list[int]:
        return [br.id for br in self.branches]

    @property
    def slack_ids(self) -> list[int]:
        return [b.id for b in self.network.slack_buses]

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def demand(self, bus_id: int) -> complex:
        p, q = self.loads.get(bus_id, (0.0, 0.0))
        return complex(p, q)

    def scaled(self, factor: float) -> "OPFProblem":
        loads = {k: (p * factor, q * factor) for k, (p, q) in self.loads.items()}
        return OPFProblem(self.network, self.config, loads)


def _check_keys(prob: OPFProblem, st: BranchFlowState) -> None:
    buses = set(prob.network.bus_ids)
    if set(st.v) != buses:
        raise StateMismatchError("voltage keys differ from the bus set")
    closed = set(prob.branch_ids)
    for name in ("l", "P", "Q"):
        if set(getattr(st, name)) != closed:
            raise StateMismatchError(f"{name} keys differ from the closed-branch set")


def injection(prob: OPFProblem, st: BranchFlowState, bus_id: int) -> complex:
    """Net injection at a bus: free at slack buses (read from the state), minus demand elsewhere."""
    if prob.network.bus(bus_id).is_slack:
        return complex(st.s.get(bus_id, 0.0))
    return -prob.demand(bus_id)


def power_balance_residual(prob: OPFProblem, st: BranchFlowState) -> dict[int, complex]:
    """Nodal balance mismatch per bus, in per-unit; zero where the balance holds."""
    _check_keys(prob, st)
    net_out = {b: 0j for b in prob.network.bus_ids}
    for br in prob.branches:
        S = complex(st.P[br.id], st.Q[br.id])
        net_out[prob.sending[br.id]] += S
        net_out[prob.receiving[br.id]] -= S - st.l[br.id] * complex(br.r, br.x)
    return {b: injection(prob, st, b) - net_out[b] for b in prob.network.bus_ids}


def voltage_drop_residual(prob: OPFProblem, st: BranchFlowState) -> dict[int, float]:
    _check_keys(prob, st)
    out = {}
    for br in prob.branches:
        i, j = prob.sending[br.id], prob.receiving[br.id]
        out[br.id] = (
            st.v[j] - st.v[i]
            + 2 * (br.r * st.P[br.id] + br.x * st.Q[br.id])
            - (br.r ** 2 + br.x ** 2) * st.l[br.id]
        )
    return out


def socp_gap(prob: OPFProblem, st: BranchFlowState) -> dict[int, float]:
    """``l - (P^2 + Q^2) / v_sending`` per closed branch.

    Non-negative gaps satisfy the relaxed cone constraint; zero gaps recover
    the exact branch flow equations.
    """
    _check_keys(prob, st)
    out = {}
    for br in prob.branches:
        vi = st.v[prob.sending[br.id]]
        if vi <= 0:
            raise ValueError(f"non-positive squared voltage at bus {prob.sending[br.id]}")
        out[br.id] = st.l[br.id] - (st.P[br.id] ** 2 + st.Q[br.id] ** 2) / vi
    return out


def objective_loss(prob: OPFProblem, st: BranchFlowState) -> float:
    """Total line loss in per-unit (sum of ``l * r`` over closed branches)."""
    return float(sum(st.l[br.id] * br.r for br in prob.branches))


def to_kw(prob: OPFProblem, per_unit: float) -> float:
    return per_unit * prob.network.base_mva * 1000.0


@dataclass(frozen=True)
class Violation:
    kind: str  # "under_voltage", "over_voltage" or "over_current"
    element: int
    value: float
    limit: float

    def __str__(self):
        what = "bus" if self.kind.endswith("voltage") else "branch"
        return f"{self.kind} at {what} {self.element}: {self.value:.6g} vs limit {self.limit:.6g}"


def check_limits(prob: OPFProblem, st: BranchFlowState, tol: float = DEFAULT_TOL) -> list[Violation]:
    _check_keys(prob, st)
    out = []
    for b in prob.network.buses:
        v = st.v[b.id]
        if v < b.v_min - tol:
            out.append(Violation("under_voltage", b.id, v, b.v_min))
        elif v > b.v_max + tol:
            out.append(Violation("over_voltage", b.id, v, b.v_max))
    for br in prob.branches:
        if st.l[br.id] > br.l_max + tol:
            out.append(Violation("over_current", br.id, st.l[br.id], br.l_max))
    return out


def max_abs(residuals: dict) -> float:
    return max((abs(x) for x in residuals.values()), default=0.0)


def flat_state(prob: OPFProblem) -> BranchFlowState:
    """Flat start: slack set-points elsewhere 1.0, zero flows and currents."""
    v = {b.id: (b.v_set if b.is_slack else 1.0) for b in prob.network.buses}
    zeros = {k: 0.0 for k in prob.branch_ids}
    return BranchFlowState(v=v, l=dict(zeros), P=dict(zeros), Q=dict(zeros),
                           s={k: 0j for k in prob.slack_ids})


def slack_injections(prob: OPFProblem, P: dict[int, float], Q: dict[int, float]) -> dict[int, complex]:
    out = {k: 0j for k in prob.slack_ids}
    for br in prob.branches:
        i = prob.sending[br.id]
        if i in out:
            out[i] += complex(P[br.id], Q[br.id])
    return out


def state_arrays(prob: OPFProblem, st: BranchFlowState) -> tuple[np.ndarray, ...]:
    """``(v, l, P, Q)`` as arrays in bus order / tree-branch order."""
    ids = prob.branch_ids
    v = np.array([st.v[b] for b in prob.network.bus_ids])
    return (v, np.array([st.l[k] for k in ids]), np.array([st.P[k] for k in ids]),
            np.array([st.Q[k] for k in ids]))
