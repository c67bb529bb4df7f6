"""Consensus ADMM for the relaxed branch-flow OPF of one radial configuration.

Decomposition
-------------
Each non-slack bus ``j`` is an agent. With ``e`` the branch feeding ``j`` from
its parent ``i`` and ``c`` the branches leaving ``j``, the agent keeps two
local copies of the variables it touches:

* an *affine* copy ``(P_e, Q_e, l_e, v_j, v_i, P_c, Q_c ...)`` constrained by
  the nodal balance at ``j`` and the voltage drop along ``e``;
* a *cone* copy ``(P_e, Q_e, l_e, v_i)`` constrained by
  ``l_e v_i >= P_e^2 + Q_e^2`` and carrying the loss term ``r_e l_e``.

Both local updates are closed-form Euclidean projections. The consensus
(z) update averages all copies of each shared quantity and projects onto the
voltage/current bounds; the slack voltage is pinned by equal bounds.

Flows are stored internally as ``sqrt(2) * P`` so the cone constraint is the
standard rotated cone ``2 l v >= |w|^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .bfm import (
    BranchFlowState,
    OPFProblem,
    check_limits,
    flat_state,
    objective_loss,
    slack_injections,
    socp_gap,
)

_FLOW_SCALE = math.sqrt(0.5)  # P = _FLOW_SCALE * (internal flow)
_S2 = math.sqrt(0.5)


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration_limit"
    INFEASIBLE = "infeasible"


class LocalSubproblemError(ArithmeticError):
    def __init__(self, bus_id, message="non-finite local update"):
        super().__init__(f"agent at bus {bus_id}: {message}")
        self.bus_id = bus_id


class OracleError(RuntimeError):
    pass


@dataclass
class ADMMSettings:
    rho: float = 1.0
    eps_abs: float = 1e-9
    eps_rel: float = 1e-9
    max_iter: int = 50000
    over_relaxation: float = 1.6
    adaptive_rho: bool = True
    rho_bounds: tuple[float, float] = (1e-3, 1e3)
    adapt_interval: int = 10
    adapt_until: int = 1000  # rho is frozen afterwards so the iteration can settle
    stall_window: int = 500
    record_history: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1.0, 1.8]")


@dataclass
class OPFSolution:
    state: BranchFlowState
    objective: float
    status: SolveStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    max_socp_gap: float
    history: list[tuple[int, float, float, float]] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "objective_pu": self.objective,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "max_socp_gap": self.max_socp_gap,
        }


@dataclass
class BusAgent:
    bus_id: int
    affine: slice  # rows of this agent's affine copy in the stacked copy vector
    branch: int  # tree-branch position of the parent branch (owns its cone copy)


class ConsensusADMM:
    """ADMM iterate state for one :class:`OPFProblem`.

    ``iterate`` performs one synchronized round (all agent updates, consensus
    averaging, dual update); ``solve`` loops it to convergence.
    """

    def __init__(self, prob: OPFProblem, settings: ADMMSettings | None = None):
        self.prob = prob
        self.settings = settings or ADMMSettings()
        self.rho = self.settings.rho
        net = prob.network
        n = net.n_buses
        E = len(prob.branches)
        self.n_branches = E
        pos = {br.id: k for k, br in enumerate(prob.branches)}
        bidx = net.bus_index
        self._iP = np.arange(E)
        self._iQ = E + self._iP
        self._iL = 2 * E + self._iP
        self._iV = 3 * E + np.arange(n)
        nz = 3 * E + n
        self.n_vars = nz

        lo = np.full(nz, -np.inf)
        hi = np.full(nz, np.inf)
        lo[self._iL] = 0.0
        hi[self._iL] = [br.l_max for br in prob.branches]
        for b in net.buses:
            k = self._iV[bidx(b.id)]
            if b.is_slack:
                lo[k] = hi[k] = b.v_set
            else:
                lo[k], hi[k] = b.v_min, b.v_max
        self._lo, self._hi = lo, hi

        children: dict[int, list[int]] = {b: [] for b in net.bus_ids}
        for br in prob.branches:
            children[prob.sending[br.id]].append(pos[br.id])

        c = _FLOW_SCALE
        idx, blocks_A, blocks_M, rhs = [], [], [], []
        self.agents: list[BusAgent] = []
        start = 0
        for br in prob.branches:
            e = pos[br.id]
            i, j = prob.sending[br.id], prob.receiving[br.id]
            loc = [self._iP[e], self._iQ[e], self._iL[e], self._iV[bidx(j)], self._iV[bidx(i)]]
            kids = children[j]
            for ch in kids:
                loc += [self._iP[ch], self._iQ[ch]]
            A = np.zeros((3, len(loc)))
            # P_e - r l_e - sum P_c = p_j ; same for Q ; v_j - v_i + 2(rP + xQ) - |z|^2 l = 0
            A[0, 0], A[0, 2] = c, -br.r
            A[1, 1], A[1, 2] = c, -br.x
            for k in range(len(kids)):
                A[0, 5 + 2 * k] = -c
                A[1, 6 + 2 * k] = -c
            A[2, :5] = [2 * br.r * c, 2 * br.x * c, -(br.r ** 2 + br.x ** 2), 1.0, -1.0]
            d = prob.demand(j)
            blocks_A.append(A)
            blocks_M.append(A.T @ np.linalg.inv(A @ A.T))
            rhs.append([d.real, d.imag, 0.0])
            idx.extend(loc)
            self.agents.append(BusAgent(j, slice(start, start + len(loc)), e))
            start += len(loc)
        self._n_aff = start
        if E:
            self._A = sp.block_diag(blocks_A, format="csr")
            self._M = sp.block_diag(blocks_M, format="csr")
            self._b = np.concatenate(rhs)
        idx_cone = np.concatenate(
            [self._iP, self._iQ, self._iL, self._iV[[bidx(prob.sending[br.id]) for br in prob.branches]]]
        ).astype(int)
        self._idx = np.concatenate([np.asarray(idx, dtype=int), idx_cone])
        self._cost = np.zeros(4 * E)
        self._cost[2 * E:3 * E] = [br.r for br in prob.branches]
        self._count = np.bincount(self._idx, minlength=nz).astype(float)
        self.reset()

    # -- state -------------------------------------------------------------
    def reset(self) -> None:
        """Flat start: unit voltages (slack at set-point), zero flows, zero duals."""
        z = np.zeros(self.n_vars)
        z[self._iV] = 1.0
        self.z = np.clip(z, self._lo, self._hi)
        self.u = np.zeros(len(self._idx))
        self.rho = self.settings.rho
        self.iterations = 0

    def _project_cone(self, y: np.ndarray) -> np.ndarray:
        E = self.n_branches
        w1, w2, lt, vi = y[:E], y[E:2 * E], y[2 * E:3 * E], y[3 * E:]
        t = (lt + vi) * _S2
        s = (lt - vi) * _S2
        nrm = np.sqrt(w1 ** 2 + w2 ** 2 + s ** 2)
        inside = nrm <= t
        polar = nrm <= -t
        safe = np.where(nrm > 0, nrm, 1.0)
        tn = np.where(inside, t, np.where(polar, 0.0, 0.5 * (t + nrm)))
        w1n = np.where(inside, w1, tn * (w1 / safe))
        w2n = np.where(inside, w2, tn * (w2 / safe))
        sn = np.where(inside, s, tn * (s / safe))
        return np.concatenate([w1n, w2n, (tn + sn) * _S2, (tn - sn) * _S2])

    def local_updates(self, y: np.ndarray) -> np.ndarray:
        """All agent x-updates for the stacked point ``y = z_copies - u``.

        The blocks are independent; stacking them is the synchronous round.
        """
        na = self._n_aff
        if self.n_branches == 0:
            return y.copy()
        xa = y[:na] - self._M @ (self._A @ y[:na] - self._b)
        xc = self._project_cone(y[na:] - self._cost / self.rho)
        x = np.concatenate([xa, xc])
        if not np.all(np.isfinite(x)):
            self._raise_local_failure(x)
        return x

    def _raise_local_failure(self, x):
        na = self._n_aff
        E = self.n_branches
        for agent in self.agents:
            cone = x[na + agent.branch::E][:4]
            if not (np.all(np.isfinite(x[agent.affine])) and np.all(np.isfinite(cone))):
                raise LocalSubproblemError(agent.bus_id)
        raise LocalSubproblemError(None)

    def iterate(self) -> tuple[float, float]:
        """One ADMM round; returns ``(primal_residual, dual_residual)``."""
        alpha = self.settings.over_relaxation
        zg = self.z[self._idx]
        x = self.local_updates(zg - self.u)
        xh = alpha * x + (1.0 - alpha) * zg
        z_new = np.bincount(self._idx, weights=xh + self.u, minlength=self.n_vars)
        z_new = np.where(self._count > 0, z_new / np.maximum(self._count, 1.0), self.z)
        z_new = np.clip(z_new, self._lo, self._hi)
        zg_new = z_new[self._idx]
        self.u = self.u + xh - zg_new
        self.z = z_new
        self.iterations += 1
        self._x = x
        primal = float(np.linalg.norm(x - zg_new))
        dual = float(self.rho * np.linalg.norm(zg_new - zg))
        return primal, dual

    def tolerances(self) -> tuple[float, float]:
        st = self.settings
        root_n = math.sqrt(max(len(self._idx), 1))
        zg = self.z[self._idx]
        x = getattr(self, "_x", zg)
        eps_pri = st.eps_abs * root_n + st.eps_rel * max(np.linalg.norm(x), np.linalg.norm(zg))
        eps_dual = st.eps_abs * root_n + st.eps_rel * self.rho * np.linalg.norm(self.u)
        return float(eps_pri), float(eps_dual)

    def _adapt_rho(self, primal: float, dual: float) -> None:
        lo, hi = self.settings.rho_bounds
        if primal > 10 * dual and self.rho * 2 <= hi:
            self.rho *= 2
            self.u /= 2
        elif dual > 10 * primal and self.rho / 2 >= lo:
            self.rho /= 2
            self.u *= 2

    def state_from(self, z: np.ndarray) -> BranchFlowState:
        prob = self.prob
        ids = prob.branch_ids
        P = {k: float(_FLOW_SCALE * z[self._iP[e]]) for e, k in enumerate(ids)}
        Q = {k: float(_FLOW_SCALE * z[self._iQ[e]]) for e, k in enumerate(ids)}
        l = {k: float(z[self._iL[e]]) for e, k in enumerate(ids)}
        v = {b: float(z[self._iV[n]]) for n, b in enumerate(prob.network.bus_ids)}
        return BranchFlowState(v=v, l=l, P=P, Q=Q, s=slack_injections(prob, P, Q))

    def objective(self, z: np.ndarray | None = None) -> float:
        z = self.z if z is None else z
        E = self.n_branches
        return float(self._cost[2 * E:3 * E] @ z[self._iL])

    # -- driver ------------------------------------------------------------
    def solve(self) -> OPFSolution:
        st = self.settings
        history = []
        best = (math.inf, self.z.copy(), math.inf, math.inf)
        stall = 0
        best_primal = math.inf
        window: list[float] = []
        status = SolveStatus.ITERATION_LIMIT
        primal = dual = math.inf
        for k in range(1, st.max_iter + 1):
            primal, dual = self.iterate()
            eps_pri, eps_dual = self.tolerances()
            if st.record_history:
                history.append((k, primal, dual, self.objective()))
            score = max(primal / eps_pri, dual / eps_dual)
            if score < best[0]:
                best = (score, self.z.copy(), primal, dual)
            if primal <= eps_pri and dual <= eps_dual:
                status = SolveStatus.CONVERGED
                break
            # stagnation above 1e3 x tolerance reads as infeasibility: the best
            # primal residual improved by under 10% over the last window.
            # Only counted once rho has stopped moving.
            best_primal = min(best_primal, primal)
            window.append(best_primal)
            settled = not st.adaptive_rho or k > st.adapt_until
            stall = stall + 1 if settled and primal > 1e3 * eps_pri else 0
            if len(window) > st.stall_window:
                window.pop(0)
                if stall >= st.stall_window and best_primal > 0.9 * window[0]:
                    status = SolveStatus.INFEASIBLE
                    break
            if st.adaptive_rho and k <= st.adapt_until and k % st.adapt_interval == 0:
                self._adapt_rho(primal, dual)
        if status is SolveStatus.CONVERGED:
            z = self.z
        else:
            _, z, primal, dual = best
        state = self.state_from(z)
        gaps = socp_gap(self.prob, state) if self.n_branches else {}
        return OPFSolution(
            state=state,
            objective=objective_loss(self.prob, state),
            status=status,
            iterations=self.iterations,
            primal_residual=primal,
            dual_residual=dual,
            max_socp_gap=max((abs(g) for g in gaps.values()), default=0.0),
            history=history,
        )


def solve_opf(prob: OPFProblem, settings: ADMMSettings | None = None) -> OPFSolution:
    """Minimise total line loss of one radial configuration by consensus ADMM."""
    return ConsensusADMM(prob, settings).solve()


# ---------------------------------------------------------------- oracles

def single_line_solution(r: float, x: float, p: float, q: float, v0: float = 1.0) -> dict:
    """Closed-form branch flow solution of one line feeding a ``p + iq`` load.

    With the sending-end voltage fixed, ``l v0 = (p + r l)^2 + (q + x l)^2``
    is quadratic in ``l``; the smaller root is the high-voltage solution.
    """
    a = r * r + x * x
    b = 2 * (p * r + q * x) - v0
    c = p * p + q * q
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ValueError("no real power flow solution (load beyond transfer limit)")
    l = 2 * c / (-b + math.sqrt(disc)) if c > 0 else 0.0
    P, Q = p + r * l, q + x * l
    v1 = v0 - 2 * (r * P + x * Q) + a * l
    return {"l": l, "P": P, "Q": Q, "v1": v1, "loss": r * l}


def _sweep(prob: OPFProblem, max_iter: int = 200000):
    """Least fixed point of ``l = (P^2 + Q^2) / v_sending`` by iteration from zero.

    With nonnegative loads and impedances the map is monotone in ``l``, so the
    iterates increase to the smallest fixed point, and every feasible ``l`` of
    the relaxation dominates it componentwise.
    """
    net = prob.network
    ids = prob.branch_ids
    E = len(ids)
    r = np.array([br.r for br in prob.branches])
    x = np.array([br.x for br in prob.branches])
    z2 = r * r + x * x
    send = [prob.sending[k] for k in ids]
    recv = [prob.receiving[k] for k in ids]
    parent_edge = {recv[e]: e for e in range(E)}
    up = np.array([parent_edge.get(send[e], -1) for e in range(E)])
    dem = [prob.demand(b) for b in recv]
    pd = np.array([d.real for d in dem])
    qd = np.array([d.imag for d in dem])
    v_slack = {b.id: b.v_set for b in net.slack_buses}
    l = np.zeros(E)
    for it in range(max_iter):
        P = pd + r * l
        Q = qd + x * l
        for e in range(E - 1, -1, -1):  # children come after parents
            if up[e] >= 0:
                P[up[e]] += P[e]
                Q[up[e]] += Q[e]
        v = np.empty(E)  # receiving-end voltage per branch
        vs = np.empty(E)
        for e in range(E):
            vs[e] = v_slack[send[e]] if up[e] < 0 else v[up[e]]
            v[e] = vs[e] - 2 * (r[e] * P[e] + x[e] * Q[e]) + z2[e] * l[e]
        if np.any(vs <= 0) or np.any(v <= 0):
            return None
        l_new = (P * P + Q * Q) / vs
        done = np.all(np.abs(l_new - l) <= 1e-15 * np.maximum(1.0, l_new))
        l = l_new
        if done:
            break
    else:
        raise OracleError("sweep did not converge")
    P = pd + r * l
    Q = qd + x * l
    for e in range(E - 1, -1, -1):
        if up[e] >= 0:
            P[up[e]] += P[e]
            Q[up[e]] += Q[e]
    volt = dict(v_slack)
    for e in range(E):
        vi = volt[send[e]]
        volt[recv[e]] = vi - 2 * (r[e] * P[e] + x[e] * Q[e]) + z2[e] * l[e]
    Pd = dict(zip(ids, P.tolist()))
    Qd = dict(zip(ids, Q.tolist()))
    return BranchFlowState(
        v={b: float(volt[b]) for b in net.bus_ids},
        l=dict(zip(ids, l.tolist())),
        P=Pd,
        Q=Qd,
        s=slack_injections(prob, Pd, Qd),
    )


def _sweep_certified(prob: OPFProblem) -> bool:
    if any(br.r < 0 or br.x < 0 for br in prob.branches):
        return False
    return all(p >= 0 and q >= 0 for p, q in prob.loads.values())


def _solution_from_state(prob, state, status, iterations=0) -> OPFSolution:
    gaps = socp_gap(prob, state) if prob.branches else {}
    return OPFSolution(
        state=state,
        objective=objective_loss(prob, state),
        status=status,
        iterations=iterations,
        primal_residual=0.0,
        dual_residual=0.0,
        max_socp_gap=max((abs(g) for g in gaps.values()), default=0.0),
    )


def _infeasible(prob: OPFProblem) -> OPFSolution:
    return _solution_from_state(prob, flat_state(prob), SolveStatus.INFEASIBLE)


def oracle_solve(prob: OPFProblem, method: str = "auto", max_buses: int = 12) -> OPFSolution:
    """Centralised reference solution of the same relaxed problem (small instances).

    ``method="sweep"`` uses the monotone fixed-point sweep, which is the exact
    optimum whenever loads and impedances are nonnegative and no upper voltage
    bound binds. ``method="cvxpy"`` hands the explicit cone program to an
    interior-point solver. ``"auto"`` prefers the sweep when it is certified.
    """
    if prob.network.n_buses > max_buses:
        raise OracleError(
            f"oracle limited to {max_buses} buses, problem has {prob.network.n_buses}"
        )
    if method not in ("auto", "sweep", "cvxpy"):
        raise ValueError(f"unknown oracle method {method!r}")
    if method == "cvxpy":
        return _cvxpy_solve(prob)
    certified = _sweep_certified(prob)
    if method == "auto" and not certified:
        return _cvxpy_solve(prob)
    state = _sweep(prob)
    if state is None:
        return _infeasible(prob)
    violations = check_limits(prob, state, tol=0.0)
    if any(v.kind == "over_voltage" for v in violations):
        if method == "auto":
            return _cvxpy_solve(prob)
        raise OracleError("sweep optimum not certified under a binding upper voltage bound")
    if violations and certified:
        return _infeasible(prob)
    return _solution_from_state(prob, state, SolveStatus.CONVERGED)


def _cvxpy_solve(prob: OPFProblem) -> OPFSolution:
    import cvxpy as cp

    net = prob.network
    ids = prob.branch_ids
    E = len(ids)
    n = net.n_buses
    bidx = net.bus_index
    if E == 0:
        return _solution_from_state(prob, flat_state(prob), SolveStatus.CONVERGED)
    v = cp.Variable(n)
    l = cp.Variable(E)
    P = cp.Variable(E)
    Q = cp.Variable(E)
    cons = [l >= 0]
    for b in net.buses:
        k = bidx(b.id)
        if b.is_slack:
            cons.append(v[k] == b.v_set)
        else:
            cons += [v[k] >= b.v_min, v[k] <= b.v_max]
            out = [e for e, k2 in enumerate(ids) if prob.sending[k2] == b.id]
            inn = [e for e, k2 in enumerate(ids) if prob.receiving[k2] == b.id]
            d = prob.demand(b.id)
            br_in = [prob.branches[e] for e in inn]
            cons.append(
                sum(P[e] for e in inn) - sum(br.r * l[e] for e, br in zip(inn, br_in))
                - sum(P[e] for e in out) == d.real
            )
            cons.append(
                sum(Q[e] for e in inn) - sum(br.x * l[e] for e, br in zip(inn, br_in))
                - sum(Q[e] for e in out) == d.imag
            )
    for e, br in enumerate(prob.branches):
        i, j = bidx(prob.sending[br.id]), bidx(prob.receiving[br.id])
        cons.append(v[j] == v[i] - 2 * (br.r * P[e] + br.x * Q[e]) + (br.r ** 2 + br.x ** 2) * l[e])
        cons.append(cp.quad_over_lin(cp.hstack([P[e], Q[e]]), v[i]) <= l[e])
        if np.isfinite(br.l_max):
            cons.append(l[e] <= br.l_max)
    r = np.array([br.r for br in prob.branches])
    problem = cp.Problem(cp.Minimize(r @ l), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if problem.status in ("infeasible", "infeasible_inaccurate"):
        return _infeasible(prob)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise OracleError(f"reference solver returned {problem.status}")
    Pd = dict(zip(ids, map(float, P.value)))
    Qd = dict(zip(ids, map(float, Q.value)))
    state = BranchFlowState(
        v={b.id: float(v.value[bidx(b.id)]) for b in net.buses},
        l=dict(zip(ids, map(float, l.value))),
        P=Pd,
        Q=Qd,
        s=slack_injections(prob, Pd, Qd),
    )
    return _solution_from_state(prob, state, SolveStatus.CONVERGED)
