"""Exhaustive minimum-loss reconfiguration over radial switch states."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Sequence

from .admm import ADMMSettings, OPFSolution, SolveStatus, solve_opf
from .bfm import OPFProblem, to_kw
from .netmodel import (
    DEFAULT_SWITCH_CAP,
    Network,
    SwitchConfiguration,
    enumerate_radial_configurations,
    is_radial,
)
from .parallel import parallel_map

Solver = Callable[[OPFProblem, ADMMSettings], OPFSolution]


class ReconfigurationError(RuntimeError):
    pass


class BaselineNotSolvedError(ReconfigurationError):
    """The baseline configuration's OPF did not converge."""


@dataclass(frozen=True)
class ConfigEvaluation:
    config: SwitchConfiguration
    status: SolveStatus
    loss_kw: float
    max_socp_gap: float
    iterations: int
    opened: tuple[str, ...]

    @property
    def usable(self) -> bool:
        return self.status is SolveStatus.CONVERGED and math.isfinite(self.loss_kw)

    def to_dict(self) -> dict:
        return {
            "config": self.config.as_bits(),
            "opened": list(self.opened),
            "status": self.status.value,
            "loss_kw": _num(self.loss_kw),
            "max_socp_gap": _num(self.max_socp_gap),
            "iterations": self.iterations,
        }


@dataclass
class ReconfigResult:
    baseline_config: SwitchConfiguration
    best_config: SwitchConfiguration
    baseline_loss_kw: float
    best_loss_kw: float
    reduction_pct: float
    opened_switches: list[str]
    per_config: list[ConfigEvaluation] = field(default_factory=list)

    @property
    def best(self) -> ConfigEvaluation:
        return next(e for e in self.per_config if e.config == self.best_config)

    def to_dict(self) -> dict:
        return {
            "baseline_config": self.baseline_config.as_bits(),
            "best_config": self.best_config.as_bits(),
            "baseline_loss_kw": _num(self.baseline_loss_kw),
            "best_loss_kw": _num(self.best_loss_kw),
            "reduction_pct": _num(self.reduction_pct),
            "opened_switches": list(self.opened_switches),
            "per_config": [e.to_dict() for e in self.per_config],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, scenario: str = "") -> str:
        """One-row summary: original loss, new loss, opened switches, reduction."""
        header = ("Scenario", "Original P_Loss", "New P_Loss", "Opened switches", "Loss Reduction")
        row = (
            scenario or "-",
            f"{self.baseline_loss_kw:.1f} kW",
            f"{self.best_loss_kw:.1f} kW",
            ", ".join(self.opened_switches) or "none",
            format_pct(self.reduction_pct),
        )
        widths = [max(len(h), len(c)) for h, c in zip(header, row)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt.format(*header), rule, fmt.format(*row)])


def _num(x: float):
    return float(x) if math.isfinite(x) else None


def evaluate_configuration(
    net: Network,
    loads: dict[int, tuple[float, float]] | None,
    cfg: SwitchConfiguration,
    settings: ADMMSettings | None = None,
    solver: Solver = solve_opf,
) -> tuple[float, OPFSolution]:
    """Solve the OPF for one radial configuration; returns ``(loss_kw, solution)``.

    The loss is ``inf`` unless the solve converged.
    """
    prob = OPFProblem(net, cfg, loads)
    sol = solver(prob, settings or ADMMSettings())
    loss = to_kw(prob, sol.objective) if sol.converged else math.inf
    return loss, sol


class _EvalTask:
    def __init__(self, net, loads, settings, solver):
        self.net, self.loads, self.settings, self.solver = net, loads, settings, solver

    def __call__(self, cfg: SwitchConfiguration) -> ConfigEvaluation:
        loss, sol = evaluate_configuration(self.net, self.loads, cfg, self.settings, self.solver)
        return ConfigEvaluation(
            config=cfg,
            status=sol.status,
            loss_kw=loss,
            max_socp_gap=sol.max_socp_gap,
            iterations=sol.iterations,
            opened=tuple(self.net.opened_switches(cfg)),
        )


def reconfigure(
    net: Network,
    loads: dict[int, tuple[float, float]] | None = None,
    baseline_cfg: SwitchConfiguration | None = None,
    settings: ADMMSettings | None = None,
    n_jobs: int = 1,
    solver: Solver = solve_opf,
    cap: int = DEFAULT_SWITCH_CAP,
) -> ReconfigResult:
    """Evaluate every radial configuration and pick the one with the least loss.

    Non-converged configurations stay in ``per_config`` but never win. Equal
    losses go to the lexicographically smallest switch vector.
    """
    baseline_cfg = baseline_cfg or net.baseline_configuration()
    if not is_radial(net, baseline_cfg):
        raise ReconfigurationError(f"baseline configuration {baseline_cfg.as_bits()} is not radial")
    configs = enumerate_radial_configurations(net, cap=cap, n_jobs=n_jobs)
    if not configs:
        raise ReconfigurationError("network has no radial switch configuration")
    task = _EvalTask(net, loads, settings, solver)
    evaluations = parallel_map(task, configs, n_jobs=n_jobs)

    base = next(e for e in evaluations if e.config == baseline_cfg)
    if not base.usable:
        raise BaselineNotSolvedError(
            f"baseline configuration {baseline_cfg.as_bits()} "
            f"(open: {', '.join(base.opened) or 'none'}) did not solve: {base.status.value}"
        )
    usable = [e for e in evaluations if e.usable]
    best = min(usable, key=lambda e: (e.loss_kw, e.config.states))
    return ReconfigResult(
        baseline_config=baseline_cfg,
        best_config=best.config,
        baseline_loss_kw=base.loss_kw,
        best_loss_kw=best.loss_kw,
        reduction_pct=loss_reduction(base.loss_kw, best.loss_kw) if base.loss_kw > 0 else 0.0,
        opened_switches=list(best.opened),
        per_config=evaluations,
    )


def loss_reduction(original_kw: float, new_kw: float) -> float:
    """Percentage loss reduction ``100 (original - new) / original``, unrounded."""
    if not original_kw > 0:
        raise ValueError(f"original loss must be positive, got {original_kw}")
    return 100.0 * (original_kw - new_kw) / original_kw


def average_reduction(rows: Iterable[float | Sequence[float]]) -> float:
    """Mean reduction over rows given as percentages or ``(original, new)`` pairs."""
    values = []
    for row in rows:
        if isinstance(row, (int, float)):
            values.append(float(row))
        else:
            original, new = row
            values.append(loss_reduction(original, new))
    if not values:
        raise ValueError("no rows to average")
    return math.fsum(values) / len(values)


def round_half_up(value: float, digits: int = 2) -> float:
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def format_pct(value: float) -> str:
    return f"{round_half_up(value):.2f}%"
