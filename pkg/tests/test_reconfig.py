import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from loadreconf.admm import (
    ADMMSettings,
    SolveStatus,
    oracle_solve,
    single_line_solution,
    solve_opf,
)
from loadreconf.bfm import OPFProblem, to_kw
from loadreconf.cli import read_loads_json as read_loads
from loadreconf.netmodel import SwitchConfiguration, is_radial
from loadreconf.reconfig import (
    BaselineNotSolvedError,
    ReconfigurationError,
    average_reduction,
    evaluate_configuration,
    format_pct,
    loss_reduction,
    reconfigure,
    round_half_up,
)


class TestAccounting:
    def test_examples(self):
        assert round_half_up(loss_reduction(54.2, 36.7)) == 32.29
        assert round_half_up(loss_reduction(39.4, 22.3)) == 43.40
        assert loss_reduction(12.5, 12.5) == 0.0

    def test_nonpositive_original(self):
        with pytest.raises(ValueError):
            loss_reduction(0.0, 1.0)

    def test_half_up(self):
        assert round_half_up(0.125) == 0.13
        assert round_half_up(2.675) == 2.68
        assert format_pct(4.0) == "4.00%"

    def test_average(self):
        assert average_reduction([17.5]) == 17.5
        assert average_reduction([(10.0, 5.0), 30.0]) == pytest.approx(40.0)
        with pytest.raises(ValueError):
            average_reduction([])

    @given(a=st.floats(0.1, 1e4), b=st.floats(0.1, 1e4))
    def test_reversal_identity(self, a, b):
        # R(a, b) = -(b / a) R(b, a) for R(a, b) = 100 (a - b) / a
        assert loss_reduction(a, b) == pytest.approx(-(b / a) * loss_reduction(b, a), rel=1e-9,
                                                     abs=1e-9)


def constant_solver(value):
    def solve(prob, settings):
        sol = oracle_solve(prob, max_buses=99)
        sol.objective = value
        return sol
    return solve


def failing_for(bits):
    def solve(prob, settings):
        sol = solve_opf(prob, settings)
        if prob.config.as_bits() == bits:
            sol.status = SolveStatus.ITERATION_LIMIT
        return sol
    return solve


class TestEvaluate:
    def test_zero_load(self, desk8):
        loads = {b: (0.0, 0.0) for b in desk8.default_loads()}
        loss, sol = evaluate_configuration(desk8, loads, desk8.baseline_configuration())
        assert sol.converged
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_single_line_loss_in_kw(self, single_line):
        loss, _ = evaluate_configuration(single_line, None, SwitchConfiguration(()))
        ref = single_line_solution(0.01, 0.01, 0.1, 0.05)["loss"]
        assert loss == pytest.approx(to_kw(OPFProblem(single_line), ref), rel=1e-6)


class TestReconfigure:
    def test_baseline_already_optimal(self, desk16):
        res = reconfigure(desk16)
        assert res.best_config == res.baseline_config
        assert res.reduction_pct == 0.0

    def test_spike_moves_the_optimum(self, desk16, data_dir):
        res = reconfigure(desk16, read_loads(data_dir / "desk16_spike_loads.json"))
        assert res.best_config != res.baseline_config
        assert res.reduction_pct > 0
        usable = [e for e in res.per_config if e.status is SolveStatus.CONVERGED]
        assert len(usable) == len(res.per_config) == 5
        assert all(res.best_loss_kw <= e.loss_kw for e in usable)
        assert is_radial(desk16, res.best_config)
        assert res.best.max_socp_gap <= 1e-5

    def test_worker_count_does_not_change_result(self, desk8, data_dir):
        loads = read_loads(data_dir / "desk8_spike_loads.json")
        assert reconfigure(desk8, loads, n_jobs=1).to_json() == \
            reconfigure(desk8, loads, n_jobs=2).to_json()

    def test_non_converged_config_is_listed_but_skipped(self, desk8, data_dir):
        loads = read_loads(data_dir / "desk8_spike_loads.json")
        winner = reconfigure(desk8, loads).best_config.as_bits()
        res = reconfigure(desk8, loads, solver=failing_for(winner))
        failed = [e for e in res.per_config if e.config.as_bits() == winner]
        assert failed[0].status is SolveStatus.ITERATION_LIMIT
        assert res.best_config.as_bits() != winner

    def test_ties_go_to_smallest_vector(self, desk8):
        res = reconfigure(desk8, solver=constant_solver(1e-3))
        assert res.best_config == min((e.config for e in res.per_config), key=lambda c: c.states)

    def test_baseline_must_be_radial(self, desk16):
        with pytest.raises(ReconfigurationError, match="not radial"):
            reconfigure(desk16, baseline_cfg=desk16.all_closed())

    def test_unsolvable_baseline(self, desk8):
        heavy = {b: (p * 50, q * 50) for b, (p, q) in desk8.default_loads().items()}
        with pytest.raises(BaselineNotSolvedError, match="baseline configuration 1001"):
            reconfigure(desk8, heavy, settings=ADMMSettings(max_iter=3000))

    def test_json_and_table(self, desk8, data_dir):
        res = reconfigure(desk8, read_loads(data_dir / "desk8_spike_loads.json"))
        data = json.loads(res.to_json())
        assert data["best_config"] == res.best_config.as_bits()
        assert data["opened_switches"] == res.opened_switches
        assert len(data["per_config"]) == 5
        table = res.table("spike")
        assert "Opened switches" in table and ", ".join(res.opened_switches) in table
        assert format_pct(res.reduction_pct) in table


def test_matches_exhaustive_oracle(desk8, data_dir):
    loads = read_loads(data_dir / "desk8_spike_loads.json")
    res = reconfigure(desk8, loads)
    exhaustive = {
        e.config: oracle_solve(OPFProblem(desk8, e.config, loads)).objective for e in res.per_config
    }
    assert res.best_config == min(exhaustive, key=exhaustive.get)
