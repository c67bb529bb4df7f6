"""Short-term load forecasting and loss-minimising reconfiguration of radial feeders."""

from .admm import ADMMSettings, OPFSolution, SolveStatus, oracle_solve, solve_opf
from .bfm import BranchFlowState, OPFProblem
from .forecast import (
    LoadSeries,
    WindowSpec,
    build_windows,
    evaluate,
    mape,
    nrmse,
    read_load_csv,
    sliding_forecast,
)
from .hyperopt import GridSpec, PSOSettings, TwoStepSVRSearch, optimize_hyperparams
from .netmodel import (
    Network,
    SwitchConfiguration,
    enumerate_radial_configurations,
    is_radial,
    load_network,
)
from .reconfig import ReconfigResult, average_reduction, loss_reduction, reconfigure
from .svr import EpsilonSVR, Hyperparams

__version__ = "0.1.0"

__all__ = [
    "ADMMSettings", "OPFSolution", "SolveStatus", "oracle_solve", "solve_opf",
    "BranchFlowState", "OPFProblem",
    "LoadSeries", "WindowSpec", "build_windows", "evaluate", "mape", "nrmse",
    "read_load_csv", "sliding_forecast",
    "GridSpec", "PSOSettings", "TwoStepSVRSearch", "optimize_hyperparams",
    "Network", "SwitchConfiguration", "enumerate_radial_configurations", "is_radial",
    "load_network",
    "ReconfigResult", "average_reduction", "loss_reduction", "reconfigure",
    "EpsilonSVR", "Hyperparams",
]
