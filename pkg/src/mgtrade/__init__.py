"""Cooperative energy trading between interconnected microgrids.

Each microgrid schedules wind, grid exchange, storage and flexible load
against its own costs; a negotiation layer then finds pairwise energy
trades that minimize the joint operating cost and splits the resulting
savings through a bargaining-fair payment round.
"""

from .benchmark import BenchmarkResult, solve_benchmark, solve_benchmark_all
from .clearinghouse import RunOptions, RunReport, report_to_dict, run_algorithm1
from .domain import (
    DimensionError,
    GridPrices,
    MicrogridParams,
    PaymentMatrix,
    Scenario,
    ScenarioError,
    Schedule,
    StorageParams,
    TimeGrid,
    TradeMatrix,
    UserParams,
    Violation,
    operating_cost,
    validate,
)
from .oracle import Certificate, CentralizedSolution, centralized_p1, certify
from .payment import NoBargainError, P2Result, Surplus, nbs_payment_oracle, run_p2
from .qp import QpProblem, QpSolution, solve_qp
from .scenario_io import generate_scenario, load_scenario, save_scenario
from .trading import P1Result, run_p1
from .wind import PowerCurve, ingest_speeds, power_fraction

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "Certificate",
    "CentralizedSolution",
    "DimensionError",
    "GridPrices",
    "MicrogridParams",
    "NoBargainError",
    "P1Result",
    "P2Result",
    "PaymentMatrix",
    "PowerCurve",
    "QpProblem",
    "QpSolution",
    "RunOptions",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "Schedule",
    "StorageParams",
    "Surplus",
    "TimeGrid",
    "TradeMatrix",
    "UserParams",
    "Violation",
    "centralized_p1",
    "certify",
    "generate_scenario",
    "ingest_speeds",
    "load_scenario",
    "nbs_payment_oracle",
    "operating_cost",
    "power_fraction",
    "report_to_dict",
    "run_algorithm1",
    "run_p1",
    "run_p2",
    "save_scenario",
    "solve_benchmark",
    "solve_benchmark_all",
    "solve_qp",
    "validate",
    "__version__",
]
