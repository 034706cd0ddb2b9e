from .checks import check_liveness, check_safety, fairness_report
from .engine import SimResult, Simulation, simulate
from .metrics import Metrics, compute_metrics, metrics_from_trace, run
from .scenario import Backend, ConfigError, Policy, Scenario, load_matrix, load_scenario
