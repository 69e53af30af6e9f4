"""defsim: deterministic multi-agent cyber-defense simulation.

Autonomous blue agents sense, identify world state, plan, select, and
execute defensive actions against scripted red agents inside a simulated
vehicle network with contested communications.
"""

from .harness import RunMetrics, RunResult, diff_trace, run, run_file
from .kernel import Simulation, Topology, load_topology
from .scenario import Scenario, load_scenario

__all__ = [
    "RunMetrics",
    "RunResult",
    "Scenario",
    "Simulation",
    "Topology",
    "diff_trace",
    "load_scenario",
    "load_topology",
    "run",
    "run_file",
]

__version__ = "0.1.0"
