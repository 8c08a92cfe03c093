"""Energy/utility optimal operating points for slotted random-access networks."""
from ra_numopt.kernels import BACKEND
from ra_numopt.network import (
    DegenerateInstanceError,
    GenConfig,
    ProbAssignment,
    RateVector,
    Session,
    SessionSet,
    Topology,
    generate_sessions,
    generate_topology,
    link_throughput,
    mac_utility,
    total_energy,
    transport_utility,
)
from ra_numopt.mac import TradeoffWeights, brute_force_mac, pareto_sweep_mac, solve_mac
from ra_numopt.crosslayer import SolverConfig, centralized_solve, distributed_solve, dual_value

__all__ = [
    "BACKEND",
    "DegenerateInstanceError",
    "GenConfig",
    "ProbAssignment",
    "RateVector",
    "Session",
    "SessionSet",
    "SolverConfig",
    "Topology",
    "TradeoffWeights",
    "brute_force_mac",
    "centralized_solve",
    "distributed_solve",
    "dual_value",
    "generate_sessions",
    "generate_topology",
    "link_throughput",
    "mac_utility",
    "pareto_sweep_mac",
    "solve_mac",
    "total_energy",
    "transport_utility",
]
__version__ = "0.1.0"
