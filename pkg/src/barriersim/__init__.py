"""Deterministic discrete-event simulator of a barrier-enabled flash IO
stack, with a crash-injection checker for storage-order and journal
consistency guarantees."""

from .engine import SimTime, Simulator, SimulationFault
from .profiles import DeviceConfig, RunConfig, UsageError, get_profile
from .workloads import SimResult, run_workload
from .report import Report, make_report

__all__ = [
    "SimTime", "Simulator", "SimulationFault",
    "DeviceConfig", "RunConfig", "UsageError", "get_profile",
    "SimResult", "run_workload", "Report", "make_report",
]

__version__ = "0.1.0"
