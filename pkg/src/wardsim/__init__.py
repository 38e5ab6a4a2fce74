"""wardsim: a deterministic simulator of a warden hypervisor deployment.

The simulated stack keeps an untrusted guest workload inside structural
containment: unreachable hypervisor memory, locked execute-only code, broker
mediated IO with a bijective audit trail, throttled interrupts, a six-level
one-way isolation ladder with quorum-gated relaxations, watchdogged heartbeats,
attestation-gated model loading, and refusal of warden-to-warden federation.
"""
from .common import Clock, OpResult
from .events import EventLog, EventRecord
from .isolation import IsolationLevel
from .scenario import Scenario, default_scenario, load_scenario, workload_scenario
from .sim import RunReport, Simulation, replay_log

__version__ = "0.1.0"

__all__ = [
    "Clock", "OpResult", "EventLog", "EventRecord", "IsolationLevel",
    "Scenario", "default_scenario", "load_scenario", "workload_scenario",
    "RunReport", "Simulation", "replay_log", "__version__",
]
