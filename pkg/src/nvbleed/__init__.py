"""Deterministic multi-GPU interconnect simulator and attack toolkit.

The package models an NVLink-style point-to-point GPU interconnect at
packet-schedule granularity and reproduces two information leaks that
shared links exhibit: transfer-timing contention, and per-slot traffic
counters readable by any local process.  On top of the simulator sit the
attacks those leaks enable — two cooperative covert channels, workload
fingerprinting from attacker-observable traces (applications, rendered
scene content, and victims in a neighboring VM), mitigation studies, and
DNN architecture extraction from model-parallel transfer timing.
"""

__version__ = "0.1.0"

from .exceptions import (
    AnalysisError,
    CalibrationError,
    CountersDisabledError,
    HandshakeError,
    NVBleedError,
    SimulationError,
    ValidationError,
)
from .topo import (
    PROFILE_NAMES,
    TOPOLOGY_PRESETS,
    PlatformProfile,
    Topology,
    build_topology,
    get_profile,
)
from .engine import (
    Engine,
    NopLoop,
    ProfilerStart,
    ProfilerStop,
    ReadCounters,
    RegisterProfiler,
    SimProcess,
    Sleep,
    SleepUntil,
    Transfer,
)
from .link import calibrate_profile, schedule_transfer, transfer_time_ns
from .covert import (
    PROTOCOLS,
    evaluate_channel,
    handshake,
    levenshtein,
    run_channel,
    sweep_channels,
)
from .sidechan import (
    SCENARIOS,
    Trace,
    collect_scenario,
    cross_vm_window_sweep,
    evaluate_traces,
    fingerprint_experiment,
    mitigation_sweep,
    window_stats,
)
from .extract import (
    TransferEvent,
    collect_model_trace,
    extract_architecture,
    infer_conv_candidates,
    infer_fc,
    infer_pool_candidates,
)

__all__ = [
    "__version__",
    # errors
    "NVBleedError", "ValidationError", "SimulationError",
    "CountersDisabledError", "CalibrationError", "HandshakeError",
    "AnalysisError",
    # platform and topology
    "PROFILE_NAMES", "TOPOLOGY_PRESETS", "PlatformProfile", "Topology",
    "build_topology", "get_profile",
    # engine
    "Engine", "SimProcess", "Transfer", "Sleep", "SleepUntil", "NopLoop",
    "RegisterProfiler", "ProfilerStart", "ProfilerStop", "ReadCounters",
    # link model
    "schedule_transfer", "transfer_time_ns", "calibrate_profile",
    # covert channels
    "PROTOCOLS", "run_channel", "evaluate_channel", "sweep_channels",
    "handshake", "levenshtein",
    # fingerprinting
    "SCENARIOS", "Trace", "collect_scenario", "evaluate_traces",
    "fingerprint_experiment", "cross_vm_window_sweep", "mitigation_sweep",
    "window_stats",
    # architecture extraction
    "TransferEvent", "collect_model_trace", "extract_architecture",
    "infer_fc", "infer_conv_candidates", "infer_pool_candidates",
]
