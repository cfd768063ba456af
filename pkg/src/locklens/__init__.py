"""locklens: record, replay, and de-contend multithreaded lock usage.

Pipeline: simulate a workload into a trace, detect unnecessary lock
contention pairs, transform the trace so only truly conflicting sections
still exclude each other, replay both under order-pinning policies, and
report the time each contention pair cost, fused and ranked.
"""

from .errors import LockLensError
from .model import (
    CriticalSection,
    Trace,
    TraceEvent,
    extract_critical_sections,
    parse_trace,
    serialize_trace,
    slice_trace,
)
from .workload import WorkloadProgram, parse_workload
from .engine import POLICIES, ReplayResult, record, replay, replay_many
from .detect import Classifier, DetectResult, UlcpPair, classify_pair, detect_all
from .transform import Topology, LocksetPlan, RaceReport, transform_trace, check_transform_races
from .report import build_report, report_from_workload, sweep_report, render_text

__version__ = "0.1.0"

__all__ = [
    "LockLensError",
    "Trace",
    "TraceEvent",
    "CriticalSection",
    "parse_trace",
    "serialize_trace",
    "extract_critical_sections",
    "slice_trace",
    "WorkloadProgram",
    "parse_workload",
    "POLICIES",
    "ReplayResult",
    "record",
    "replay",
    "replay_many",
    "Classifier",
    "DetectResult",
    "UlcpPair",
    "classify_pair",
    "detect_all",
    "Topology",
    "LocksetPlan",
    "RaceReport",
    "transform_trace",
    "check_transform_races",
    "build_report",
    "report_from_workload",
    "sweep_report",
    "render_text",
    "__version__",
]
