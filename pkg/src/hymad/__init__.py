"""Trace-driven simulator for group-based hybrid DTN/MANET routing."""
from .engine import RunResult, SimConfig, WorkloadSpec, generate_workload, run, run_sweep
from .groups import GroupConfig, GroupView, run_group_rounds
from .routing import Message, ProtocolConfig, copies_to_transfer, epidemic_oracle
from .trace import (AccordionParams, ContactEvent, ContactTrace, TopologySnapshot,
                    compute_trace_stats, generate_accordion_trace, parse_contact_trace, snapshot)

__version__ = "0.1.0"
