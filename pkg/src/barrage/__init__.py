"""Analytical modeling, simulation, and optimization of unicast transport
through a relay chain using cooperative barrage flooding.

The package models a line of nodes (source buffer, interior relays,
destination buffer) flooding packets under Rayleigh fading: link outages in
closed form, one absorbing chain per packet, a frame-pipeline fixed point
for interference between simultaneously active packets, a transport-capacity
optimizer over (rate, relays, frame length), and an independent protocol
simulator used as the correctness oracle throughout.
"""

from .errors import (
    BarrageError,
    ConvergenceError,
    NumericalError,
    StateSpaceCapError,
)
from .linkmodel import (
    ChannelParams,
    LinkScenario,
    closed_form_outage,
    monte_carlo_outage,
    resolve_gain_ties,
)
from .markov import (
    AbsorptionResult,
    InterferenceField,
    NodeState,
    SlotTransitionSet,
    StateSpace,
    TransmitProfile,
    absorb,
    build_transition_set,
    debug_dump,
    enumerate_states,
    single_packet_analysis,
    slot_transition,
    transmit_profile,
)
from .montecarlo import PacketRecord, SimConfig, SimReport, simulate, write_packet_trace
from .optimizer import (
    CapacityEvaluator,
    CapacityResult,
    DesignPoint,
    coordinate_search,
    evaluate_point,
    optimize,
    rate_to_threshold,
    transport_capacity,
    write_evaluation_log,
)
from .pipeline import (
    PipelineResult,
    TraceRow,
    active_packet_count,
    build_interference_field,
    iterate_fixed_point,
    write_trace_csv,
)
from .topology import PathGainTable, Topology, build_line_topology, path_gain_table

__version__ = "0.1.0"

__all__ = [
    "BarrageError",
    "ConvergenceError",
    "NumericalError",
    "StateSpaceCapError",
    "ChannelParams",
    "LinkScenario",
    "closed_form_outage",
    "monte_carlo_outage",
    "resolve_gain_ties",
    "AbsorptionResult",
    "InterferenceField",
    "NodeState",
    "SlotTransitionSet",
    "StateSpace",
    "TransmitProfile",
    "absorb",
    "build_transition_set",
    "debug_dump",
    "enumerate_states",
    "single_packet_analysis",
    "slot_transition",
    "transmit_profile",
    "PacketRecord",
    "SimConfig",
    "SimReport",
    "simulate",
    "write_packet_trace",
    "CapacityEvaluator",
    "CapacityResult",
    "DesignPoint",
    "coordinate_search",
    "evaluate_point",
    "optimize",
    "rate_to_threshold",
    "transport_capacity",
    "write_evaluation_log",
    "PipelineResult",
    "TraceRow",
    "active_packet_count",
    "build_interference_field",
    "iterate_fixed_point",
    "write_trace_csv",
    "PathGainTable",
    "Topology",
    "build_line_topology",
    "path_gain_table",
    "__version__",
]
