"""Absorbing-chain model of one packet's life inside the relay region.

A packet's state is the vector of per-node decode states over
``[source, relay_1..relay_N, destination]``: 0 (not decoded), 1 (just
decoded, transmits next slot), 2 (done, relayed once already).  The chain
absorbs either when the destination decodes (success) or when nobody holds
a fresh copy (outage); the worst case lasts N + 1 slots.  Transition
probabilities come from the closed-form link outage, so the chain is
already averaged over fading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _engine
from ._engine import InterferenceField  # re-exported
from .errors import NumericalError
from .linkmodel import ChannelParams, LinkScenario, closed_form_outage
from .topology import PathGainTable, Topology, path_gain_table

__all__ = [
    "NodeState",
    "StateSpace",
    "SlotTransitionSet",
    "AbsorptionResult",
    "TransmitProfile",
    "InterferenceField",
    "enumerate_states",
    "slot_transition",
    "build_transition_set",
    "absorb",
    "transmit_profile",
    "single_packet_analysis",
    "debug_dump",
]


class NodeState(IntEnum):
    NOT_DECODED = 0
    JUST_DECODED = 1
    DONE = 2


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Reachable transient states (discovery order, initial state first) and
    the distinct absorbing state vectors they feed."""

    n_relays: int
    transient_states: tuple[tuple[int, ...], ...]
    outage_cbr_states: frozenset[tuple[int, ...]]
    success_cbr_states: frozenset[tuple[int, ...]]
    index: dict[tuple[int, ...], int] = field(repr=False)

    @property
    def n_transient(self) -> int:
        return len(self.transient_states)

    @property
    def n_nodes(self) -> int:
        return self.n_relays + 2

    @property
    def tau_max(self) -> int:
        return self.n_relays + 1


@dataclass
class SlotTransitionSet:
    """Per-relative-slot canonical blocks of the chain: transient block Q
    (sparse, t x t) and absorbing block R (t x 2, columns outage/success)."""

    n_relays: int
    q: list
    r: list[np.ndarray]

    @property
    def tau_max(self) -> int:
        return len(self.q)

    @property
    def n_transient(self) -> int:
        return self.r[0].shape[0]

    def is_homogeneous(self) -> bool:
        q0, r0 = self.q[0], self.r[0]
        for q, r in zip(self.q[1:], self.r[1:]):
            if q is q0 and r is r0:
                continue
            if not np.array_equal(r, r0):
                return False
            if (q != q0).nnz != 0:
                return False
        return True


@dataclass
class AbsorptionResult:
    """Absorption probabilities per starting state (columns outage/success),
    the region outage/success probabilities from the initial state, and the
    expected packet lifetime in slots."""

    b: np.ndarray
    epsilon_cbr: float
    success_prob: float
    expected_slots: float


@dataclass
class TransmitProfile:
    """Probability that each node transmits the tracked packet in each of its
    relative slots; rows are nodes, columns are slots 1..N+1."""

    p: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.p.shape[0]

    @property
    def tau_max(self) -> int:
        return self.p.shape[1]


def enumerate_states(n_relays: int, max_states: int = _engine.MAX_STATES_DEFAULT) -> StateSpace:
    """Breadth-first closure of reachable states from the injection state.

    The initial state has only the source holding a fresh copy.  Absorbing
    vectors are collected as distinct sets so the aggregation into the two
    absorbing meta-states stays auditable.
    """
    if n_relays < 0:
        raise ValueError("n_relays must be non-negative")
    cache = _engine.chain_cache(n_relays, max_states)
    outage: set[tuple[int, ...]] = set()
    success: set[tuple[int, ...]] = set()
    for state in cache.states:
        recv = [j for j, v in enumerate(state) if v == NodeState.NOT_DECODED]
        base = [2 if v in (1, 2) else 0 for v in state]
        for mask in range(1 << len(recv)):
            nxt = base.copy()
            for b, j in enumerate(recv):
                if mask >> b & 1:
                    nxt[j] = 1
            tup = tuple(nxt)
            cls = _engine.classify_state(tup)
            if cls == "outage":
                outage.add(tup)
            elif cls == "success":
                success.add(tup)
    return StateSpace(
        n_relays=n_relays,
        transient_states=tuple(cache.states),
        outage_cbr_states=frozenset(outage),
        success_cbr_states=frozenset(success),
        index=dict(cache.index),
    )


def slot_transition(
    state,
    slot: int,
    gains: PathGainTable,
    params: ChannelParams,
    interference: InterferenceField | None = None,
):
    """All successors of one transient state during one relative slot.

    Every node that just decoded transmits and moves to done; every undecoded
    node decodes independently with probability one minus its link outage,
    where the barraging set is the current transmitters and the interferer
    list comes from the field (entries from barraging nodes are excluded).
    Returns ``[(successor, probability), ...]`` covering all outcomes.
    """
    state = tuple(int(v) for v in state)
    transmitters = [i for i, v in enumerate(state) if v == NodeState.JUST_DECODED]
    if state[-1] == NodeState.JUST_DECODED:
        transmitters.remove(len(state) - 1)
    if not transmitters:
        raise ValueError("state has no transmitting node; it is absorbing, not transient")
    receivers = [j for j, v in enumerate(state) if v == NodeState.NOT_DECODED]
    eps = {}
    for j in receivers:
        barrage = tuple(gains.omega[k, j] for k in transmitters)
        entries = ()
        if interference is not None:
            ids, om, probs = interference.at(j, slot)
            keep = ~np.isin(ids, transmitters)
            entries = tuple(zip(om[keep], probs[keep]))
        scenario = LinkScenario(barrage_gains=barrage, interferers=entries)
        eps[j] = closed_form_outage(scenario, params)
    base = [2 if v in (1, 2) else 0 for v in state]
    out = []
    for mask in range(1 << len(receivers)):
        nxt = base.copy()
        prob = 1.0
        for b, j in enumerate(receivers):
            if mask >> b & 1:
                nxt[j] = 1
                prob *= 1.0 - eps[j]
            else:
                prob *= eps[j]
        out.append((tuple(nxt), prob))
    return out


def build_transition_set(
    space: StateSpace,
    gains: PathGainTable,
    params: ChannelParams,
    interference: InterferenceField | None = None,
) -> SlotTransitionSet:
    """Assemble the per-slot canonical blocks over the whole state space.

    Rows of ``[Q | R]`` sum to one; a violation beyond 1e-9 raises, since it
    can only come from an internal inconsistency.  The final slot's blocks
    are left untouched -- the lifetime cap is applied during absorption so a
    homogeneous set stays homogeneous.
    """
    geom = _engine.table_geometry(gains)
    if geom.cache.t != space.n_transient:
        raise ValueError("state space does not match the gain table size")
    ctx = _engine.EvalContext(geom, params.beta, params.gamma)
    qs, rs = _engine.build_blocks(ctx, interference)
    return SlotTransitionSet(n_relays=space.n_relays, q=qs, r=rs)


def absorb(transitions: SlotTransitionSet) -> AbsorptionResult:
    """Absorption probabilities of the slot-indexed, lifetime-capped chain.

    Starting mass propagates forward through the per-slot blocks; transient
    mass remaining after the final slot is classified as outage.  When every
    slot shares the same blocks the result is checked against the
    fundamental-matrix form ``B = (I - Q)^-1 R`` (skipped above
    ``FUNDAMENTAL_CHECK_LIMIT`` states, where the dense solve is not worth
    its cost).
    """
    t = transitions.n_transient
    tau_max = transitions.tau_max
    # backward accumulation of the forward-propagated absorption sum; the
    # terminal column routes capped mass to outage
    b = np.zeros((t, 2))
    b[:, 0] = 1.0
    for q, r in zip(reversed(transitions.q), reversed(transitions.r)):
        b = r + q @ b
    row_sums = b.sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > 1e-9:
        raise NumericalError("absorption rows do not sum to one")

    pi = np.zeros(t)
    pi[0] = 1.0
    expected = 0.0
    for tau, (q, r) in enumerate(zip(transitions.q, transitions.r), start=1):
        absorbed = float(pi @ r[:, 0] + pi @ r[:, 1])
        expected += tau * absorbed
        pi = q.T @ pi
    expected += tau_max * float(pi.sum())

    if transitions.is_homogeneous() and t <= _engine.FUNDAMENTAL_CHECK_LIMIT:
        q0 = transitions.q[0].toarray()
        try:
            b_fund = np.linalg.solve(np.eye(t) - q0, transitions.r[0])
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular fundamental matrix") from exc
        if np.max(np.abs(b_fund - b)) > 1e-9:
            raise NumericalError(
                "forward propagation disagrees with the fundamental matrix"
            )

    return AbsorptionResult(
        b=b,
        epsilon_cbr=float(b[0, 0]),
        success_prob=float(b[0, 1]),
        expected_slots=expected,
    )


def transmit_profile(space: StateSpace, transitions: SlotTransitionSet) -> TransmitProfile:
    """Per-node, per-slot transmit probabilities of the tracked packet.

    ``p[i, tau-1]`` sums the forward state distribution over transient states
    where node ``i`` just decoded; the source transmits exactly in slot 1 and
    the destination never transmits.
    """
    t = space.n_transient
    n_nodes = space.n_nodes
    members = np.zeros((n_nodes, t))
    for idx, state in enumerate(space.transient_states):
        for node, v in enumerate(state):
            if v == NodeState.JUST_DECODED and node != n_nodes - 1:
                members[node, idx] = 1.0
    pi = np.zeros(t)
    pi[0] = 1.0
    p = np.zeros((n_nodes, transitions.tau_max))
    for tau, q in enumerate(transitions.q, start=1):
        p[:, tau - 1] = members @ pi
        pi = q.T @ pi
    return TransmitProfile(p=p)


def single_packet_analysis(
    topology: Topology,
    params: ChannelParams,
    *,
    clamp_near_field: bool = False,
    interference: InterferenceField | None = None,
    max_states: int = _engine.MAX_STATES_DEFAULT,
):
    """Outage probability and transmit profile of one isolated packet.

    This is the interference-free baseline the frame pipeline must reduce to
    when frames are long enough that packets never overlap; both run the same
    forward pass, so the reduction is exact.
    """
    geom = _engine.line_geometry(
        topology.relay_count,
        params.alpha,
        topology.cbr_length,
        params.d0,
        clamp_near_field,
        max_states,
    )
    ctx = _engine.EvalContext(geom, params.beta, params.gamma)
    light = geom.cache.t > _engine.BLOCK_STATE_LIMIT
    epsilon, profile, _, _ = _engine.forward_pass(ctx, interference, light=light)
    return float(epsilon), TransmitProfile(p=profile)


def debug_dump(space: StateSpace, transitions: SlotTransitionSet | None = None) -> str:
    """JSON snapshot of the state space and (optionally) the blocks.

    State vectors are rendered as digit strings like ``"1000"``; blocks are
    dense row-major arrays, so this is meant for small chains.
    """
    if space.n_transient > 4096:
        raise ValueError("debug dump is limited to 4096 transient states")
    doc = {
        "n_relays": space.n_relays,
        "transient_states": ["".join(str(v) for v in s) for s in space.transient_states],
        "outage_cbr_states": sorted(
            "".join(str(v) for v in s) for s in space.outage_cbr_states
        ),
        "success_cbr_states": sorted(
            "".join(str(v) for v in s) for s in space.success_cbr_states
        ),
    }
    if transitions is not None:
        doc["slots"] = [
            {
                "slot": tau,
                "q": np.asarray(q.todense()).tolist(),
                "r": r.tolist(),
            }
            for tau, (q, r) in enumerate(zip(transitions.q, transitions.r), start=1)
        ]
    return json.dumps(doc, indent=2)
