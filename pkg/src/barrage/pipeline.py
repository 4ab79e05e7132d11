"""Frame-by-frame fixed point coupling pipelined packets through interference.

A new packet enters the region in slot 1 of every F-slot frame.  When a
packet can stay alive longer than one frame, consecutive packets overlap and
interfere, which couples each packet's transition blocks to the transmit
behavior of its neighbors.  The iteration alternates between rebuilding the
blocks of every packet active in the current frame (Jacobi sweeps, from the
previous sweep's results) and advancing to the next frame, until the
converged blocks stop changing from one frame to the next.

Neighbor activity is exchanged as per-slot transmit-set distributions, not
just per-node marginals: whether an interfering packet is present is common
to all receivers in a slot, and resolving that mixture jointly is what keeps
the analysis near the protocol simulation (and keeps the fixed point stable)
in strongly pipelined regimes.  Per receiver, the mixture marginalizes back
to the closed-form outage exactly.
"""

from __future__ import annotations

import csv
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._engine import InterferenceField  # re-exported
from .errors import ConvergenceError
from .linkmodel import ChannelParams
from .markov import TransmitProfile
from .topology import PathGainTable, Topology

__all__ = [
    "InterferenceField",
    "PipelineResult",
    "TraceRow",
    "active_packet_count",
    "build_interference_field",
    "iterate_fixed_point",
    "write_trace_csv",
]

TraceRow = namedtuple(
    "TraceRow", ["frame", "inner_iter", "packet", "frobenius_residual", "epsilon_cbr"]
)


@dataclass
class PipelineResult:
    """Converged steady-state quantities plus the per-frame history."""

    steady_profile: TransmitProfile
    steady_epsilon_cbr: float
    frames_to_converge: int
    per_frame_epsilon: list[float]
    trace: list[TraceRow] | None = None


@dataclass
class _PacketLaw:
    """One packet's converged behavior: marginal transmit profile plus the
    per-slot distribution over its transmit sets (for joint interference)."""

    profile: np.ndarray
    set_dists: list


def active_packet_count(n_relays: int, frame_len: int) -> int:
    """Number of packets that can be simultaneously alive: ceil((N+1) / F)."""
    if frame_len < 1:
        raise ValueError("frame length must be at least 1")
    if n_relays < 0:
        raise ValueError("n_relays must be non-negative")
    return -(-(n_relays + 1) // frame_len)


def build_interference_field(
    profiles,
    frame_offsets,
    target: int,
    gains: PathGainTable,
    frame_len: int,
) -> InterferenceField:
    """Marginal interferer entries seen by one packet from its neighbors.

    A packet injected ``delta`` frames after the target runs ``delta * F``
    slots behind it, so at the target's relative slot ``tau`` it contributes
    each node's transmit probability at its own slot ``tau - delta * F``
    whenever that falls inside a packet lifetime.  The target's own profile
    contributes nothing; each (node, neighbor packet) pair contributes its
    own entry.
    """
    if frame_len < 1:
        raise ValueError("frame length must be at least 1")
    profiles = list(profiles)
    offsets = list(frame_offsets)
    if len(profiles) != len(offsets):
        raise ValueError("profiles and frame_offsets must align")
    base = profiles[target]
    tau_max = base.tau_max
    field = InterferenceField(base.n_nodes, tau_max, np.asarray(gains.omega, dtype=float))
    for tau in range(1, tau_max + 1):
        ids: list[int] = []
        probs: list[float] = []
        for q, (prof, off) in enumerate(zip(profiles, offsets)):
            if q == target:
                continue
            sigma = tau - (off - offsets[target]) * frame_len
            if not 1 <= sigma <= prof.tau_max:
                continue
            col = prof.p[:, sigma - 1]
            for i in np.flatnonzero(col > 0.0):
                ids.append(int(i))
                probs.append(float(col[i]))
        if ids:
            field.add_slot_entries(tau, ids, probs)
    return field


def _field_for(
    packet: int,
    laws: dict[int, _PacketLaw],
    span: int,
    cache,
    omega: np.ndarray,
    frame_len: int,
    light: bool,
) -> InterferenceField | None:
    """Joint-configuration field for one packet from its co-active neighbors."""
    max_sets = _engine.MIX_SETS_LIGHT if light else _engine.MIX_SETS_FULL
    cap = _engine.MIX_CAP_LIGHT if light else _engine.MIX_CAP_FULL
    field = InterferenceField(cache.n_nodes, cache.tau_max, omega)
    populated = False
    for tau in range(1, cache.tau_max + 1):
        per_packet = []
        for m in range(packet - span, packet + span + 1):
            if m == packet or m < 1:
                continue
            law = laws.get(m)
            if law is None:
                continue
            sigma = tau - (m - packet) * frame_len
            if not 1 <= sigma <= cache.tau_max:
                continue
            tids, weights = law.set_dists[sigma - 1]
            if tids.size == 0:
                continue
            per_packet.append(_engine.packet_configs(cache, tids, weights, max_sets))
        if per_packet:
            field.add_slot_configs(tau, _engine.joint_configs(per_packet, cap))
            populated = True
    return field if populated else None


def _payload_residual(cache, old, new) -> float:
    """Residual between two analyses of the same packet.

    With materialized blocks this is the Frobenius norm of the change in the
    per-slot [Q | R] blocks; in occupancy mode, where the full blocks are not
    formed, it is the sup-norm change of the transmit profile and outage.
    """
    if old is None:
        return math.inf
    if isinstance(new, list):
        total = 0.0
        for a, b in zip(old, new):
            d = b - a
            total += float(np.sum(d[cache.q_sel] ** 2))
            for sel in (cache.out_sel, cache.suc_sel):
                col = np.bincount(
                    cache.flat_rows[sel], weights=d[sel], minlength=cache.t
                )
                total += float(np.sum(col**2))
        return math.sqrt(total)
    prof_a, eps_a = old
    prof_b, eps_b = new
    return max(float(np.max(np.abs(prof_b - prof_a))), abs(eps_b - eps_a))


def _mix_laws(old: _PacketLaw, new: _PacketLaw, keep: float) -> _PacketLaw:
    """Convex combination of two packet laws (under-relaxation step).

    Transmit profiles are linear in the set-distribution weights, so mixing
    both representations with the same coefficients keeps them coherent.
    """
    profile = keep * old.profile + (1.0 - keep) * new.profile
    sets = []
    for (ta, wa), (tb, wb) in zip(old.set_dists, new.set_dists):
        acc: dict[int, float] = {}
        for t, w in zip(ta.tolist(), wa.tolist()):
            acc[t] = acc.get(t, 0.0) + keep * w
        for t, w in zip(tb.tolist(), wb.tolist()):
            acc[t] = acc.get(t, 0.0) + (1.0 - keep) * w
        tids = np.asarray(sorted(acc), dtype=np.int64)
        sets.append((tids, np.asarray([acc[t] for t in tids])))
    return _PacketLaw(profile, sets)


def _mix_payloads(old, new, keep: float):
    if isinstance(new, list):
        return [keep * a + (1.0 - keep) * b for a, b in zip(old, new)]
    return (
        keep * old[0] + (1.0 - keep) * new[0],
        keep * old[1] + (1.0 - keep) * new[1],
    )


def iterate_fixed_point(
    topology: Topology,
    params: ChannelParams,
    frame_len: int,
    xi: float = 1e-6,
    max_frames: int = 50,
    max_inner: int = 100,
    *,
    clamp_near_field: bool = False,
    keep_trace: bool = False,
    update_order: str = "forward",
    max_states: int = _engine.MAX_STATES_DEFAULT,
) -> PipelineResult:
    """Run the frame schedule to its steady state.

    The first ``span + 1`` frames follow the literal injection schedule:
    frame 1 analyzes packet 1 with no interference, each later frame adds the
    newly injected packet and re-sweeps the co-active set (Jacobi, from the
    previous sweep's laws).  Once the pipeline is full, packets become
    indistinguishable up to a frame shift, so the steady state is computed
    over cyclic packet roles: one shared law, re-analyzed under the
    interference of its own shifted copies until consecutive frames differ by
    less than ``xi``.  When that map oscillates (a hard-threshold flip
    between a surviving and a collapsing wave), the update is under-relaxed,
    which converges to the mixed fixed point instead.  The returned steady
    state is the converged role law.
    """
    if xi <= 0:
        raise ValueError("xi must be positive")
    if frame_len < 1:
        raise ValueError("frame length must be at least 1")
    if max_frames < 2 or max_inner < 1:
        raise ValueError("max_frames must be at least 2 and max_inner at least 1")
    if update_order not in ("forward", "reverse"):
        raise ValueError("update_order must be 'forward' or 'reverse'")
    frame_len = int(frame_len)
    n_relays = topology.relay_count
    geom = _engine.line_geometry(
        n_relays,
        params.alpha,
        topology.cbr_length,
        params.d0,
        clamp_near_field,
        max_states,
    )
    ctx = _engine.EvalContext(geom, params.beta, params.gamma)
    cache = geom.cache
    light = cache.t > _engine.BLOCK_STATE_LIMIT
    span = n_relays // frame_len  # frames over which lifetimes can overlap

    laws: dict[int, _PacketLaw] = {}
    payloads: dict[int, object] = {}
    eps_map: dict[int, float] = {}
    per_frame_epsilon: list[float] = []
    trace: list[TraceRow] | None = [] if keep_trace else None

    def analyze(packet: int, law_table: dict[int, _PacketLaw]):
        field = _field_for(packet, law_table, span, cache, geom.omega, frame_len, light)
        epsilon, profile, payload, sets = _engine.forward_pass(
            ctx, field, light=light, want_sets=True
        )
        if light:
            payload = (profile, epsilon)
        return float(epsilon), _PacketLaw(profile, sets), payload

    # --- fill: literal schedule while the set of co-active packets grows ---
    fill_frames = min(span + 1, max_frames - 1)
    fill_sweeps = min(4, max_inner)
    for frame in range(1, fill_frames + 1):
        active = list(range(max(1, frame - span), frame + 1))
        if frame > 1:
            laws[frame] = laws[frame - 1]  # entering packet starts near steady
        order = active if update_order == "forward" else list(reversed(active))
        for inner in range(1, fill_sweeps + 1):
            updates = {n: analyze(n, laws) for n in order}
            residuals = {
                n: _payload_residual(cache, payloads.get(n), updates[n][2]) for n in order
            }
            for n in order:
                eps_map[n], laws[n], payloads[n] = updates[n]
                if trace is not None:
                    trace.append(TraceRow(frame, inner, n, residuals[n], eps_map[n]))
            if max(residuals.values()) < xi:
                break
        per_frame_epsilon.append(eps_map[active[0]])

    # --- steady state: one role law against its own shifted copies ---
    role = fill_frames  # oldest packet with the fullest neighborhood so far
    law = laws[role]
    payload = payloads[role]
    epsilon = eps_map[role]
    keep = 0.0  # under-relaxation weight on the previous iterate
    prev_residual = math.inf
    frames_done = None
    for frame in range(fill_frames + 1, max_frames + 1):
        mid = span + 1
        table = {m: law for m in range(1, 2 * span + 2)}
        new_eps, new_law, new_payload = analyze(mid, table)
        residual = _payload_residual(cache, payload, new_payload)
        if keep == 0.0 and frame - fill_frames >= 3 and residual > 0.7 * prev_residual:
            # stalled or oscillating between wave-survives / wave-collapses:
            # damp the update and converge to the mixed fixed point
            keep = 0.5
        if keep > 0.0:
            law = _mix_laws(law, new_law, keep)
            payload = _mix_payloads(payload, new_payload, keep)
            epsilon = keep * epsilon + (1.0 - keep) * new_eps
        else:
            law, payload, epsilon = new_law, new_payload, new_eps
        per_frame_epsilon.append(epsilon)
        if trace is not None:
            trace.append(TraceRow(frame, 1, frame, residual, epsilon))
        prev_residual = residual
        if residual < xi:
            frames_done = frame
            break

    if frames_done is None:
        raise ConvergenceError(
            f"frame budget ({max_frames}) exhausted without steady state",
            residuals={"steady": prev_residual},
            frame=max_frames,
        )

    return PipelineResult(
        steady_profile=TransmitProfile(p=law.profile),
        steady_epsilon_cbr=float(epsilon),
        frames_to_converge=frames_done,
        per_frame_epsilon=per_frame_epsilon,
        trace=trace,
    )


def write_trace_csv(rows, path) -> None:
    """Write the per-iteration convergence trace."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "inner_iter", "packet", "frobenius_residual", "epsilon_cbr"])
        for row in rows:
            writer.writerow([row.frame, row.inner_iter, row.packet,
                             repr(float(row.frobenius_residual)), repr(float(row.epsilon_cbr))])
