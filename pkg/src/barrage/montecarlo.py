"""Slot-by-slot protocol simulator: the end-to-end oracle for the analysis.

The simulator realizes the flooding protocol directly: a fresh packet enters
at the source in slot 1 of every frame, every holder that just decoded a
packet rebroadcasts it exactly once, and receivers decode whenever their
sampled SINR clears the threshold.  Interference is whatever other packets'
transmissions actually hit a receiver that slot, so the independence
assumptions of the closed-form analysis are absent here -- disagreements
beyond Monte Carlo noise point at either a bug or those assumptions.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field

from .topology import build_line_topology, path_gain_table

__all__ = ["SimConfig", "SimReport", "PacketRecord", "simulate", "write_packet_trace"]


@dataclass(frozen=True)
class SimConfig:
    """Scenario and measurement settings for one simulation run."""

    d_cbr: float
    n_relays: int
    alpha: float
    gamma: float
    beta: float
    frame_len: int
    d0: float = 1.0
    warmup_frames: int = 50
    measured_packets: int = 10_000
    seed: int = 1
    half_duplex: bool = False
    interference: bool = True
    clamp_near_field: bool = False
    record_packets: bool = False

    def __post_init__(self):
        if self.measured_packets < 1:
            raise ValueError("measured_packets must be at least 1")
        if self.warmup_frames < 0:
            raise ValueError("warmup_frames must be non-negative")
        if self.frame_len < 1:
            raise ValueError("frame_len must be at least 1")
        if self.n_relays < 0:
            raise ValueError("n_relays must be non-negative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass(frozen=True)
class PacketRecord:
    packet_id: int
    injection_slot: int
    delivery_slot: int | None  # absolute slot, None for an outage


@dataclass
class SimReport:
    """Measured outage statistics plus per-receiver decode diagnostics."""

    epsilon_cbr_hat: float
    std_error: float
    mean_delivery_slots: float | None
    delivered: int
    outages: int
    measured_packets: int
    per_link_attempts: list[int]
    per_link_successes: list[int]
    packets: list[PacketRecord] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "epsilon_cbr_hat": self.epsilon_cbr_hat,
            "std_error": self.std_error,
            "mean_delivery_slots": self.mean_delivery_slots,
            "delivered": self.delivered,
            "outages": self.outages,
            "measured_packets": self.measured_packets,
            "per_link_attempts": self.per_link_attempts,
            "per_link_successes": self.per_link_successes,
        }


class _Packet:
    __slots__ = ("pid", "injected", "states", "delivery")

    def __init__(self, pid, injected, n_nodes):
        self.pid = pid
        self.injected = injected
        self.states = [0] * n_nodes
        self.states[0] = 1
        self.delivery = None


def simulate(config: SimConfig) -> SimReport:
    """Run the protocol until every measured packet is resolved.

    A packet floods until it is absorbed: delivery (the destination decodes),
    death (nobody holds a fresh copy), or the N+1-slot lifetime cap, whichever
    comes first.  Packets injected during the warmup frames are simulated but
    not counted; injection continues past the measurement window so late
    measured packets still see realistic interference.  Reception draws one
    unit-mean exponential gain per (emission, receiver) pair each slot,
    shared between its roles as signal for its own packet and as interference
    for every other packet at that receiver.  A single seeded generator
    drives all draws, so reports are bitwise reproducible.
    """
    n_nodes = config.n_relays + 2
    dest = n_nodes - 1
    lifetime = config.n_relays + 1
    topo = build_line_topology(config.d_cbr, config.n_relays)
    omega = path_gain_table(
        topo, config.alpha, config.d0, config.clamp_near_field
    ).omega.tolist()
    inv_gamma = 1.0 / config.gamma
    beta = config.beta
    rng = random.Random(config.seed)
    expo = rng.expovariate

    first_measured = config.warmup_frames
    measured = config.measured_packets
    last_measured = first_measured + measured - 1

    active: list[_Packet] = []
    outcomes: dict[int, tuple[int, int | None]] = {}  # pid -> (injected, delivery)
    records: list[PacketRecord] | None = [] if config.record_packets else None
    attempts = [0] * n_nodes
    successes = [0] * n_nodes
    resolved = 0
    next_id = 0
    slot = 0

    while resolved < measured:
        slot += 1
        if (slot - 1) % config.frame_len == 0:
            active.append(_Packet(next_id, slot, n_nodes))
            next_id += 1

        transmitters = [
            [i for i, v in enumerate(pk.states) if v == 1 and i != dest] for pk in active
        ]
        emissions = [(pk, i) for pk, tx in zip(active, transmitters) for i in tx]
        tx_union = {i for _, i in emissions}

        decodes: list[tuple[_Packet, int]] = []
        for j in range(n_nodes):
            pending = [
                (pk, tx)
                for pk, tx in zip(active, transmitters)
                if pk.states[j] == 0 and tx
            ]
            if not pending:
                continue
            if config.half_duplex and j in tx_union:
                continue
            draws = {}
            for pk, i in emissions:
                if i != j:
                    draws[(pk.pid, i)] = expo(1.0)
            for pk, tx in pending:
                signal = sum(omega[i][j] * draws[(pk.pid, i)] for i in tx)
                if config.interference:
                    denom = inv_gamma + sum(
                        omega[i][j] * g
                        for (qid, i), g in draws.items()
                        if qid != pk.pid
                    )
                else:
                    denom = inv_gamma
                attempts[j] += 1
                if signal > beta * denom:
                    successes[j] += 1
                    decodes.append((pk, j))

        for pk, tx in zip(active, transmitters):
            for i in tx:
                pk.states[i] = 2
        for pk, j in decodes:
            pk.states[j] = 1
            if j == dest and pk.delivery is None:
                pk.delivery = slot

        survivors = []
        for pk in active:
            age = slot - pk.injected + 1
            absorbed = pk.delivery is not None
            if (
                not absorbed
                and age < lifetime
                and any(v == 1 for i, v in enumerate(pk.states) if i != dest)
            ):
                survivors.append(pk)
                continue
            if first_measured <= pk.pid <= last_measured:
                outcomes[pk.pid] = (pk.injected, pk.delivery)
                resolved += 1
                if records is not None:
                    records.append(PacketRecord(pk.pid, pk.injected, pk.delivery))
        active = survivors

    delivered = sum(1 for _, d in outcomes.values() if d is not None)
    outages = measured - delivered
    eps_hat = outages / measured
    std_error = math.sqrt(eps_hat * (1.0 - eps_hat) / measured)
    if delivered:
        mean_delivery = (
            sum(d - inj + 1 for inj, d in outcomes.values() if d is not None) / delivered
        )
    else:
        mean_delivery = None

    if records is not None:
        records.sort(key=lambda r: r.packet_id)

    return SimReport(
        epsilon_cbr_hat=eps_hat,
        std_error=std_error,
        mean_delivery_slots=mean_delivery,
        delivered=delivered,
        outages=outages,
        measured_packets=measured,
        per_link_attempts=attempts,
        per_link_successes=successes,
        packets=records,
    )


def write_packet_trace(records, path) -> None:
    """Per-packet trace: id, injection slot, delivery slot or OUTAGE."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["packet_id", "injection_slot", "delivery_slot"])
        for rec in records:
            writer.writerow(
                [rec.packet_id, rec.injection_slot,
                 "OUTAGE" if rec.delivery_slot is None else rec.delivery_slot]
            )
