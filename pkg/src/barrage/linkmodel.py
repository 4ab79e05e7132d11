"""Outage probability of a diversity-combined reception in Rayleigh fading.

A receiver combines the signals of several transmitters sending identical
copies of one packet (the barraging set) while other nodes may transmit
different packets with known probabilities, adding co-channel interference.
``closed_form_outage`` evaluates the fading-averaged outage probability in
closed form; ``monte_carlo_outage`` estimates the same quantity by sampling
the SINR directly and serves as the independent correctness oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = [
    "ChannelParams",
    "LinkScenario",
    "closed_form_outage",
    "monte_carlo_outage",
    "resolve_gain_ties",
]

_TIE_REL_TOL = 1e-12
_TIE_DELTA = 1e-9
_MC_BLOCK = 1 << 16


@dataclass(frozen=True)
class ChannelParams:
    """Channel constants: path-loss exponent, reference distance, unit-distance
    SNR (linear), and the SINR decoding threshold (linear)."""

    alpha: float
    d0: float
    gamma: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError("path-loss exponent must exceed 2")
        if not self.d0 > 0:
            raise ValueError("reference distance must be positive")
        if not self.gamma > 0:
            raise ValueError("unit-distance SNR must be positive")
        if self.beta < 0:
            raise ValueError("SINR threshold must be non-negative")


@dataclass(frozen=True)
class LinkScenario:
    """One reception: path gains of the barraging transmitters plus a list of
    ``(gain, transmit probability)`` interferer entries."""

    barrage_gains: tuple[float, ...]
    interferers: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        gains = tuple(float(g) for g in self.barrage_gains)
        ints = tuple((float(w), float(p)) for w, p in self.interferers)
        object.__setattr__(self, "barrage_gains", gains)
        object.__setattr__(self, "interferers", ints)
        if not gains:
            raise ValueError("barraging set must not be empty")
        if any(g <= 0 or not math.isfinite(g) for g in gains):
            raise ValueError("barrage gains must be positive and finite")
        for w, p in ints:
            if w <= 0 or not math.isfinite(w):
                raise ValueError("interferer gains must be positive and finite")
            if not 0.0 <= p <= 1.0:
                raise ValueError("interferer transmit probabilities must be in [0, 1]")


def resolve_gain_ties(gains, rel_tol: float = _TIE_REL_TOL, delta: float = _TIE_DELTA) -> list[float]:
    """Break exact or near ties among path gains by tiny multiplicative nudges.

    The closed form divides by pairwise gain differences, so equal gains
    (routine for equidistant transmitters) must be separated first.  Tied
    members are multiplied by distinct factors ``1 + m * delta`` in input
    order; the perturbation error is O(delta) and is validated against the
    Monte Carlo oracle.  Output order matches input order.
    """
    out = [float(g) for g in gains]
    for _ in range(64):
        order = sorted(range(len(out)), key=lambda i: out[i])
        groups = []
        current = [order[0]] if order else []
        for prev, idx in zip(order, order[1:]):
            a, b = out[prev], out[idx]
            if abs(b - a) <= rel_tol * max(abs(a), abs(b)):
                current.append(idx)
            else:
                groups.append(current)
                current = [idx]
        if current:
            groups.append(current)
        tied = [g for g in groups if len(g) > 1]
        if not tied:
            return out
        for group in tied:
            for m, idx in enumerate(sorted(group)):
                out[idx] *= 1.0 + m * delta
    raise NumericalError("tie resolution did not terminate")


def closed_form_outage(scenario: LinkScenario, params: ChannelParams) -> float:
    """Fading-averaged outage probability of one barrage reception.

    Evaluates
    ``1 - sum_k exp(-beta / (w_k * gamma)) * prod_{s != k} w_k / (w_k - w_s)
    * prod_i (w_k + beta * (1 - p_i) * v_i) / (w_k + beta * v_i)``
    over tie-resolved barrage gains ``w`` and interferer entries ``(v, p)``.
    The inner products are accumulated in log magnitude with sign tracking
    because the partial-fraction ratios blow up for nearly tied gains.
    """
    beta = params.beta
    gamma = params.gamma
    if beta == 0.0:
        return 0.0
    gains = resolve_gain_ties(scenario.barrage_gains)
    total = 0.0
    for k, wk in enumerate(gains):
        log_mag = -beta / (wk * gamma)
        sign = 1.0
        for s, ws in enumerate(gains):
            if s == k:
                continue
            ratio = wk / (wk - ws)
            if ratio < 0.0:
                sign = -sign
            log_mag += math.log(abs(ratio))
        for wi, p in scenario.interferers:
            log_mag += math.log(wk + beta * ((1.0 - p) * wi))
            log_mag -= math.log(wk + beta * wi)
        total += sign * math.exp(log_mag)
    eps = 1.0 - total
    if not math.isfinite(eps):
        raise NumericalError("outage evaluation produced a non-finite value")
    # cancellation between huge partial-fraction terms can land a hair
    # outside [0, 1]; clamp finite round-off only, never NaN/inf
    return min(1.0, max(0.0, eps))


def monte_carlo_outage(
    scenario: LinkScenario,
    params: ChannelParams,
    trials: int,
    seed: int,
) -> tuple[float, float]:
    """Estimate the same outage probability by direct SINR sampling.

    Each trial draws unit-mean exponential fading for every barraging node
    and every interferer, Bernoulli activity per interferer, and forms one
    SINR with a single interference-plus-noise denominator shared by the
    combined signal (interference fully correlated across branches).
    Returns ``(estimate, binomial standard error)``.  Trials are processed
    in fixed-size blocks whose substreams derive from ``(seed, block)``, so
    the result is reproducible and independent of how blocks are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    gains = np.asarray(scenario.barrage_gains, dtype=float)
    int_w = np.asarray([w for w, _ in scenario.interferers], dtype=float)
    int_p = np.asarray([p for _, p in scenario.interferers], dtype=float)
    beta = params.beta
    inv_gamma = 1.0 / params.gamma

    failures = 0
    done = 0
    block_index = 0
    while done < trials:
        n = min(_MC_BLOCK, trials - done)
        rng = np.random.default_rng((seed, block_index))
        signal = rng.exponential(size=(n, gains.size)) @ gains
        if int_w.size:
            g_int = rng.exponential(size=(n, int_w.size))
            active = rng.random(size=(n, int_w.size)) < int_p
            interference = (g_int * active) @ int_w
        else:
            interference = 0.0
        sinr = signal / (inv_gamma + interference)
        failures += int(np.count_nonzero(sinr <= beta))
        done += n
        block_index += 1

    estimate = failures / trials
    std_error = math.sqrt(estimate * (1.0 - estimate) / trials)
    return estimate, std_error
