"""Line-network geometry and pairwise relative path gains.

A region of length ``d_cbr`` holds a source buffer node, ``n_relays``
interior relays, and a destination buffer node, all equally spaced on a
line.  Link budgets depend on position only through the relative path
gain ``(d / d0) ** -alpha``, collected here into a symmetric table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Topology", "PathGainTable", "build_line_topology", "path_gain_table"]


@dataclass(frozen=True)
class Topology:
    """Equally spaced node positions [source, relay_1..relay_N, destination]."""

    node_positions: tuple[float, ...]
    cbr_length: float
    relay_count: int

    def __post_init__(self):
        pos = self.node_positions
        if len(pos) != self.relay_count + 2:
            raise ValueError("expected relay_count + 2 node positions")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("node positions must be strictly increasing")
        if pos[0] != 0.0 or abs(pos[-1] - self.cbr_length) > 1e-12 * self.cbr_length:
            raise ValueError("positions must span [0, cbr_length]")

    @property
    def n_nodes(self) -> int:
        return self.relay_count + 2

    @property
    def source(self) -> int:
        return 0

    @property
    def destination(self) -> int:
        return self.n_nodes - 1


@dataclass(frozen=True, eq=False)
class PathGainTable:
    """Symmetric table of relative path gains; the diagonal is unused (zero)."""

    omega: np.ndarray = field(repr=False)

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        n = om.shape[0]
        if om.shape != (n, n):
            raise ValueError("gain table must be square")
        off = ~np.eye(n, dtype=bool)
        if not np.all(np.isfinite(om[off])) or np.any(om[off] <= 0.0):
            raise ValueError("off-diagonal gains must be positive and finite")
        if not np.allclose(om, om.T):
            raise ValueError("gain table must be symmetric")

    @property
    def n_nodes(self) -> int:
        return self.omega.shape[0]

    def gain(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("self gain is undefined")
        return float(self.omega[i, j])


def build_line_topology(d_cbr: float, n_relays: int) -> Topology:
    """Place ``n_relays + 2`` equally spaced nodes on [0, d_cbr]."""
    if not d_cbr > 0:
        raise ValueError("d_cbr must be positive")
    if n_relays < 0:
        raise ValueError("n_relays must be non-negative")
    n = int(n_relays)
    positions = tuple(d_cbr * k / (n + 1) for k in range(n + 2))
    # re-pin the endpoint: k/(n+1) at k = n+1 is exactly 1 but stay explicit
    positions = positions[:-1] + (float(d_cbr),)
    return Topology(node_positions=positions, cbr_length=float(d_cbr), relay_count=n)


def path_gain_table(
    topology: Topology,
    alpha: float,
    d0: float = 1.0,
    clamp_near_field: bool = False,
) -> PathGainTable:
    """Relative path gains ``(d_ij / d0) ** -alpha`` for every node pair.

    With ``clamp_near_field`` the attenuation is capped at 1 for distances
    below ``d0``; by default the power law is applied as written for every
    positive distance, which is what dense configurations require.
    """
    if not alpha > 2:
        raise ValueError("path-loss exponent must exceed 2")
    if not d0 > 0:
        raise ValueError("reference distance must be positive")
    pos = np.asarray(topology.node_positions, dtype=float)
    dist = np.abs(pos[:, None] - pos[None, :])
    with np.errstate(divide="ignore"):
        omega = (dist / d0) ** -alpha
    if clamp_near_field:
        omega = np.minimum(omega, 1.0)
    np.fill_diagonal(omega, 0.0)
    return PathGainTable(omega=omega)
