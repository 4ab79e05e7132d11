"""Vectorized core for the per-packet absorbing-chain computations.

The public contracts live in `markov` and `pipeline`; this module holds the
cached reachable-state enumeration, the batched per-slot outage evaluation,
and the forward passes shared by the single-packet analysis and the
frame-pipeline iteration, so both produce identical floating-point results.

Interference enters in one of two per-slot forms.  A *marginal* slot lists
``(node, probability)`` entries that are applied receiver by receiver inside
the closed-form outage.  A *config* slot carries a small mixture over joint
interferer configurations -- typically the transmit-set distributions of the
co-active packets -- because the presence of an interfering packet is shared
by every receiver in the slot: treating it as independent per receiver
grossly underestimates the probability that one close-by foreign wavefront
wipes out all receivers at once.  Per receiver, the mixture marginalizes
back to exactly the closed form; only the joint changes.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, StateSpaceCapError
from .linkmodel import resolve_gain_ties
from .topology import PathGainTable

NOT_DECODED, JUST_DECODED, DONE = 0, 1, 2

MAX_STATES_DEFAULT = 1_000_000
# above this many transient states the pipeline stops materializing full
# transition blocks per sweep and tracks only the occupied part of the chain
BLOCK_STATE_LIMIT = 250
# dense (I - Q)^-1 cross-check is only affordable for moderate chains
FUNDAMENTAL_CHECK_LIMIT = 2100
# occupancy mode: rows below this forward mass are dropped (counted as outage)
PRUNE_MASS = 1e-12
# mixture assembly budgets: (kept transmit sets per packet, joint config cap)
MIX_SETS_FULL, MIX_CAP_FULL = 5, 32
MIX_SETS_LIGHT, MIX_CAP_LIGHT = 3, 12
MIX_WEIGHT_PRUNE = 3e-5


def initial_state(n_relays: int) -> tuple[int, ...]:
    return (JUST_DECODED,) + (NOT_DECODED,) * (n_relays + 1)


def classify_state(state: tuple[int, ...]) -> str:
    """'success' if the destination just decoded, 'outage' if nobody holds a
    fresh copy, 'transient' otherwise."""
    if state[-1] == JUST_DECODED:
        return "success"
    if JUST_DECODED in state:
        return "transient"
    return "outage"


class _Group:
    """All transient states sharing one receiver count, with their static
    successor codes (code < t: transient index; t: outage; t + 1: success)."""

    __slots__ = ("z", "rows", "recv", "succ")

    def __init__(self, z, rows, recv, succ):
        self.z = z
        self.rows = rows
        self.recv = recv
        self.succ = succ


class ChainCache:
    """Reachable transient states of one packet's chain plus static structure.

    States are vectors over {0: not decoded, 1: just decoded, 2: done} in node
    order [source, relays..., destination].  Every node that just decoded
    transmits next slot (the destination never does) and every undecoded node
    independently decodes or not, so each state has ``2 ** z`` successors for
    ``z`` undecoded nodes.  The successor identities never change -- only the
    per-slot decode probabilities do -- so everything structural is built once
    per relay count and reused.
    """

    def __init__(self, n_relays: int, max_states: int = MAX_STATES_DEFAULT):
        self.n_relays = n_relays
        self.n_nodes = n_relays + 2
        self.dest = self.n_nodes - 1
        self.tau_max = n_relays + 1

        init = initial_state(n_relays)
        states = [init]
        index = {init: 0}
        succ_per_state = []
        recv_per_state = []

        head = 0
        while head < len(states):
            state = states[head]
            head += 1
            recv = [j for j, v in enumerate(state) if v == NOT_DECODED]
            base = [DONE if v in (JUST_DECODED, DONE) else NOT_DECODED for v in state]
            z = len(recv)
            # the destination is undecoded in every transient state and sorts last
            dest_bit = 1 << (z - 1)
            codes = np.empty(1 << z, dtype=np.int64)
            for mask in range(1 << z):
                if mask & dest_bit:
                    codes[mask] = -2  # success, remapped after the walk
                elif mask == 0:
                    codes[mask] = -1  # outage
                else:
                    nxt = base.copy()
                    m = mask
                    b = 0
                    while m:
                        if m & 1:
                            nxt[recv[b]] = JUST_DECODED
                        m >>= 1
                        b += 1
                    tup = tuple(nxt)
                    idx = index.get(tup)
                    if idx is None:
                        idx = len(states)
                        if idx >= max_states:
                            raise StateSpaceCapError(
                                f"chain exceeds {max_states} transient states"
                            )
                        index[tup] = idx
                        states.append(tup)
                    codes[mask] = idx
            succ_per_state.append(codes)
            recv_per_state.append(np.asarray(recv, dtype=np.int64))

        self.states = states
        self.index = index
        self.t = len(states)
        succ = [np.where(c == -1, self.t, np.where(c == -2, self.t + 1, c)) for c in succ_per_state]

        tset_index: dict[tuple[int, ...], int] = {}
        tid_of = np.empty(self.t, dtype=np.int64)
        for i, state in enumerate(states):
            nodes = tuple(k for k, v in enumerate(state) if v == JUST_DECODED)
            tid_of[i] = tset_index.setdefault(nodes, len(tset_index))
        self.tid_of = tid_of
        self.t_sets = [None] * len(tset_index)
        for nodes, tid in tset_index.items():
            self.t_sets[tid] = nodes
        self.n_tids = len(self.t_sets)
        self.max_barrage = max(len(s) for s in self.t_sets)
        self.member_mask = np.zeros((self.n_tids, self.n_nodes), dtype=bool)
        for tid, nodes in enumerate(self.t_sets):
            self.member_mask[tid, list(nodes)] = True

        by_z: dict[int, list[int]] = {}
        for i, r in enumerate(recv_per_state):
            by_z.setdefault(r.size, []).append(i)
        self.groups = []
        for z in sorted(by_z):
            rows = np.asarray(by_z[z], dtype=np.int64)
            recv = np.stack([recv_per_state[i] for i in rows])
            sc = np.stack([succ[i] for i in rows]).astype(np.int64)
            self.groups.append(_Group(z, rows, recv, sc))

        # static flat layout of every (state, outcome) pair, for block assembly
        self.flat_rows = np.concatenate(
            [np.repeat(g.rows, 1 << g.z) for g in self.groups]
        )
        self.flat_codes = np.concatenate([g.succ.ravel() for g in self.groups])
        self.q_sel = self.flat_codes < self.t
        self.out_sel = self.flat_codes == self.t
        self.suc_sel = self.flat_codes == self.t + 1

        # transmit membership: members[node, state] = 1 if node transmits there
        cols = []
        rows_m = []
        for i in range(self.t):
            for node in self.t_sets[tid_of[i]]:
                rows_m.append(node)
                cols.append(i)
        self.members = sp.csr_matrix(
            (np.ones(len(cols)), (rows_m, cols)), shape=(self.n_nodes, self.t)
        )


_chain_caches: dict[int, ChainCache] = {}
_chain_lock = threading.Lock()


def chain_cache(n_relays: int, max_states: int = MAX_STATES_DEFAULT) -> ChainCache:
    with _chain_lock:
        cache = _chain_caches.get(n_relays)
        if cache is None:
            cache = ChainCache(n_relays, max_states)
            _chain_caches[n_relays] = cache
        return cache


class InterferenceField:
    """Probabilistic interferer entries per (receiver, relative slot).

    A slot holds either marginal ``(node, probability)`` entries (one per
    node and interfering packet), or a mixture of joint configurations
    ``(weight, active nodes, marginal leftovers)`` whose per-receiver
    marginals coincide with the plain entries.  Lookups via :meth:`at` always
    present the marginal view and never include the receiver itself; entries
    whose node is in the current barraging set are masked by the consumer.
    """

    def __init__(self, n_nodes: int, tau_max: int, omega: np.ndarray | None = None):
        self.n_nodes = n_nodes
        self.tau_max = tau_max
        self.omega = omega
        self._slots: dict[int, tuple] = {}

    def add_slot_entries(self, tau: int, ids, probs) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        if ids.size:
            self._slots[tau] = ("m", ids, probs)

    def add_slot_configs(self, tau: int, configs) -> None:
        """``configs``: list of ``(weight, active node tuple, ((node, p), ...))``."""
        kept = [c for c in configs if c[0] > 0.0]
        if not kept:
            return
        if len(kept) == 1 and not kept[0][1] and not kept[0][2]:
            return  # pure no-interference slot
        self._slots[tau] = ("c", kept)

    def is_empty(self) -> bool:
        return not self._slots

    def slot(self, tau: int):
        return self._slots.get(tau)

    def marginal(self, tau: int) -> tuple[np.ndarray, np.ndarray]:
        """Aggregate per-node transmit probabilities at one slot."""
        entry = self._slots.get(tau)
        if entry is None:
            z = np.empty(0)
            return z.astype(np.int64), z
        if entry[0] == "m":
            return entry[1], entry[2]
        agg: dict[int, float] = {}
        for w, act, lump in entry[1]:
            for i in act:
                agg[i] = agg.get(i, 0.0) + w
            for i, p in lump:
                agg[i] = agg.get(i, 0.0) + w * p
        ids = np.asarray(sorted(agg), dtype=np.int64)
        probs = np.minimum(np.asarray([agg[i] for i in ids]), 1.0)
        return ids, probs

    def at(self, j: int, tau: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Marginal entries seen by receiver ``j``: (node ids, gains, probs)."""
        ids, probs = self.marginal(tau)
        keep = ids != j
        ids, probs = ids[keep], probs[keep]
        if self.omega is None:
            gains = np.full(ids.shape, np.nan)
        else:
            gains = self.omega[ids, j]
        return ids, gains, probs


class Geometry:
    """A gain table bound to a chain cache, with lazily built partial-fraction
    coefficients per transmit set (geometry only, threshold independent)."""

    def __init__(self, cache: ChainCache, omega: np.ndarray, gain_scale: float):
        self.cache = cache
        self.omega = omega
        self.gain_scale = gain_scale
        self._pf: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def pf(self, tid: int) -> tuple[np.ndarray, np.ndarray]:
        got = self._pf.get(tid)
        if got is not None:
            return got
        nodes = self.cache.t_sets[tid]
        m = len(nodes)
        n_nodes = self.cache.n_nodes
        gains = np.zeros((m, n_nodes))
        coef = np.zeros((m, n_nodes))
        node_set = set(nodes)
        for j in range(n_nodes):
            if j in node_set:
                continue
            col = resolve_gain_ties([self.omega[i, j] for i in nodes])
            for k in range(m):
                c = 1.0
                for s in range(m):
                    if s != k:
                        c *= col[k] / (col[k] - col[s])
                coef[k, j] = c
            gains[:, j] = col
        with self._lock:
            return self._pf.setdefault(tid, (gains, coef))


_geometries: dict[tuple, Geometry] = {}
_geom_lock = threading.Lock()


def line_geometry(
    n_relays: int,
    alpha: float,
    d_cbr: float,
    d0: float = 1.0,
    clamp_near_field: bool = False,
    max_states: int = MAX_STATES_DEFAULT,
) -> Geometry:
    """Geometry of the equally spaced line, normalized to unit length.

    The power law makes the table separable: gains scale globally with
    ``(d_cbr / d0) ** -alpha``, which is folded into an effective SNR, so the
    partial-fraction coefficients can be shared across region lengths.  With
    near-field clamping the separation breaks and the table is kept absolute.
    """
    key = ("line", n_relays, alpha, d_cbr, d0, clamp_near_field)
    with _geom_lock:
        geom = _geometries.get(key)
    if geom is not None:
        return geom
    cache = chain_cache(n_relays, max_states)
    frac = np.arange(n_relays + 2, dtype=float) / (n_relays + 1)
    dist = np.abs(frac[:, None] - frac[None, :])
    with np.errstate(divide="ignore"):
        if clamp_near_field:
            omega = np.minimum((dist * d_cbr / d0) ** -alpha, 1.0)
            scale = 1.0
        else:
            omega = dist**-alpha
            scale = (d_cbr / d0) ** -alpha
    np.fill_diagonal(omega, 0.0)
    geom = Geometry(cache, omega, scale)
    with _geom_lock:
        return _geometries.setdefault(key, geom)


def table_geometry(gains: PathGainTable, max_states: int = MAX_STATES_DEFAULT) -> Geometry:
    """Geometry for an explicitly supplied gain table (no rescaling)."""
    key = ("table", gains.omega.shape[0], gains.omega.tobytes())
    with _geom_lock:
        geom = _geometries.get(key)
    if geom is not None:
        return geom
    cache = chain_cache(gains.omega.shape[0] - 2, max_states)
    geom = Geometry(cache, np.asarray(gains.omega, dtype=float), 1.0)
    with _geom_lock:
        return _geometries.setdefault(key, geom)


class EvalContext:
    """A geometry evaluated at one (threshold, SNR) operating point.

    Caches, per transmit set: tie-resolved gains, partial-fraction
    coefficients folded with the noise exponential, and per-interferer-node
    attenuation factors, padded to a common barrage size so whole slots can
    be evaluated as single array operations.
    """

    def __init__(self, geometry: Geometry, beta: float, gamma: float):
        self.geometry = geometry
        self.cache = geometry.cache
        self.beta = beta
        self.gamma_eff = gamma * geometry.gain_scale
        m = self.cache.max_barrage
        n = self.cache.n_nodes
        self._g = np.zeros((self.cache.n_tids, m, n))  # padded gains
        self._e = np.zeros((self.cache.n_tids, m, n))  # padded coef * exp term
        self._have = np.zeros(self.cache.n_tids, dtype=bool)
        self._lock = threading.Lock()

    def _ensure(self, tids) -> None:
        for tid in tids:
            if self._have[tid]:
                continue
            gains, coef = self.geometry.pf(tid)
            with np.errstate(divide="ignore", invalid="ignore"):
                e = coef * np.exp(-self.beta / (gains * self.gamma_eff))
            e = np.nan_to_num(e, nan=0.0, posinf=0.0, neginf=0.0)
            m = gains.shape[0]
            with self._lock:
                self._g[tid, :m, :] = gains
                self._e[tid, :m, :] = e
                self._have[tid] = True

    def _entry_factor(self, g, member, node: int, p: float) -> np.ndarray:
        """Attenuation of every barrage term at every receiver caused by one
        interferer entry ``(node, p)`` on a batch of transmit sets.

        Identity at the interferer's own column (a node does not interfere
        with its own reception) and at transmit sets containing the node (a
        barraging node cannot also interfere with that reception).
        """
        om = self.geometry.omega[node, :]
        num = g + (self.beta * (1.0 - p)) * om[None, None, :]
        den = g + self.beta * om[None, None, :]
        # padded rows have g = 0; their quotient is harmless (zero coefficient)
        fac = num / np.maximum(den, 1e-300)
        fac[:, :, node] = 1.0
        fac[member[:, node]] = 1.0
        return fac

    def eps_mixture(self, tids, field_slot):
        """Outage per (config, transmit set, receiver) for one slot.

        Returns ``(weights, eps, tids)`` with ``eps[c, k, j]`` the outage of
        receiver ``j`` under transmit set ``tids[k]`` in configuration ``c``.
        A marginal slot is a single configuration of leftover entries; no
        interference is a single noise-only configuration.
        """
        tids = np.asarray(sorted(int(t) for t in tids), dtype=np.int64)
        self._ensure(tids)
        if self.beta == 0.0:
            return np.ones(1), np.zeros((1, tids.size, self.cache.n_nodes)), tids
        e = self._e[tids]  # (K, m, n)
        if field_slot is None:
            eps = 1.0 - e.sum(axis=1)
            self._check(eps)
            return np.ones(1), np.clip(eps[None, :, :], 0.0, 1.0), tids
        if field_slot[0] == "m":
            configs = [(1.0, (), tuple(zip(field_slot[1].tolist(), field_slot[2].tolist())))]
        else:
            configs = field_slot[1]
        g = self._g[tids]
        member = self.cache.member_mask[tids]  # (K, n_nodes)
        factor_cache: dict[tuple[int, float], np.ndarray] = {}

        def factor(node: int, p: float) -> np.ndarray:
            key = (int(node), float(p))
            got = factor_cache.get(key)
            if got is None:
                got = self._entry_factor(g, member, *key)
                factor_cache[key] = got
            return got

        weights = np.empty(len(configs))
        eps = np.empty((len(configs), tids.size, self.cache.n_nodes))
        for c, (w, act, lump) in enumerate(configs):
            weights[c] = w
            fac = None
            for node in act:
                part = factor(node, 1.0)
                fac = part.copy() if fac is None else fac * part
            for node, p in lump:
                part = factor(node, p)
                fac = part.copy() if fac is None else fac * part
            if fac is None:
                eps[c] = 1.0 - e.sum(axis=1)
            else:
                eps[c] = 1.0 - (e * fac).sum(axis=1)
        self._check(eps)
        return weights, np.clip(eps, 0.0, 1.0), tids

    def _check(self, eps) -> None:
        # columns for nodes inside the transmit set evaluate to exactly 1.0
        # (zero coefficients), so the whole array must be finite
        if not np.all(np.isfinite(eps)):
            raise NumericalError("non-finite link outage in transition build")


def _subset_probs(eps_m: np.ndarray) -> np.ndarray:
    """Probabilities of every decode subset given per-receiver outages.

    Bit ``b`` of the subset index corresponds to column ``b`` decoding.
    Works on stacked leading axes; the doubling fills one preallocated
    buffer in place."""
    z = eps_m.shape[-1]
    out = np.empty(eps_m.shape[:-1] + (1 << z,))
    out[..., 0] = 1.0
    width = 1
    for b in range(z):
        e = eps_m[..., b : b + 1]
        head = out[..., :width]
        out[..., width : 2 * width] = head * (1.0 - e)
        head *= e
        width *= 2
    return out


def slot_mixed_parts(ctx: EvalContext, field, tau: int, occupied=None):
    """Mixed subset probabilities for one slot.

    Returns a list aligned with the cache's receiver-count groups; each item
    is ``(rows, probs)`` where ``probs[r, s]`` is the probability that state
    ``rows[r]`` realizes decode subset ``s``, already averaged over the
    interferer mixture.  With ``occupied`` (boolean over states) only the
    occupied rows are produced.
    """
    cache = ctx.cache
    field_slot = None if field is None else field.slot(tau)
    if occupied is None:
        tids = range(cache.n_tids)
    else:
        tids = np.unique(cache.tid_of[occupied]).tolist()
    weights, eps, tid_arr = ctx.eps_mixture(tids, field_slot)
    pos = np.full(cache.n_tids, -1, dtype=np.int64)
    pos[tid_arr] = np.arange(tid_arr.size)
    parts = []
    for grp in cache.groups:
        if occupied is None:
            rows = grp.rows
            recv = grp.recv
        else:
            sel = occupied[grp.rows]
            if not sel.any():
                parts.append((grp.rows[:0], None))
                continue
            rows = grp.rows[sel]
            recv = grp.recv[sel]
        k = pos[cache.tid_of[rows]]
        eps_m = eps[:, k[:, None], recv]  # (C, g, z)
        probs = _subset_probs(eps_m)
        mixed = np.einsum("c,cgs->gs", weights, probs) if probs.shape[0] > 1 else probs[0]
        parts.append((rows, mixed))
    return parts


def forward_pass(ctx: EvalContext, field, *, light: bool, want_sets: bool = False):
    """Propagate the packet's state distribution through its lifetime.

    Returns ``(epsilon, profile, payload, set_dists)``.  ``profile[i, tau-1]``
    is the probability node ``i`` transmits the packet in relative slot
    ``tau``; ``epsilon`` is the absorbed outage mass including the lifetime
    cap.  In block mode (``light=False``) the payload lists per-slot flat
    transition probabilities over the full state space; in light mode the
    chain is tracked only on rows with non-negligible mass and the payload is
    ``None``.  With ``want_sets`` the per-slot transmit-set distributions
    (tid -> probability) are returned for interference coupling.
    """
    cache = ctx.cache
    t = cache.t
    homogeneous = field is None or field.is_empty()
    mass = np.zeros(t)
    mass[0] = 1.0
    profile = np.zeros((cache.n_nodes, cache.tau_max))
    outage = 0.0
    dropped = 0.0
    payload = [] if not light else None
    set_dists = [] if want_sets else None
    cached_parts = None

    for tau in range(1, cache.tau_max + 1):
        occupied = None
        if light:
            keep = mass > PRUNE_MASS
            kept = np.where(keep, mass, 0.0)
            dropped += float(mass.sum() - kept.sum())
            mass = kept
            occupied = keep
            if not np.any(keep):
                if set_dists is not None:
                    set_dists.extend(
                        [(np.empty(0, dtype=np.int64), np.empty(0))]
                        * (cache.tau_max - tau + 1)
                    )
                break
        profile[:, tau - 1] = cache.members @ mass
        if set_dists is not None:
            nz = np.flatnonzero(mass > 0.0)
            tw = np.bincount(cache.tid_of[nz], weights=mass[nz], minlength=cache.n_tids)
            tz = np.flatnonzero(tw)
            set_dists.append((tz, tw[tz]))
        if not light and homogeneous and cached_parts is not None:
            parts = cached_parts
        else:
            parts = slot_mixed_parts(ctx, field, tau, occupied)
            if not light and homogeneous:
                cached_parts = parts
        agg = np.zeros(t + 2)
        flat = [] if payload is not None else None
        for grp, (rows, probs) in zip(cache.groups, parts):
            if flat is not None:
                flat.append(probs.ravel())
            if probs is None or rows.size == 0:
                continue
            if light:
                sel = occupied[grp.rows]
                succ = grp.succ[sel]
            else:
                succ = grp.succ
            w = probs * mass[rows][:, None]
            agg += np.bincount(succ.ravel(), weights=w.ravel(), minlength=t + 2)
        if flat is not None:
            payload.append(np.concatenate(flat))
        outage += agg[t]
        mass = agg[:t]

    # lifetime cap: whatever is still transient after the last slot is lost,
    # as is any pruned mass
    epsilon = outage + float(mass.sum()) + dropped
    return epsilon, profile, payload, set_dists


def build_blocks(ctx: EvalContext, field):
    """Materialize full per-slot transition blocks (Q sparse, R dense)."""
    cache = ctx.cache
    t = cache.t
    homogeneous = field is None or field.is_empty()
    qs, rs = [], []
    shared = None
    for tau in range(1, cache.tau_max + 1):
        if homogeneous and shared is not None:
            qs.append(shared[0])
            rs.append(shared[1])
            continue
        parts = slot_mixed_parts(ctx, field, tau)
        data = np.concatenate([p.ravel() for _, p in parts])
        q = sp.coo_matrix(
            (data[cache.q_sel], (cache.flat_rows[cache.q_sel], cache.flat_codes[cache.q_sel])),
            shape=(t, t),
        ).tocsr()
        r = np.zeros((t, 2))
        r[:, 0] = np.bincount(
            cache.flat_rows[cache.out_sel], weights=data[cache.out_sel], minlength=t
        )
        r[:, 1] = np.bincount(
            cache.flat_rows[cache.suc_sel], weights=data[cache.suc_sel], minlength=t
        )
        rowsum = np.asarray(q.sum(axis=1)).ravel() + r.sum(axis=1)
        if np.max(np.abs(rowsum - 1.0)) > 1e-9:
            raise NumericalError("transition rows do not sum to one")
        qs.append(q)
        rs.append(r)
        if homogeneous:
            shared = (q, r)
    return qs, rs


def packet_configs(cache: ChainCache, tids, weights, max_sets: int):
    """Decompose one packet's slot activity into exclusive configurations.

    The packet either transmits one of its most likely transmit sets (kept
    explicitly, heaviest first), transmits one of the remaining sets (lumped
    as per-node marginal probabilities, exact in expectation), or is silent.
    """
    order = sorted(range(len(tids)), key=lambda i: (-weights[i], tids[i]))
    alive = float(np.sum(weights))
    configs = []
    lump: dict[int, float] = {}
    rem_w = 0.0
    for rank, i in enumerate(order):
        w = float(weights[i])
        if w <= 1e-12:
            continue
        if rank < max_sets:
            configs.append((w, cache.t_sets[int(tids[i])], ()))
        else:
            rem_w += w
            for node in cache.t_sets[int(tids[i])]:
                lump[node] = lump.get(node, 0.0) + w
    if rem_w > 1e-12:
        entries = tuple((n, lump[n] / rem_w) for n in sorted(lump))
        configs.append((rem_w, (), entries))
    dead = 1.0 - alive
    if dead > 1e-12 or not configs:
        configs.append((max(dead, 0.0), (), ()))
    return configs


def _fold_configs(tail):
    """Merge configurations into one marginal configuration preserving each
    node's expected activity."""
    w_total = sum(w for w, _, _ in tail)
    if w_total <= 0.0:
        return None
    lump: dict[int, float] = {}
    for w, act, lmp in tail:
        share = w / w_total
        for node in act:
            lump[node] = lump.get(node, 0.0) + share
        for node, p in lmp:
            lump[node] = lump.get(node, 0.0) + share * p
    entries = tuple((n, min(lump[n], 1.0)) for n in sorted(lump))
    return (w_total, (), entries)


def joint_configs(per_packet, cap: int, prune: float = MIX_WEIGHT_PRUNE):
    """Cross product of per-packet configuration lists, capped.

    Weights below ``prune`` and configurations beyond ``cap`` are folded into
    a single marginal configuration, so the total weight stays one and every
    node's expected activity is preserved.
    """
    joint = [(1.0, (), ())]
    for configs in per_packet:
        new = []
        folded = []
        for w0, a0, l0 in joint:
            for w, a, l in configs:
                w2 = w0 * w
                if w2 <= 0.0:
                    continue
                cfg = (w2, a0 + a, l0 + l)
                (new if w2 >= prune else folded).append(cfg)
        new.sort(key=lambda c: (-c[0], c[1], c[2]))
        if len(new) > cap:
            folded.extend(new[cap:])
            new = new[:cap]
        fold = _fold_configs(folded)
        if fold is not None:
            new.append(fold)
        joint = new
    return joint
