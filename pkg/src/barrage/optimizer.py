"""Transport-capacity evaluation and design search over (rate, relays, frame).

Transport capacity rewards forward progress: region length times success
probability times code rate, divided by the frame length that paces packet
injection.  The search keeps a (lo, mid, hi) bracket per coordinate,
evaluates the 27-point grid of the three brackets, moves each midpoint
toward the better endpoint, and shrinks until the rate bracket is narrower
than a tolerance and the integer brackets collapse.  Every evaluation is
memoized and logged so the returned optimum is the best point ever seen.
"""

from __future__ import annotations

import csv
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import BarrageError
from .linkmodel import ChannelParams
from .pipeline import iterate_fixed_point
from .topology import build_line_topology

__all__ = [
    "DesignPoint",
    "CapacityResult",
    "CapacityEvaluator",
    "rate_to_threshold",
    "transport_capacity",
    "evaluate_point",
    "coordinate_search",
    "optimize",
    "write_evaluation_log",
]


def rate_to_threshold(rate: float) -> float:
    """SINR threshold supporting code rate R: beta = 2**R - 1."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    return 2.0**rate - 1.0


def transport_capacity(d_cbr: float, epsilon: float, frame_len: int, rate: float) -> float:
    """Meter-bits/s/Hz of reliable forward progress per injected packet."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be a probability")
    if frame_len < 1:
        raise ValueError("frame length must be at least 1")
    return d_cbr * (1.0 - epsilon) * rate / frame_len


@dataclass(frozen=True)
class DesignPoint:
    """One candidate design: code rate, relay count, frame length."""

    rate: float
    n_relays: int
    frame_len: int

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.n_relays < 0:
            raise ValueError("n_relays must be non-negative")
        if self.frame_len < 1:
            raise ValueError("frame length must be at least 1")

    def threshold(self) -> float:
        return rate_to_threshold(self.rate)


@dataclass(frozen=True)
class CapacityResult:
    point: DesignPoint
    epsilon_cbr: float
    transport_capacity: float
    frames_to_converge: int


class CapacityEvaluator:
    """Memoizing bridge from design points to steady-state capacity.

    Each evaluation builds the line topology, runs the frame pipeline to its
    steady state, and applies the capacity formula.  Safe to call from
    several threads; the evaluation log holds one entry per distinct point.
    """

    def __init__(
        self,
        d_cbr: float,
        gamma: float,
        alpha: float,
        d0: float = 1.0,
        xi: float = 1e-6,
        max_frames: int = 50,
        max_inner: int = 100,
        clamp_near_field: bool = False,
    ):
        self.d_cbr = d_cbr
        self.gamma = gamma
        self.alpha = alpha
        self.d0 = d0
        self.xi = xi
        self.max_frames = max_frames
        self.max_inner = max_inner
        self.clamp_near_field = clamp_near_field
        self.log: list[CapacityResult] = []
        self._memo: dict[tuple, CapacityResult] = {}
        self._lock = threading.Lock()

    def evaluate(self, point: DesignPoint) -> CapacityResult:
        key = (point.rate, point.n_relays, point.frame_len)
        with self._lock:
            got = self._memo.get(key)
        if got is not None:
            return got
        params = ChannelParams(
            alpha=self.alpha, d0=self.d0, gamma=self.gamma, beta=point.threshold()
        )
        topo = build_line_topology(self.d_cbr, point.n_relays)
        run = iterate_fixed_point(
            topo,
            params,
            point.frame_len,
            xi=self.xi,
            max_frames=self.max_frames,
            max_inner=self.max_inner,
            clamp_near_field=self.clamp_near_field,
        )
        result = CapacityResult(
            point=point,
            epsilon_cbr=run.steady_epsilon_cbr,
            transport_capacity=transport_capacity(
                self.d_cbr, run.steady_epsilon_cbr, point.frame_len, point.rate
            ),
            frames_to_converge=run.frames_to_converge,
        )
        with self._lock:
            if key in self._memo:
                return self._memo[key]
            self._memo[key] = result
            self.log.append(result)
        return result


def evaluate_point(point: DesignPoint, d_cbr: float, gamma: float, alpha: float, **config) -> CapacityResult:
    """One-shot evaluation without keeping an evaluator around."""
    return CapacityEvaluator(d_cbr, gamma, alpha, **config).evaluate(point)


def _slice_max(values, triple, coord_index, which):
    out = -math.inf
    for key, v in values.items():
        if key[coord_index] == which:
            out = max(out, v)
    return out


def coordinate_search(
    objective,
    rate_bounds=(0.25, 12.0),
    relay_bounds=(0, 10),
    frame_bounds=(1, 8),
    rate_tol: float = 0.01,
    threads: int = 1,
    max_passes: int = 100,
):
    """Maximize ``objective(rate, n_relays, frame_len)`` by bracket shrinking.

    Returns ``(argmax DesignPoint, value, evaluations)`` where evaluations
    maps every probed ``(rate, n, f)`` to its objective value.  The grid over
    the three brackets is evaluated each pass; each coordinate's figure of
    merit is the best value over the grid slice sharing its coordinate, which
    keeps the bracket moves robust to interactions between coordinates.
    """
    r_lo, r_hi = float(rate_bounds[0]), float(rate_bounds[1])
    n_lo, n_hi = int(relay_bounds[0]), int(relay_bounds[1])
    f_lo, f_hi = int(frame_bounds[0]), int(frame_bounds[1])
    if not (r_lo > 0 and r_lo <= r_hi and 0 <= n_lo <= n_hi and 1 <= f_lo <= f_hi):
        raise ValueError("empty or invalid feasible region")

    triples = {
        "rate": [r_lo, (r_lo + r_hi) / 2.0, r_hi],
        "relays": [n_lo, (n_lo + n_hi) // 2, n_hi],
        "frames": [f_lo, (f_lo + f_hi) // 2, f_hi],
    }
    converged = {"rate": r_hi - r_lo < rate_tol, "relays": n_lo == n_hi, "frames": f_lo == f_hi}
    coord_index = {"rate": 0, "relays": 1, "frames": 2}

    evals: dict[tuple, float] = {}
    lock = threading.Lock()

    def value(key):
        with lock:
            if key in evals:
                return evals[key]
        v = float(objective(*key))
        with lock:
            evals.setdefault(key, v)
        return v

    def run_batch(keys):
        keys = [k for k in dict.fromkeys(keys) if k not in evals]
        if threads and threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(value, keys))
        else:
            for k in keys:
                value(k)

    def grid_keys():
        return [
            (r, n, f)
            for r in triples["rate"]
            for n in triples["relays"]
            for f in triples["frames"]
        ]

    best_seen = -math.inf
    for _ in range(max_passes):
        for coord in ("rate", "relays", "frames"):
            run_batch(grid_keys())
            tri = triples[coord]
            idx = coord_index[coord]
            if converged[coord]:
                continue
            vl, vm, vh = (_slice_max(evals, tri, idx, v) for v in tri)
            if coord == "rate":
                lo, mid, hi = tri
                if hi - lo < rate_tol:
                    pick = max(zip((vl, vm, vh), tri))[1]
                    triples[coord] = [pick, pick, pick]
                    converged[coord] = True
                elif vm >= vl and vm >= vh:
                    triples[coord] = [(lo + mid) / 2.0, mid, (mid + hi) / 2.0]
                elif vh > vl:
                    triples[coord] = [mid, (mid + hi) / 2.0, hi]
                else:
                    triples[coord] = [lo, (lo + mid) / 2.0, mid]
            else:
                lo, mid, hi = tri
                if hi - lo <= 4:
                    # bracket is small: integer sweep beats further shrinking
                    others = [c for c in ("rate", "relays", "frames") if c != coord]
                    keys = []
                    for cand in range(lo, hi + 1):
                        for a in triples[others[0]]:
                            for b in triples[others[1]]:
                                key = [0, 0, 0]
                                key[idx] = cand
                                key[coord_index[others[0]]] = a
                                key[coord_index[others[1]]] = b
                                keys.append(tuple(key))
                    run_batch(keys)
                    best_cand = max(
                        range(lo, hi + 1),
                        key=lambda cand: _slice_max(evals, tri, idx, cand),
                    )
                    triples[coord] = [best_cand, best_cand, best_cand]
                    converged[coord] = True
                elif vm >= vl and vm >= vh:
                    triples[coord] = [(lo + mid) // 2, mid, (mid + hi + 1) // 2]
                elif vh > vl:
                    nmid = (mid + hi) // 2
                    triples[coord] = [mid, nmid if nmid > mid else mid + 1, hi]
                else:
                    nmid = (lo + mid + 1) // 2
                    triples[coord] = [lo, nmid if nmid < mid else mid - 1, mid]
        best_now = max(evals.values())
        if all(converged.values()) and best_now <= best_seen:
            break
        best_seen = max(best_seen, best_now)

    best_key = max(evals, key=lambda k: evals[k])
    point = DesignPoint(rate=best_key[0], n_relays=best_key[1], frame_len=best_key[2])
    return point, evals[best_key], evals


def optimize(
    d_cbr: float,
    gamma: float,
    alpha: float,
    *,
    rate_bounds=(0.25, 12.0),
    relay_bounds=(0, 10),
    frame_bounds=(1, 8),
    rate_tol: float = 0.01,
    threads: int = 1,
    evaluator: CapacityEvaluator | None = None,
    **evaluator_config,
) -> CapacityResult:
    """Find the capacity-maximizing (rate, relays, frame length) design."""
    ev = evaluator or CapacityEvaluator(d_cbr, gamma, alpha, **evaluator_config)

    def objective(rate, n_relays, frame_len):
        return ev.evaluate(
            DesignPoint(rate=rate, n_relays=int(n_relays), frame_len=int(frame_len))
        ).transport_capacity

    point, _, _ = coordinate_search(
        objective,
        rate_bounds=rate_bounds,
        relay_bounds=relay_bounds,
        frame_bounds=frame_bounds,
        rate_tol=rate_tol,
        threads=threads,
    )
    return ev.evaluate(point)


def write_evaluation_log(results, path) -> None:
    """CSV of every evaluated point: R, N, F, epsilon_cbr, capacity."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["R", "N", "F", "epsilon_cbr", "capacity"])
        for res in results:
            writer.writerow(
                [
                    repr(float(res.point.rate)),
                    res.point.n_relays,
                    res.point.frame_len,
                    repr(float(res.epsilon_cbr)),
                    repr(float(res.transport_capacity)),
                ]
            )
