"""Command-line interface: link, analyze, simulate, and optimize workflows.

SNR is accepted in dB and converted internally to the linear unit-distance
value as ``gamma = 10 ** (snr_db / 10)``.  Every command accepts a
``--config`` file of ``key=value`` lines (same keys as the long flags,
``#`` starts a comment; explicit flags override the file) and an
``--output`` format of json, csv, or text.

Exit codes: 0 success, 1 usage error, 2 numerical or convergence failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .errors import BarrageError, ConvergenceError, NumericalError, StateSpaceCapError
from .linkmodel import ChannelParams, LinkScenario, closed_form_outage, monte_carlo_outage
from .markov import build_transition_set, debug_dump, enumerate_states
from .montecarlo import SimConfig, simulate, write_packet_trace
from .optimizer import (
    CapacityEvaluator,
    optimize,
    rate_to_threshold,
    transport_capacity,
    write_evaluation_log,
)
from .pipeline import iterate_fixed_point, write_trace_csv
from .topology import build_line_topology, path_gain_table

_SNR_HELP = "SNR in dB; converted internally to linear gamma = 10**(dB/10)"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="key=value defaults (same keys as flags); flags override")
    p.add_argument("--output", choices=("json", "csv", "text"), default="text",
                   help="output format (default: text)")
    p.add_argument("--out-file", metavar="PATH",
                   help="write the primary output to PATH instead of stdout")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for independent evaluations (0 = auto)")


def _add_channel(p: argparse.ArgumentParser) -> None:
    p.add_argument("--snr-db", type=float, help=_SNR_HELP)
    p.add_argument("--gamma", type=float, help="unit-distance SNR, linear scale")
    p.add_argument("--alpha", type=float, default=3.5, help="path-loss exponent (> 2)")
    p.add_argument("--d0", type=float, default=1.0, help="reference distance")
    p.add_argument("--clamp-near-field", action="store_true",
                   help="cap the path gain at 1 below the reference distance")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-cbr", type=float, default=1.0, help="region length")
    p.add_argument("--relays", type=int, default=2, help="interior relay count N")
    p.add_argument("--frame", type=int, default=2, help="slots per radio frame F")
    p.add_argument("--rate", type=float, help="code rate R in bits/s/Hz")
    p.add_argument("--beta", type=float, help="SINR threshold (linear); overrides --rate")


def build_parser() -> _Parser:
    parser = _Parser(prog="barrage", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("link", help="closed-form link outage, optional Monte Carlo check")
    p.add_argument("--barrage", required=True,
                   help="comma-separated path gains of the barraging transmitters")
    p.add_argument("--interferer", action="append", default=[], metavar="OMEGA:P",
                   help="interferer entry as gain:probability (repeatable)")
    p.add_argument("--beta", type=float, help="SINR threshold (linear)")
    p.add_argument("--rate", type=float, help="code rate; threshold is 2**rate - 1")
    p.add_argument("--mc", type=int, default=0, metavar="TRIALS",
                   help="also estimate by Monte Carlo with this many trials")
    p.add_argument("--seed", type=int, default=1)
    _add_channel(p)
    _add_common(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("analyze", help="steady-state outage and capacity of a design")
    _add_scenario(p)
    _add_channel(p)
    p.add_argument("--xi", type=float, default=1e-6, help="fixed-point tolerance")
    p.add_argument("--max-frames", type=int, default=50)
    p.add_argument("--max-inner", type=int, default=100)
    p.add_argument("--trace", metavar="PATH", help="write per-iteration convergence CSV")
    p.add_argument("--dump-chain", metavar="PATH",
                   help="write the single-packet state space and blocks as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="protocol-level Monte Carlo simulation")
    _add_scenario(p)
    _add_channel(p)
    p.add_argument("--packets", type=int, default=10_000, help="measured packets")
    p.add_argument("--warmup-frames", type=int, default=50)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--half-duplex", action="store_true",
                   help="a node transmitting any packet cannot receive that slot")
    p.add_argument("--no-interference", action="store_true",
                   help="zero out all cross-packet interference")
    p.add_argument("--packet-trace", metavar="PATH",
                   help="write per-packet delivery CSV")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="search (rate, relays, frame) for maximum capacity")
    p.add_argument("--d-cbr", type=float, default=1.0, help="region length")
    _add_channel(p)
    p.add_argument("--r-min", type=float, default=0.25)
    p.add_argument("--r-max", type=float, default=12.0)
    p.add_argument("--n-min", type=int, default=0)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--f-min", type=int, default=1)
    p.add_argument("--f-max", type=int, default=8)
    p.add_argument("--rate-tol", type=float, default=0.01)
    p.add_argument("--xi", type=float, default=1e-6)
    p.add_argument("--max-frames", type=int, default=50)
    p.add_argument("--max-inner", type=int, default=100)
    p.add_argument("--log", metavar="PATH", help="write the evaluation log CSV")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    return parser


def _read_config(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"malformed config line: {raw.strip()!r}")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    return pairs


def _apply_config(argv: list[str]) -> list[str]:
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None or not argv:
        return argv
    flags: list[str] = []
    for key, value in _read_config(path):
        flag = "--" + key.lstrip("-")
        low = value.lower()
        if low == "true":
            flags.append(flag)
        elif low == "false":
            continue
        else:
            flags.append(f"{flag}={value}")
    # config-derived flags go right after the subcommand so explicit flags win
    return argv[:1] + flags + argv[1:]


def _gamma_of(args) -> float:
    if args.gamma is not None:
        return args.gamma
    if args.snr_db is not None:
        return 10.0 ** (args.snr_db / 10.0)
    raise _UsageError("one of --snr-db or --gamma is required")


def _beta_rate_of(args) -> tuple[float, float]:
    if args.beta is not None:
        return args.beta, math.log2(1.0 + args.beta)
    if args.rate is not None:
        return rate_to_threshold(args.rate), args.rate
    raise _UsageError("one of --rate or --beta is required")


def _emit(args, payload: dict) -> None:
    fmt = args.output
    if fmt == "json":
        text = json.dumps(payload, indent=2)
    elif fmt == "csv":
        keys = list(payload)
        cells = []
        for k in keys:
            v = payload[k]
            if isinstance(v, (list, tuple)):
                cells.append(";".join(str(x) for x in v))
            else:
                cells.append(str(v))
        text = ",".join(keys) + "\n" + ",".join(cells)
    else:
        lines = []
        for k, v in payload.items():
            if isinstance(v, (list, tuple)):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        text = "\n".join(lines)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_link(args) -> int:
    gains = tuple(float(x) for x in args.barrage.split(",") if x.strip())
    interferers = []
    for entry in args.interferer:
        for token in entry.split(","):
            if not token.strip():
                continue
            omega, prob = token.split(":")
            interferers.append((float(omega), float(prob)))
    beta, _ = _beta_rate_of(args)
    params = ChannelParams(alpha=args.alpha, d0=args.d0, gamma=_gamma_of(args), beta=beta)
    scenario = LinkScenario(barrage_gains=gains, interferers=tuple(interferers))
    payload = {"epsilon": closed_form_outage(scenario, params)}
    if args.mc:
        est, se = monte_carlo_outage(scenario, params, trials=args.mc, seed=args.seed)
        payload["mc_estimate"] = est
        payload["mc_std_error"] = se
        payload["mc_sigma_distance"] = (
            abs(payload["epsilon"] - est) / se if se > 0 else 0.0
        )
    _emit(args, payload)
    return 0


def cmd_analyze(args) -> int:
    beta, rate = _beta_rate_of(args)
    params = ChannelParams(alpha=args.alpha, d0=args.d0, gamma=_gamma_of(args), beta=beta)
    topo = build_line_topology(args.d_cbr, args.relays)
    try:
        run = iterate_fixed_point(
            topo,
            params,
            args.frame,
            xi=args.xi,
            max_frames=args.max_frames,
            max_inner=args.max_inner,
            clamp_near_field=args.clamp_near_field,
            keep_trace=bool(args.trace),
        )
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.residuals:
            for packet, residual in sorted(exc.residuals.items()):
                print(f"  residual packet {packet}: {residual:.3e}", file=sys.stderr)
        return 2
    if args.trace:
        write_trace_csv(run.trace, args.trace)
    if args.dump_chain:
        space = enumerate_states(args.relays)
        gains = path_gain_table(topo, args.alpha, args.d0, args.clamp_near_field)
        blocks = build_transition_set(space, gains, params)
        with open(args.dump_chain, "w", encoding="utf-8") as fh:
            fh.write(debug_dump(space, blocks))
    payload = {
        "epsilon_cbr": run.steady_epsilon_cbr,
        "transport_capacity": transport_capacity(
            args.d_cbr, run.steady_epsilon_cbr, args.frame, rate
        ),
        "rate": rate,
        "frames_to_converge": run.frames_to_converge,
        "per_frame_epsilon": run.per_frame_epsilon,
    }
    _emit(args, payload)
    return 0


def cmd_simulate(args) -> int:
    beta, _ = _beta_rate_of(args)
    config = SimConfig(
        d_cbr=args.d_cbr,
        n_relays=args.relays,
        alpha=args.alpha,
        gamma=_gamma_of(args),
        beta=beta,
        frame_len=args.frame,
        d0=args.d0,
        warmup_frames=args.warmup_frames,
        measured_packets=args.packets,
        seed=args.seed,
        half_duplex=args.half_duplex,
        interference=not args.no_interference,
        clamp_near_field=args.clamp_near_field,
        record_packets=bool(args.packet_trace),
    )
    report = simulate(config)
    if args.packet_trace:
        write_packet_trace(report.packets, args.packet_trace)
    if args.output == "text":
        args.output = "json"  # the report is a structured document
    _emit(args, report.to_dict())
    return 0


def cmd_optimize(args) -> int:
    evaluator = CapacityEvaluator(
        args.d_cbr,
        _gamma_of(args),
        args.alpha,
        d0=args.d0,
        xi=args.xi,
        max_frames=args.max_frames,
        max_inner=args.max_inner,
        clamp_near_field=args.clamp_near_field,
    )
    threads = args.threads
    if threads == 0:
        import os

        threads = os.cpu_count() or 1
    result = optimize(
        args.d_cbr,
        _gamma_of(args),
        args.alpha,
        rate_bounds=(args.r_min, args.r_max),
        relay_bounds=(args.n_min, args.n_max),
        frame_bounds=(args.f_min, args.f_max),
        rate_tol=args.rate_tol,
        threads=threads,
        evaluator=evaluator,
    )
    if args.log:
        write_evaluation_log(evaluator.log, args.log)
    payload = {
        "rate": result.point.rate,
        "n_relays": result.point.n_relays,
        "frame_len": result.point.frame_len,
        "epsilon_cbr": result.epsilon_cbr,
        "transport_capacity": result.transport_capacity,
        "evaluated_points": len(evaluator.log),
    }
    _emit(args, payload)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(argv)
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:  # --help and friends
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ConvergenceError, StateSpaceCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except BarrageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
