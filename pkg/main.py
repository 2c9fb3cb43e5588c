#!/usr/bin/env python3
"""CLI entry point: protocol server, simulated client, benchmarks, oracle and QoS."""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import TypeAdapter, ValidationError

from controller import Controller, ControllerSettings
from evals.harness import ExperimentConfig, brute_force_oracle, qos_from_csv, run_experiment, write_summary
from protocol.messages import Chosen
from protocol.transport import SessionServer, run_client
from simulator.client import SimulatedClient
from simulator.scenario import load_scenario
from tuning.sampler import Strategy
from utils.config import Settings, setup_logging
from utils.errors import ConfigurationError, KnobtuneError
from utils.file_utils import next_run_dir
from utils.models import Measurement

logger = logging.getLogger(__name__)


def parse_seeds(text: str) -> List[int]:
    """'40' -> 0..39, '5-9' -> 5..9, '1,4,7' -> those seeds"""
    text = text.strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if "-" in text[1:]:
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return list(range(int(text)))
    except ValueError:
        raise ConfigurationError(f"cannot parse seeds '{text}'") from None


def load_warm_start(path: Optional[str]) -> List[Measurement]:
    if not path:
        return []
    try:
        return TypeAdapter(List[Measurement]).validate_json(Path(path).read_bytes())
    except (OSError, ValidationError) as e:
        raise ConfigurationError(f"warm start file {path}: {e}") from None


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knobtune", description=__doc__)
    parser.add_argument("--log-level", default=settings.log_level)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the sampling server")
    serve.add_argument("--host", default=settings.host)
    serve.add_argument("--port", type=int, default=settings.port)
    serve.add_argument("--n", type=int, default=settings.n_rounds, help="sampling rounds per phase")
    serve.add_argument("--m", type=int, default=settings.init_rounds, help="LHS rounds (default max(3, N/3))")
    serve.add_argument("--strategy", default=settings.strategy.value, choices=[s.value for s in Strategy])
    serve.add_argument("--delta", type=float, default=settings.delta)
    serve.add_argument("--consecutive", type=int, default=settings.consecutive)
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--interval-seconds", type=float, default=3.0)
    serve.add_argument("--warm-start", help="JSON array of Measurement records for the first phase")

    simulate = sub.add_parser("simulate", help="run a simulated workload against a server")
    simulate.add_argument("--scenario", required=True)
    simulate.add_argument("--server", default=f"{settings.host}:{settings.port}")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--poll", type=float, default=settings.poll_seconds, help="seconds per monitoring interval")

    bench = sub.add_parser("bench", help="multi-seed in-process benchmark")
    bench.add_argument("--scenario", required=True)
    bench.add_argument("--strategies", default="hybrid,random")
    bench.add_argument("--seeds", default="40", help="count, lo-hi range or comma list")
    bench.add_argument("--n", type=int, default=settings.n_rounds)
    bench.add_argument("--m", type=int, default=settings.init_rounds)
    bench.add_argument("--delta", type=float, default=settings.delta)
    bench.add_argument("--consecutive", type=int, default=settings.consecutive)
    bench.add_argument("--noise-cv", type=float, default=None)
    bench.add_argument("--warm-start", action="store_true")
    bench.add_argument("--events-dir")
    bench.add_argument("--workers", type=int, default=settings.workers)
    bench.add_argument("--out", help="output directory (default: a fresh results/bench.N)")

    oracle = sub.add_parser("oracle", help="exhaustive optimum of a scenario phase")
    oracle.add_argument("--scenario", required=True)
    oracle.add_argument("--phase", type=int, default=0)

    qos = sub.add_parser("qos", help="recompute the QoS summary from trials.csv")
    qos.add_argument("--trials-csv", required=True)
    qos.add_argument("--out", help="directory to write summary.csv into")
    return parser


def cmd_serve(args, settings: Settings) -> int:
    controller_settings = ControllerSettings(
        n_rounds=args.n, init_rounds=args.m, strategy=args.strategy,
        delta=args.delta, consecutive=args.consecutive, seed=args.seed,
    )
    warm = load_warm_start(args.warm_start)
    server = SessionServer(
        lambda session_id: Controller(controller_settings, session_id, warm),
        timeout_seconds=settings.timeout_intervals * args.interval_seconds,
    )
    try:
        asyncio.run(server.serve_forever(args.host, args.port))
    except KeyboardInterrupt:
        logger.info("server stopped")
    return 0


def cmd_simulate(args, settings: Settings) -> int:
    scenario = load_scenario(args.scenario)
    host, _, port = args.server.rpartition(":")
    client = SimulatedClient(scenario, session_seed=args.seed)
    reply_timeout = settings.timeout_intervals * scenario.interval_seconds
    asyncio.run(run_client(host or settings.host, int(port), client, args.poll, reply_timeout))
    chosen = [m for m in client.trace if isinstance(m, Chosen)]
    print(f"ran {client.interval} of {scenario.total_intervals} intervals")
    for i, m in enumerate(chosen):
        print(f"  choice {i}: knob {list(m.knob)} values {scenario.space.values_of(m.knob)} o_ref={m.o_ref:.4g}")
    return 0


def cmd_bench(args, settings: Settings) -> int:
    config = ExperimentConfig(
        scenario=args.scenario,
        strategies=[s.strip() for s in args.strategies.split(",") if s.strip()],
        seeds=parse_seeds(args.seeds),
        n_rounds=args.n,
        init_rounds=args.m,
        delta=args.delta,
        consecutive=args.consecutive,
        noise_cv=args.noise_cv,
        warm_start=args.warm_start,
        workers=args.workers,
        events_dir=args.events_dir,
    )
    out = args.out or next_run_dir("results", "bench")
    result = run_experiment(config, out)
    _print_reports(result.reports)
    failed = [t for t in result.trials if t.error]
    if failed:
        print(f"{len(failed)} trial(s) did not complete, see log")
    print("wrote " + ", ".join(str(p) for p in result.out_files))
    return 0


def cmd_oracle(args, settings: Settings) -> int:
    scenario = load_scenario(args.scenario)
    best = brute_force_oracle(scenario, args.phase)
    print(json.dumps({
        "phase": args.phase,
        "knob": list(best.knob),
        "values": dict(zip(scenario.space.names, scenario.space.values_of(best.knob))),
        "objective": best.value,
    }))
    return 0


def cmd_qos(args, settings: Settings) -> int:
    reports = qos_from_csv(args.trials_csv)
    _print_reports(reports)
    if args.out:
        print(f"wrote {write_summary(reports, args.out)}")
    return 0


def _print_reports(reports) -> None:
    print(f"{'scenario':<20} {'strategy':<18} {'qos_post':>9} {'qos_incl':>9} {'viol':>6} {'n':>4}")
    for r in reports:
        print(f"{r.scenario:<20} {r.strategy:<18} {r.mean_qos_post:9.2f} {r.mean_qos_incl:9.2f} "
              f"{r.violation_rate:6.3f} {r.n_trials:4d}")


COMMANDS = {
    "serve": cmd_serve,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "oracle": cmd_oracle,
    "qos": cmd_qos,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = Settings.from_env()
        args = build_parser(settings).parse_args(argv)
        setup_logging(args.log_level)
        return COMMANDS[args.command](args, settings)
    except (KnobtuneError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
