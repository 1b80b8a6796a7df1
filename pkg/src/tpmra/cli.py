"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 sync_error (watchdog),
4 transport error, 5 protocol error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench, tpm
from .attacks import Strategy
from .errors import ProtocolError, SyncError, TransportError
from .lfsr import parse_seed
from .session import (KeyConsumer, RekeyService, Session, Status, _check_wire_params, exchange_round,
                      handshake, run_party)
from .tpm import Role, TieBreak, TpmParams
from .transport import channel_pair, connect, listen

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SYNC_ERROR = 3
EXIT_TRANSPORT = 4
EXIT_PROTOCOL = 5

log = logging.getLogger("tpmra")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpmra", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mode", choices=[m.value for m in bench.Mode], default="sync")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--l", type=int, default=3)
    p.add_argument("--b", type=int, default=32)
    p.add_argument("--tmin", type=int, default=96)
    p.add_argument("--watchdog", type=int, default=None, help="default: 10x the expected sync time")
    p.add_argument("--tie-break", choices=[t.value for t in TieBreak], default="common")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", default=None, help="32-bit hex; base seed for experiments, input seed for exchange")
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="flipping")
    p.add_argument("--t-avg", type=float, default=400.0)
    p.add_argument("--bandwidth-bps", type=float, default=None)
    p.add_argument("--overhead-bits", type=int, default=88)
    p.add_argument("--compute-rate", type=float, default=None, help="iterations per second")
    p.add_argument("--half-duplex", action="store_true")
    p.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--rekey", type=int, default=0, metavar="N", help="deliver N keys in continuous mode")
    p.add_argument("--restart", choices=["continue", "reset"], default="continue")
    p.add_argument("--authenticated", action="store_true", help="pre-shared input seed, never sent in HELLO")
    p.add_argument("--weight-seed", type=int, default=None, help="seed for the initial weights (default: OS entropy)")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _params(args, role=Role.A) -> TpmParams:
    return TpmParams(args.k, args.n, args.l, args.b, args.tmin, args.watchdog, role, args.tie_break)


def run_exchange(args) -> int:
    if bool(args.listen) == bool(args.connect):
        raise ValueError("exchange mode needs exactly one of --listen or --connect")
    role = Role.A if args.connect else Role.B
    params = _params(args, role)
    _check_wire_params(params)
    seed = parse_seed(args.seed) if args.seed else None
    if seed is None and (role is Role.A or args.authenticated):
        raise ValueError("--seed is required for the connecting side and in authenticated mode")
    rng = np.random.default_rng(args.weight_seed)
    weights = tpm.init_weights(rng, params)

    ep = connect(args.connect, args.timeout) if args.connect else listen(args.listen, args.timeout)
    ep.default_timeout = args.timeout
    with ep:
        if args.rekey <= 0:
            session = run_party(ep, params, weights, seed, authenticated=args.authenticated)
            key = session.key_queue.history[0]
            print(f"role={role.value} key={key.fingerprint()} bits={key.nbits} iterations={session.total_iterations}")
            return EXIT_OK

        input_seed = handshake(ep, role, seed, args.authenticated)
        session = Session(params, weights, input_seed, continuous=True, restart=args.restart, rng=rng).start()

        def pump() -> Status:
            return exchange_round(session, ep)

        consumer_ep, service_ep = channel_pair()
        service = RekeyService(session, service_ep, pump, max_keys=args.rekey)
        consumer = KeyConsumer(consumer_ep, service)
        for i in range(args.rekey):
            key_id, key = consumer.request_key()
            print(f"role={role.value} key[{i}] id={key_id} {key.fingerprint()} iterations={session.total_iterations}")
            consumer.commit(key_id)
    return EXIT_OK


def run_experiment(args) -> int:
    mode = bench.Mode(args.mode)
    seed = parse_seed(args.seed) if args.seed else 0x5EED
    config = bench.ExperimentConfig(mode, _params(args), args.trials, seed, args.out, args.bandwidth_bps,
                                    args.overhead_bits, Strategy(args.strategy))
    if mode is bench.Mode.SYNC:
        print(bench.run_sync_trials(config).report())
    elif mode in (bench.Mode.SCALING_L, bench.Mode.SCALING_N):
        print(bench.run_scaling_study(config).report())
    elif mode is bench.Mode.ATTACK:
        print(bench.attack_report(bench.run_attack_sweep(config)))
    elif mode is bench.Mode.THROUGHPUT:
        if args.bandwidth_bps is None:
            print(bench.throughput_table(args.t_avg, args.b, args.overhead_bits, args.compute_rate, args.half_duplex))
        else:
            r = bench.throughput_model(bench.ThroughputInputs(args.t_avg, args.b, args.overhead_bits, args.bandwidth_bps,
                                                              args.compute_rate, args.half_duplex))
            print(f"packages_per_key={r.packages_per_key} bits_per_key={r.bits_per_key} "
                  f"channel_limited={r.channel_limited:.1f} compute_limited={r.compute_limited:.1f} "
                  f"effective={r.effective:.1f} bottleneck={r.bottleneck}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.mode == bench.Mode.EXCHANGE.value:
            return run_exchange(args)
        return run_experiment(args)
    except SyncError as exc:
        print(f"sync_error: {exc}", file=sys.stderr)
        return EXIT_SYNC_ERROR
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
