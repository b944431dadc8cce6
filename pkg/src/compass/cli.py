"""Command-line front end for simulation, per-stage inspection, and campaigns.

Every subcommand is replayable: the same flags and seed produce byte
identical stdout and output files.  Exit codes: 0 success, 1 pipeline
failure (reconciliation or collection), 2 usage or format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import reconcile
from .channel import SimConfig, generate_channel_pair, read_trace, write_trace
from .passphrase import Passphrase, derive_psk, estimate_strength, map_bits
from .phasefit import EmptySeriesError, extract_eps_g, series_from_text, series_to_text
from .protocol import (
    AccessPointNode,
    AuthenticatorNode,
    CollectionError,
    EnrolleeNode,
    NodeIdentity,
    Role,
    SessionStatus,
    run_handshake,
    write_transcript,
)
from .quantizer import BitString, window_size, quantize

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2

logger = logging.getLogger(__name__)


def _configure_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("COMPASS_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)


def _make_nodes(ssid: str) -> tuple[AuthenticatorNode, EnrolleeNode, AccessPointNode]:
    authenticator = AuthenticatorNode(
        NodeIdentity(Role.AUTHENTICATOR, bytes.fromhex("020000000001"), "authenticator")
    )
    enrollee = EnrolleeNode(
        NodeIdentity(Role.ENROLLEE, bytes.fromhex("020000000002"), "enrollee")
    )
    ap = AccessPointNode(
        NodeIdentity(Role.ACCESS_POINT, bytes.fromhex("020000000003"), "access-point"),
        ssid=ssid,
    )
    return authenticator, enrollee, ap


def _sim_config(args, eve: bool = False) -> SimConfig:
    return SimConfig(
        n_packets=args.packets,
        correlation=args.correlation,
        noise_sigma=args.noise,
        seed=args.seed,
        eve_enabled=eve,
    )


def _cmd_simulate(args) -> int:
    config = _sim_config(args, eve=args.eve)
    trace_a, trace_b, trace_e = generate_channel_pair(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(trace_a, out / "trace_a.csi")
    write_trace(trace_b, out / "trace_b.csi")
    written = ["trace_a.csi", "trace_b.csi"]
    if trace_e is not None:
        write_trace(trace_e, out / "trace_e.csi")
        written.append("trace_e.csi")
    for name in written:
        print(out / name)
    return EXIT_OK


def _cmd_fit(args) -> int:
    trace = read_trace(args.trace_in)
    series = extract_eps_g(trace)
    _emit(series_to_text(series), args.out)
    return EXIT_OK


def _cmd_quantize(args) -> int:
    series = series_from_text(_read_text(args.series_in))
    if args.window is not None:
        w = args.window
    elif args.trace_in is not None:
        w = window_size(read_trace(args.trace_in).rtts())
    else:
        raise ValueError("provide --window or --trace-in to derive the window size")
    bits = quantize(series, w)
    _emit(bits.to_text() + "\n", args.out)
    return EXIT_OK


def _cmd_sketch(args) -> int:
    bits = BitString.from_text(_read_text(args.bits_in))
    published = reconcile.sketch(bits)
    _emit(reconcile.sketch_to_text(published), args.sketch_out)
    return EXIT_OK


def _cmd_recover(args) -> int:
    bits = BitString.from_text(_read_text(args.bits_in))
    published = reconcile.read_sketch(args.sketch_in)
    blocks_needed = -(-max(len(bits), 1) // reconcile.DEFAULT_BCH.block_payload_bits)
    if blocks_needed != len(published.blocks):
        raise ValueError(
            f"bit input pads to {blocks_needed} blocks but sketch holds "
            f"{len(published.blocks)}"
        )
    recovered = reconcile.recover(bits, published)
    _emit(recovered.to_text() + "\n", args.out)
    return EXIT_OK


def _cmd_passphrase(args) -> int:
    bits = BitString.from_text(_read_text(args.bits_in))
    print(map_bits(bits).text)
    return EXIT_OK


def _cmd_psk(args) -> int:
    psk = derive_psk(Passphrase(args.passphrase), args.ssid)
    print(psk.hex())
    return EXIT_OK


def _cmd_handshake(args) -> int:
    authenticator, enrollee, ap = _make_nodes(args.ssid)
    outcome = run_handshake(authenticator, enrollee, ap, _sim_config(args), args.seed)
    if args.transcript_out:
        write_transcript(outcome.transcript, args.transcript_out)
    if outcome.status is SessionStatus.JOINED:
        print(outcome.passphrase2.text)
        return EXIT_OK
    print(outcome.status.value, file=sys.stderr)
    return EXIT_PIPELINE


def _campaign_cell(correlation: float, noise: float, args) -> tuple[float, float, float]:
    successes = 0
    entropies: list[float] = []
    guesses: list[float] = []
    for j in range(args.seeds_per_cell):
        seq = np.random.SeedSequence(
            entropy=args.seed, spawn_key=(int(round(correlation * 1000)), int(round(noise * 1e6)), j)
        )
        run_seed = int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)
        authenticator, enrollee, ap = _make_nodes(args.ssid)
        config = SimConfig(
            n_packets=args.packets, correlation=correlation, noise_sigma=noise, seed=0
        )
        outcome = run_handshake(authenticator, enrollee, ap, config, run_seed)
        if outcome.status is SessionStatus.JOINED:
            successes += 1
            report = estimate_strength(outcome.passphrase2)
            entropies.append(report.entropy_bits)
            guesses.append(report.guess_count_log10)
    rate = successes / args.seeds_per_cell
    mean_entropy = sum(entropies) / len(entropies) if entropies else float("nan")
    mean_guess = sum(guesses) / len(guesses) if guesses else float("nan")
    return rate, mean_entropy, mean_guess


def _cmd_campaign(args) -> int:
    correlations = sorted(float(v) for v in args.correlations.split(","))
    noises = sorted(float(v) for v in args.noises.split(","))
    if not correlations or not noises or args.seeds_per_cell < 1:
        raise ValueError("campaign needs non-empty grids and seeds_per_cell >= 1")
    rows = []
    for correlation in correlations:
        for noise in noises:
            logger.info("campaign cell correlation=%s noise=%s", correlation, noise)
            rate, entropy, guess = _campaign_cell(correlation, noise, args)
            rows.append(
                {
                    "correlation": repr(correlation),
                    "noise": repr(noise),
                    "success_rate": repr(rate),
                    "mean_entropy_bits": repr(entropy),
                    "mean_guess_log10": repr(guess),
                }
            )
    fieldnames = ["correlation", "noise", "success_rate", "mean_entropy_bits", "mean_guess_log10"]
    if args.out is None:
        writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        with open(args.out, "w", encoding="ascii", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def _add_channel_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--correlation", type=float, default=1.0, help="reciprocity strength in [0,1]")
    parser.add_argument("--noise", type=float, default=0.02, help="phase noise std dev, radians")
    parser.add_argument("--packets", type=int, default=200, help="probe packets per collection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compass",
        description="Proximity-bound passphrase agreement pipeline over simulated channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit CSI trace files for two nodes")
    _add_channel_flags(p)
    p.add_argument("--eve", action="store_true", help="also emit the observer trace")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="extract the gain-mismatch series from a trace")
    p.add_argument("--trace-in", required=True, help="COMPASS-CSI v1 input file")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("quantize", help="turn a parameter series into bits")
    p.add_argument("--series-in", required=True, help="`packet_index eps_g` lines")
    p.add_argument("--window", type=int, default=None, help="explicit window size")
    p.add_argument("--trace-in", default=None, help="derive the window from this trace's RTTs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("sketch", help="publish the secure sketch of a bit string")
    p.add_argument("--bits-in", required=True, help="ASCII 0/1 input file")
    p.add_argument("--sketch-out", default=None, help="COMPASS-SS v1 output (default stdout)")
    p.set_defaults(func=_cmd_sketch)

    p = sub.add_parser("recover", help="reconcile bits against a published sketch")
    p.add_argument("--bits-in", required=True)
    p.add_argument("--sketch-in", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("passphrase", help="map reconciled bits to a passphrase")
    p.add_argument("--bits-in", required=True)
    p.set_defaults(func=_cmd_passphrase)

    p = sub.add_parser("psk", help="derive the 256-bit pre-shared key")
    p.add_argument("--passphrase", required=True)
    p.add_argument("--ssid", required=True)
    p.set_defaults(func=_cmd_psk)

    p = sub.add_parser("handshake", help="run the full three-party provisioning flow")
    _add_channel_flags(p)
    p.add_argument("--ssid", default="compass-net")
    p.add_argument("--transcript-out", default=None, help="write the message transcript here")
    p.set_defaults(func=_cmd_handshake)

    p = sub.add_parser("campaign", help="success-rate and strength grid over channel settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlations", default="0.2,0.5,0.8,1.0", help="comma-separated grid")
    p.add_argument("--noises", default="0.02", help="comma-separated grid")
    p.add_argument("--seeds-per-cell", type=int, default=20)
    p.add_argument("--packets", type=int, default=200)
    p.add_argument("--ssid", default="compass-net")
    p.add_argument("--out", default=None, help="CSV output file (default stdout)")
    p.set_defaults(func=_cmd_campaign)

    return parser


def cmd_dispatch(argv: list[str]) -> int:
    """Parse and run one invocation, mapping failures to exit codes."""
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (reconcile.ReconciliationError, CollectionError, EmptySeriesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    return cmd_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
