"""Command-line entry point: ``kfstream <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analyzer import (
    TimeAlignment,
    Trace,
    default_alignment,
    detect_episodes,
    find_losses,
    format_report,
    read_damaged_frames,
    verdicts_from_damaged,
    verdicts_from_trace,
)
from .netsim import PRESET_NOTES, PRESETS
from .quality import COEFFICIENT_TABLES, dump_tables, load_tables, parse_selector


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--out-dir", type=Path, default=None, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")


def cmd_simulate(args) -> int:
    from .harness.config import load_config
    from .harness.experiment import run_experiment, table_text

    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out_dir is not None:
        config = replace(config, out_dir=args.out_dir)
    report = run_experiment(config, fmt=args.format, jobs=args.jobs)
    sys.stdout.write(table_text(report.summary, args.format))
    return 0


def _parse_align(text: str) -> TimeAlignment:
    packet_ms, _, display_ms = text.partition(":")
    return TimeAlignment(float(packet_ms) - float(display_ms))


def cmd_analyze(args) -> int:
    trace = Trace.read(args.trace)
    tables = COEFFICIENT_TABLES
    if args.coeffs_file:
        tables = load_tables(Path(args.coeffs_file).read_text())
    coeffs = tables[parse_selector(args.coeffs)]
    display = None
    if args.frames:
        damaged, display = read_damaged_frames(args.frames)
        verdicts = verdicts_from_damaged(damaged)
    else:
        verdicts = verdicts_from_trace(trace)
    alignment = _parse_align(args.align) if args.align else default_alignment(trace)
    episodes = detect_episodes(
        verdicts, trace, alignment, coeffs, window_packets=args.window, display_ms=display
    )
    text = format_report(episodes, args.format)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / f"episodes.{args.format}").write_text(text)
    sys.stdout.write(text)
    gaps = find_losses(trace)
    lost = sum(g.length for g in gaps)
    print(f"# {len(gaps)} gaps, {lost} packets lost, offset {alignment.offset_ms:g} ms", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    from .harness.claims import verify_claims

    claims = verify_claims(seed=1 if args.seed is None else args.seed, region=args.region)
    for c in claims:
        print(c.line())
    failed = [c for c in claims if c.passed is False]
    print(f"{sum(c.passed is True for c in claims)} passed, {len(failed)} failed")
    return 1 if failed else 0


def cmd_presets(args) -> int:
    for name, profile in PRESETS.items():
        print(f"{name:15s} {PRESET_NOTES.get(name, '')}")
        if args.verbose:
            print(f"    {profile}")
    return 0


def cmd_coeffs(args) -> int:
    sys.stdout.write(dump_tables())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfstream", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment sweep from a YAML config")
    p.add_argument("config", type=Path)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="report distortion episodes for an .rtptrace")
    p.add_argument("trace", type=Path)
    p.add_argument("--frames", type=Path, help="damaged-frame list (frame_index[,display_ms] per line)")
    p.add_argument("--coeffs", default="divx,wifi", help="codec,network coefficient table")
    p.add_argument("--coeffs-file", type=Path, help="custom coefficient table file")
    p.add_argument("--align", help="PACKET_MS:DISPLAY_MS pair observed at the same moment")
    p.add_argument("--window", type=int, default=100, help="window size in packets (multiple of 100)")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify-claims", help="check the headline claims")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--region", action="store_true", help="always scan the loss/jitter region")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("presets", help="channel presets")
    psub = p.add_subparsers(dest="action", required=True)
    pl = psub.add_parser("list")
    pl.add_argument("--verbose", action="store_true")
    pl.set_defaults(func=cmd_presets)

    p = sub.add_parser("coeffs", help="coefficient tables")
    csub = p.add_subparsers(dest="action", required=True)
    csub.add_parser("show").set_defaults(func=cmd_coeffs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"kfstream: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
