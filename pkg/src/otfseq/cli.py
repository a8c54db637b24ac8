"""Command-line front end: ``otfseq {simulate,bench,verify,export-channel}``.

Exit codes: 0 success, 1 property failure, 2 usage or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .accounting import DENSE_LIMIT
from .channel import build_time_domain, draw_realization, export_channel
from .config import ECHO_MAGIC, ConfigError, config_echo, parse_config
from .errors import DenseSizeError, DimensionError, ProfileError, SingularMatrixError
from .modem_sim import complexity_report, estimate_runtime_s, frame_rng, headline_ratios, run_ber_sweep
from .transforms import DdGrid
from .verify import PROPERTIES, run_properties

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
BENCH_SIZES = (8, 16, 32, 64)
BENCH_DENSE_LIMIT = 2048
SIM_COLUMNS = ("equalizer", "snr_db", "bits", "errors", "ber", "frames", "skipped", "wall_ms", "mult_count")
BENCH_COLUMNS = ("scheme", "M", "N", "P", "mult_count", "wall_ms", "analytic_formula_value")
WARN_SECONDS = 60.0

logger = logging.getLogger("otfseq")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="configuration file (or a previous result CSV)")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed; overrides the configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                        help="override one configuration key, bare or as section.key (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="otfseq", description="Low-complexity ZF/MMSE equalization for OTFS.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo BER sweep")
    sim.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes (results do not depend on it)")
    sim.add_argument("--full-scale", action="store_true", help="64 x 32 grid with 20000 frames")

    bench = sub.add_parser("bench", parents=[common], help="multiply counts and wall times per scheme")
    bench.add_argument("--reps", type=int, default=5, help="timing repetitions; the median is reported")
    bench.add_argument("--dense-limit", type=int, default=BENCH_DENSE_LIMIT, metavar="NM",
                       help=f"largest NM for dense baselines (default {BENCH_DENSE_LIMIT}, hard cap {DENSE_LIMIT})")

    ver = sub.add_parser("verify", parents=[common], help="desk-scale property suite")
    ver.add_argument("--list", action="store_true", help="list property names without running them")
    ver.add_argument("--inject-fault", action="store_true", help="mirror the MMSE block index (self-test)")
    ver.add_argument("properties", nargs="*", metavar="NAME", help="subset of properties to run")

    sub.add_parser("export-channel", parents=[common], help="write the channel of frame 0 as a text record")
    return parser


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = parse_config(args.config, overrides)
    if getattr(args, "full_scale", False):
        cfg = replace(cfg, M=64, N=32, frames=max(cfg.frames, 20000))
    return cfg


def write_sweep_csv(fh, cfg, records):
    fh.write(ECHO_MAGIC + "\n")
    for line in config_echo(cfg):
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SIM_COLUMNS)
    for rec in records:
        writer.writerow([rec.equalizer, repr(rec.snr_db), rec.bits, rec.errors, f"{rec.ber:.10g}",
                         rec.frames, rec.skipped, f"{rec.wall_ms:.3f}", rec.mult_count])


def cmd_simulate(args):
    cfg = _load_config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if not args.full_scale and cfg.frames * cfg.grid.size >= 1_000_000:
        eta = estimate_runtime_s(cfg) / args.jobs
        if eta > WARN_SECONDS:
            logger.warning("large run without --full-scale: estimated %.0f s (%.1f h)", eta, eta / 3600)
    records = run_ber_sweep(cfg, jobs=args.jobs)
    with _output(args.out) as fh:
        write_sweep_csv(fh, cfg, records)
    worst = [r.max_rel_diff for r in records if r.max_rel_diff is not None]
    if worst:
        logger.info("largest low-vs-direct pre-decision gap: %.2e", max(worst))
    return EXIT_OK


def _size_key(item):
    return item.split("=", 1)[0].split(".")[-1].strip()


def cmd_bench(args):
    if args.dense_limit > DENSE_LIMIT:
        raise ConfigError(f"--dense-limit may not exceed {DENSE_LIMIT}")
    # the size grid is swept here, so the configuration is validated at the full-scale size
    sizes = {_size_key(o): o.split("=", 1)[1] for o in args.overrides if "=" in o and _size_key(o) in ("M", "N")}
    others = [o for o in args.overrides if _size_key(o) not in ("M", "N")]
    if args.seed is not None:
        others.append(f"seed={args.seed}")
    base = parse_config(args.config, others + ["M=64", "N=32"])
    if sizes:
        try:
            grid_sizes = [(int(sizes.get("M", base.M)), int(sizes.get("N", base.N)))]
        except ValueError:
            raise ConfigError(f"M/N: cannot parse {sizes} as integers", field="M") from None
    else:
        grid_sizes = [(M, N) for M in BENCH_SIZES for N in BENCH_SIZES]
    rows = []
    for M, N in grid_sizes:
        profile = base.delay_profile()
        if profile.max_delay >= M:
            profile = profile.clipped(M)
        rows += complexity_report(DdGrid(M, N, base.delta_f), profile, f_max=base.f_max, seed=base.seed,
                                  reps=args.reps, dense_limit=args.dense_limit)
    ratios = headline_ratios()
    with _output(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            skipped = r.mult_count is None
            writer.writerow([r.scheme, r.M, r.N, r.P,
                             r.note if skipped else r.mult_count,
                             r.note if skipped else f"{r.wall_ms:.3f}",
                             f"{r.analytic:.10g}"])
        fh.write(f"# analytic direct/ZF cost ratio at M=N=32, P=6: {ratios['zf']:.1f}\n")
        fh.write(f"# analytic direct/MMSE cost ratio at M=N=32, P=6: {ratios['mmse']:.1f}\n")
    if args.out is not None:
        print(f"analytic direct/ZF cost ratio at M=N=32, P=6: {ratios['zf']:.1f}")
        print(f"analytic direct/MMSE cost ratio at M=N=32, P=6: {ratios['mmse']:.1f}")
    return EXIT_OK


def cmd_verify(args):
    if args.list:
        for name in PROPERTIES:
            print(name)
        return EXIT_OK
    unknown = [p for p in args.properties if p not in PROPERTIES]
    if unknown:
        raise ConfigError(f"unknown properties {unknown}; see --list")
    buf = io.StringIO()

    def report(line):
        print(line, flush=True)
        buf.write(line + "\n")

    results = run_properties(args.properties or None, fault=args.inject_fault, report=report)
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(buf.getvalue())
    failed = [name for name, (ok, _) in results.items() if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_PROPERTY if failed else EXIT_OK


def cmd_export_channel(args):
    cfg = _load_config(args)
    profile = cfg.delay_profile()
    rng = frame_rng(cfg.seed, 0)
    ch = build_time_domain(draw_realization(profile, cfg.f_max, rng), profile, cfg.grid)
    text = export_channel(ch)
    with _output(args.out) as fh:
        fh.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "verify": cmd_verify,
    "export-channel": cmd_export_channel,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"otfseq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="otfseq: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ProfileError, DimensionError) as exc:
        print(f"otfseq: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularMatrixError, DenseSizeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"otfseq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"otfseq: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
