"""Command-line entry point: ``refine``, ``eval``, ``plot`` and ``synth``.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors.
"""

import argparse
import logging
import sys

from . import io
from .object_model import EmptySurfaceError, OpenSurfaceError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

log = logging.getLogger("contactrefine")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="contactrefine", description="Physics-based refinement of hand-object contact sequences.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("refine", help="refine a tracked sequence")
    r.add_argument("--sequence", required=True, help="line-delimited sequence file")
    r.add_argument("--object", required=True, help="SDF grid file or triangle OBJ mesh")
    r.add_argument("--skeleton", help="key-value skeleton file")
    r.add_argument("--config", help="key-value config file")
    r.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="recompute the report from a refined sequence")
    e.add_argument("--refined", required=True)
    e.add_argument("--report", required=True, help="output directory")
    e.add_argument("--contact-epsilon", type=float, default=0.002, help="contact threshold in meters")

    pl = sub.add_parser("plot", help="draw force and contact-count figures for a report")
    pl.add_argument("--report", required=True, help="directory holding report.csv")

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("scenario", help="builtin name or key-value scenario file")
    s.add_argument("--out", required=True)
    return p


def _refine(args):
    from .pipeline import run_sequence

    report = run_sequence(args.sequence, args.object, args.skeleton, args.config, args.out)
    log.info("refined %d frames into %s", report.summary["frames"], args.out)


def _eval(args):
    from .pipeline import build_report

    if args.contact_epsilon <= 0:
        raise UsageError("--contact-epsilon must be > 0")
    rows = io.read_refined(args.refined)
    try:
        report = build_report(rows, args.contact_epsilon)
    except (KeyError, TypeError, ValueError) as exc:
        raise io.DataError(f"{args.refined}: malformed refined record ({exc})") from None
    report.write(args.report)


def _plot(args):
    from .plotting import plot_report

    plot_report(args.report)


def _synth(args):
    from .synthetic import generate, load_scenario, write_synthetic

    write_synthetic(generate(load_scenario(args.scenario)), args.out)


COMMANDS = {"refine": _refine, "eval": _eval, "plot": _plot, "synth": _synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"contactrefine: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, OpenSurfaceError, EmptySurfaceError, OSError, ValueError) as exc:
        print(f"contactrefine: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
