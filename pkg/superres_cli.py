#!/usr/bin/env python3
"""
SUPERRES CLI: precision limits and estimation for two incoherent point sources.
Every sub-command writes data files (CSV/JSON, optionally a small SVG plot) and records the run in the
ledger under --ledger-dir.
"""
import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from src.cli.commands import COMMANDS
from src.cli.config import load_run_config
from src.core.errors import ConfigError, SuperresError
from src.core.run_ledger import RunLedger, latest_ledger_file

LOG_DIR = "./logs"
VERSION = "1.0.0"

# ─── ANSI Colors ──────────────────────────────────────────────────────────────
PRIMARY = "\033[38;5;33m"
YELLOW = "\033[38;5;220m"
CYAN   = "\033[96m"
GREEN  = "\033[92m"
RED    = "\033[91m"
GRAY   = "\033[90m"
RESET  = "\033[0m"
BOLD   = "\033[1m"
DIM    = "\033[2m"

TAGLINE = f"{PRIMARY}{BOLD}superres{RESET}{GRAY}  ·  two-source precision limits  ·  v{VERSION}{RESET}"


# ─── Output Helpers ───────────────────────────────────────────────────────────
# status goes to stderr; stdout is reserved for data when --out is not given
def ok(msg):   print(f"  {GREEN}✔{RESET}  {msg}", file=sys.stderr)
def err(msg):  print(f"  {RED}✖{RESET}  {msg}", file=sys.stderr)
def warn(msg): print(f"  {YELLOW}⚠{RESET}  {msg}", file=sys.stderr)
def info(msg): print(f"  {CYAN}ℹ{RESET}  {msg}", file=sys.stderr)


def print_banner():
    print(TAGLINE, file=sys.stderr)


def configure_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    for existing in list(root.handlers):
        if getattr(existing, "_superres", False):
            root.removeHandler(existing)
    handler._superres = True
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


# ─── Command Handlers ─────────────────────────────────────────────────────────
RUN_FLAGS = (
    "psf", "sigma", "dim", "nodes", "s0", "s", "q", "phi", "x0", "points", "span",
    "photons", "reps", "seed", "fraction", "out", "format", "normalize", "svg", "jobs",
)


def run_command(args) -> int:
    flags = {name: getattr(args, name) for name in RUN_FLAGS if hasattr(args, name)}
    config = load_run_config(args.command, flags, getattr(args, "config", None))

    ledger = RunLedger(args.ledger_dir)
    ledger.log_start(args.command, config.resolved())
    started = time.perf_counter()
    try:
        result = COMMANDS[args.command](config)
    except SuperresError as e:
        ledger.log_failure(args.command, e)
        ledger.close()
        err(f"{args.command} failed: {e}")
        return 1
    ledger.log_finish(args.command, result.outputs, result.flags, time.perf_counter() - started)
    ledger.close()

    for path in result.outputs:
        ok(f"wrote {CYAN}{path}{RESET}")
    if result.flags:
        warn(f"run flagged: {', '.join(result.flags)}")
        return 1
    return 0


def cmd_logs(args) -> int:
    latest = latest_ledger_file(args.ledger_dir)
    if latest is None:
        warn(f"No run ledger found in {args.ledger_dir}/")
        return 0

    info(f"Showing last {args.tail} entries from {CYAN}{os.path.basename(latest)}{RESET}")
    with open(latest, "r") as f:
        lines = [line.strip() for line in f if line.strip()]
    for line in lines[-args.tail:]:
        # colour by event type
        if "RUN_FAILED" in line:
            print(f"    {RED}●{RESET}  {line}")
        elif "RUN_FLAGGED" in line:
            print(f"    {YELLOW}●{RESET}  {line}")
        elif "RUN_COMPLETE" in line:
            print(f"    {GREEN}●{RESET}  {line}")
        else:
            print(f"    {GRAY}●{RESET}  {line}")
    return 0


# ─── Argument Parser ──────────────────────────────────────────────────────────
class UsageArgumentParser(argparse.ArgumentParser):
    """Parser that reports usage problems as ConfigError instead of exiting."""
    def error(self, message):
        raise ConfigError(f"error: arguments: {message}")


def _add_run_flags(p: argparse.ArgumentParser):
    # unset flags stay absent so config-file and sub-command defaults are not overridden
    s = argparse.SUPPRESS
    p.add_argument("--psf", default=s, help="gaussian or table:<path>")
    p.add_argument("--sigma", type=float, default=s)
    p.add_argument("--dim", type=int, default=s, help="basis dimension N (default 30, or 5 with a tabulated PSF, its maximum)")
    p.add_argument("--nodes", type=int, default=s, help="Gauss-Hermite nodes")
    p.add_argument("--s0", type=float, default=s)
    p.add_argument("--s", default=s, help="value, comma list, or min:max:count[:log]")
    p.add_argument("--q", default=s)
    p.add_argument("--phi", default=s, help="angles, e.g. 9pi/20 or pi/4,7pi/20")
    p.add_argument("--x0", default=s)
    p.add_argument("--points", type=int, default=s)
    p.add_argument("--span", type=float, default=s, help="half width of the default x0 grid")
    p.add_argument("--photons", type=int, default=s)
    p.add_argument("--reps", type=int, default=s)
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--fraction", type=float, default=s, help="photon share of adaptive stage 1")
    p.add_argument("--out", default=s)
    p.add_argument("--format", choices=("csv", "json"), default=s)
    p.add_argument("--normalize", action="store_true", default=s)
    p.add_argument("--svg", default=s)
    p.add_argument("--jobs", type=int, default=s)
    p.add_argument("--config", default=s, help="JSON file of run settings; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ledger-dir", default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = UsageArgumentParser(prog="superres_cli.py", parents=[common])
    parser.add_argument("-v", "--version", action="version", version=f"superres-cli v{VERSION}")
    sub = parser.add_subparsers(dest="command", parser_class=UsageArgumentParser)

    for name, summary in (
        ("qfim", "quantum Fisher matrix by both paths, precisions, compatibility"),
        ("scan-displacement", "measured precisions against the displacement x0, with Lorentzian fits"),
        ("scan-separation", "measured precisions at the optimal displacement against s"),
        ("robustness", "misaligned measurements against the quantum and direct-imaging limits"),
        ("simulate", "Monte Carlo maximum-likelihood runs against the Cramer-Rao bounds"),
        ("adaptive", "two-stage adaptive estimation against direct imaging alone"),
    ):
        p = sub.add_parser(name, help=summary, parents=[common])
        _add_run_flags(p)
        p.set_defaults(func=run_command)

    p = sub.add_parser("logs", help="show recent run ledger entries", parents=[common])
    p.add_argument("--tail", type=int, default=20)
    p.set_defaults(func=cmd_logs)
    return parser


# ─── Entry Point ──────────────────────────────────────────────────────────────
def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2

    args.ledger_dir = getattr(args, "ledger_dir", LOG_DIR)
    configure_logging(getattr(args, "verbose", False))
    if args.command != "logs":
        print_banner()
    try:
        return args.func(args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
