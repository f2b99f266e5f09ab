"""Command-line entry point ``funnel-select``.

Exit status: 0 when every enabled check passes, 1 when a check fails,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .runner import PHASES, UsageError, phases_for, run

SUBCOMMANDS = ("axioms", "reduce", "semigroup", "clairaut", "local", "all", "run")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags below override its keys")
    common.add_argument("--out-dir", help="directory for CSV/JSON artifacts and report.json")
    common.add_argument("--problem", choices=["clairaut", "sqrt_abs", "riccati_blowup", "synthetic_tree"])
    common.add_argument("--n-max", type=int, help="reduction.n_max")
    common.add_argument("--eta-tie", type=float, help="reduction.eta_tie")
    common.add_argument("--eps-singleton", type=float, help="reduction.eps_singleton")
    common.add_argument("--guard-gap", type=float, help="local.guard_gap")
    common.add_argument("--phi-family", choices=["bumps", "sigmoids", "mixed"], help="phi.family")
    common.add_argument("--json", action="store_true", help="print the full report as JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="funnel-select",
        description="Select semi-processes from solution funnels and verify their semigroup law.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "axioms": "check shift and splice closure on sampled nodes",
        "reduce": "reduce the root funnel to a single selected path",
        "semigroup": "verify the semigroup law on random triples",
        "clairaut": "classify the selected Clairaut semi-process",
        "local": "local funnels with blow-up (riccati_blowup and a branching log blow-up)",
        "all": "every phase that applies to the problem",
        "run": "same as all; pick the problem with --problem",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    out: dict = {}

    def put(section: str, key: str, value) -> None:
        if value is not None:
            out.setdefault(section, {})[key] = value

    if args.problem is not None:
        out["problem"] = args.problem
    put("reduction", "n_max", args.n_max)
    put("reduction", "eta_tie", args.eta_tie)
    put("reduction", "eps_singleton", args.eps_singleton)
    put("local", "guard_gap", args.guard_gap)
    put("phi", "family", args.phi_family)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = overrides_from_args(args)
        if args.command == "clairaut" and "problem" not in overrides:
            overrides["problem"] = "clairaut"
        if args.command == "local" and "problem" not in overrides:
            overrides["problem"] = "riccati_blowup"
        cfg = load_config(args.config, overrides)
        if args.command in ("all", "run"):
            phases = phases_for(cfg.problem)
        else:
            phases = [args.command]
        assert all(p in PHASES for p in phases)
        report = run(cfg, phases, args.out_dir)
    except (ConfigError, UsageError) as exc:
        print(f"funnel-select: error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(report.to_json())
    else:
        for line in report.summary_lines():
            print(line)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
