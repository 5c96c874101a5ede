"""Command line: run scenarios, render figures, list presets."""

from __future__ import annotations

import argparse
import os
import sys
import time

from .scenario import ScenarioError, dump_scenario, get_scenario, run_scenario, scenario_presets, write_result
from .sim import validate_stability

EXIT_OK, EXIT_DIRTY, EXIT_INVALID = 0, 1, 2


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4, ``"3-6"`` a range, ``"1,4,9"`` a list."""
    text = text.strip()
    try:
        if "," in text:
            return tuple(int(s) for s in text.split(",") if s.strip())
        if "-" in text[1:]:
            a, b = text.split("-", 1)
            return tuple(range(int(a), int(b) + 1))
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot read seeds from {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return tuple(range(n))


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def apply_overrides(scenario, args):
    kw = {}
    if args.seeds is not None:
        kw["seeds"] = args.seeds
    if args.slots is not None:
        kw["horizon"] = args.slots
        kw["burn_in"] = None
    if args.policy is not None:
        kw["policy"] = args.policy
    if args.bits is not None:
        kw["bid_bits"] = args.bits
    return scenario.replace(**kw) if kw else scenario


def cmd_run(args) -> int:
    try:
        sc = apply_overrides(get_scenario(args.scenario), args)
        out = args.out or os.path.join("results", sc.name)
        t0 = time.time()
        result = run_scenario(sc, force=args.force, workers=args.workers, trace=args.trace)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    paths = write_result(result, out, per_run=not args.summary_only)
    print(f"{sc.name}: {len(result.records)} runs in {time.time() - t0:.1f}s -> {paths['summary']}")
    if not args.no_report:
        from .report import render
        for p in render(paths["summary"], out):
            print(f"  figure {p}")
    for r in result.failures:
        print(f"  FAILED {r.policy} value={r.value} seed={r.seed}: {r.error}", file=sys.stderr)
    if result.total_drops:
        print(f"  {result.total_drops} fragments dropped at q_max", file=sys.stderr)
    return EXIT_OK if result.clean else EXIT_DIRTY


def cmd_report(args) -> int:
    from .report import render
    if not os.path.exists(args.summary):
        print(f"error: no such file {args.summary}", file=sys.stderr)
        return EXIT_INVALID
    for p in render(args.summary, args.out):
        print(p)
    return EXIT_OK


def cmd_presets(args) -> int:
    presets = scenario_presets()
    if args.write:
        os.makedirs(args.write, exist_ok=True)
        for name, sc in presets.items():
            dump_scenario(sc, os.path.join(args.write, f"{name}.yaml"))
        print(f"wrote {len(presets)} scenario files to {args.write}")
        return EXIT_OK
    for name, sc in presets.items():
        n_users = sum(g.count for g in sc.groups)
        print(f"{name:14s} N={n_users:<3d} slots={sc.horizon:<7d} seeds={len(sc.seeds):<3d} "
              f"{sc.sweep_parameter}={list(sc.sweep_values)}  {sc.description}")
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        sc = apply_overrides(get_scenario(args.scenario), args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    bad = 0
    for value in sc.sweep_values:
        rep = validate_stability(sc.config(value, sc.seeds[0]))
        bad += not rep.passed
        print(f"{sc.sweep_parameter}={value}: {rep}")
    return EXIT_OK if bad == 0 else EXIT_DIRTY


def _common(p):
    p.add_argument("--scenario", required=True, help="preset name or scenario YAML file")
    p.add_argument("--seeds", type=parse_seeds, help="count (5), range (0-4) or list (1,2,7)")
    p.add_argument("--slots", type=_positive_int, help="horizon override; burn-in resets to 20%%")
    p.add_argument("--policy", choices=("proposed", "softmax", "mlwdf", "roundrobin"))
    p.add_argument("--bits", type=_positive_int, help="bid width override")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uplinksched", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write CSVs (and figures)")
    _common(p)
    p.add_argument("--out", help="output directory (default results/<scenario>)")
    p.add_argument("--force", action="store_true", help="skip the stability gate")
    p.add_argument("--trace", action="store_true", help="also write per-slot trace CSVs")
    p.add_argument("--workers", type=_positive_int, default=1, help="parallel runs")
    p.add_argument("--summary-only", action="store_true", help="skip per-run CSVs")
    p.add_argument("--no-report", action="store_true", help="skip figures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render figures from a summary CSV")
    p.add_argument("summary")
    p.add_argument("--out", help="figure directory (default: next to the CSV)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("presets", help="list built-in scenarios")
    p.add_argument("--write", metavar="DIR", help="dump every preset as YAML into DIR")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("check", help="stability gate for every sweep value")
    _common(p)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
