"""Command-line harness.

`geobft run <scenario.toml> [--seed N] [--out DIR] [--trace]`
    executes one scenario, writes report.json / report.csv and the rendered
    figures into the output directory, and exits nonzero if any built-in
    consistency check failed.

`geobft compare <a.json> <b.json> <asserts.txt>`
    evaluates declarative assertions over two reports (one boolean
    expression per line, `A` and `B` bound to the reports) and exits
    nonzero if any assertion fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import figures, metrics, runner, scenario

log = logging.getLogger("geobft")


class _View:
    """Attribute/index access wrapper so assertions read naturally."""

    def __init__(self, data):
        self._data = data

    def __getattr__(self, name):
        try:
            return _wrap(self._data[name])
        except (KeyError, TypeError):
            raise AttributeError(name) from None

    def __getitem__(self, key):
        return _wrap(self._data[key])


def _wrap(value):
    return _View(value) if isinstance(value, dict) else value


def _latency(report_view, region: str, kind: str):
    row = metrics.latency_row(report_view._data, region, kind)
    if row is None:
        raise KeyError(f"no latency row for ({region}, {kind})")
    return _View(row)


def cmd_run(args) -> int:
    try:
        scn = scenario.load(args.scenario)
    except (OSError, scenario.ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    result = runner.run(scn, seed=args.seed, trace=args.trace)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    report = result.report
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.csv"), "w") as fh:
        fh.write(metrics.to_csv(report))
    rendered = figures.render_all(report, out_dir)
    if args.trace and result.cluster.sim.trace_lines is not None:
        with open(os.path.join(out_dir, "trace.log"), "w") as fh:
            fh.write("\n".join(result.cluster.sim.trace_lines) + "\n")
    log.info("run %s seed %s: %d ops, %.1f simulated ms, %d figures",
             report["name"], report["seed"], report["accepted_ops"],
             report["simulated_ms"], len(rendered))
    for v in result.violations:
        print(f"violation: {v}", file=sys.stderr)
    print(f"report written to {out_dir} "
          f"({report['accepted_ops']} ops, "
          f"{len(result.violations)} violations)")
    return 1 if result.violations else 0


def cmd_compare(args) -> int:
    try:
        with open(args.report_a) as fh:
            a = json.load(fh)
        with open(args.report_b) as fh:
            b = json.load(fh)
        with open(args.asserts) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    env = {
        "A": _View(a), "B": _View(b),
        "latency": _latency,
        "abs": abs, "min": min, "max": max, "round": round,
        "__builtins__": {},
    }
    failures = 0
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            ok = bool(eval(line, env))  # noqa: S307 - restricted namespace
        except SyntaxError as e:
            print(f"{args.asserts}:{lineno}: syntax error: {e}",
                  file=sys.stderr)
            return 2
        except Exception as e:
            print(f"{args.asserts}:{lineno}: error: {e}", file=sys.stderr)
            failures += 1
            continue
        status = "pass" if ok else "FAIL"
        print(f"{status}: {line}")
        if not ok:
            failures += 1
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="geobft",
        description="scenario harness for the geo-replicated framework")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("scenario", help="path to a scenario TOML file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--trace", action="store_true",
                       help="record the delivery trace")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="assert relations between reports")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("asserts")
    p_cmp.set_defaults(fn=cmd_compare)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=os.environ.get("GEOBFT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
