"""Command-line entry point: ``xgap <command>`` or ``python -m xgap <command>``.

Exit codes: 0 success, 1 I/O or runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__, runs
from .ingest import LogFormatError, MappingPolicy, assign_categories, parse_response_log
from .metrics import PI_SOFT_RULES
from .simulate import MIN_TRIALS, thread_count

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _trials(text: str) -> int:
    v = int(text)
    if v < MIN_TRIALS:
        raise argparse.ArgumentTypeError(f"must be >= {MIN_TRIALS}, got {v}")
    return v


def _common(p: argparse.ArgumentParser, spec=False, surrogate=False) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: write to stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    if spec:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--preset", help=f"bundled preset: {', '.join(runs.preset_names())}")
        g.add_argument("--grid", type=Path, help="JSON grid file")
    if surrogate:
        p.add_argument("--gumbel-surrogate-variance", type=float, default=None,
                       help="override the Gaussian surrogate variance of every bound")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xgap", description="Cross-lingual agreement simulations and log analysis.")
    parser.add_argument("--version", action="version", version=f"xgap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte-Carlo agreement curves over a parameter grid")
    _common(p, spec=True, surrogate=True)
    p.add_argument("--trials", type=_trials, default=None)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("bounds", help="closed-form bounds over a parameter grid")
    _common(p, spec=True, surrogate=True)

    p = sub.add_parser("analyze", help="metrics over a JSON-Lines response log")
    _common(p)
    p.add_argument("log", type=Path)
    p.add_argument("--pi-soft-rule", choices=PI_SOFT_RULES, default="reconciled")
    p.add_argument("--mapping", type=Path, help="JSON table of canonical answer forms")
    p.add_argument("--extract-years", action="store_true")
    p.add_argument("--bins", type=int, default=5)

    p = sub.add_parser("pi-recovery", help="recover a known mixing coefficient from synthetic data")
    _common(p)
    p.add_argument("--true-pi", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--pi-soft-rule", choices=PI_SOFT_RULES, default="reconciled")

    p = sub.add_parser("normalize", help="fill categories of a response log with normalized answers")
    p.add_argument("log", type=Path)
    p.add_argument("--mapping", type=Path)
    p.add_argument("--extract-years", action="store_true")
    p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    return parser


def _cell(v) -> str:
    return "" if v is None else str(v)


def render_csv(table: list[dict], config: dict) -> str:
    buf = io.StringIO()
    for k in sorted(config):
        buf.write(f"# {k}: {json.dumps(config[k], sort_keys=True)}\n")
    if not table:
        buf.write("# (no rows)\n")
        return buf.getvalue()
    fields = list(table[0])
    for row in table[1:]:
        fields += [k for k in row if k not in fields]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: _cell(row.get(k)) for k in fields})
    return buf.getvalue()


def read_csv(text: str) -> tuple[dict, list[dict]]:
    """Inverse of ``render_csv``: (config, rows of strings)."""
    config, body = {}, []
    for line in text.splitlines(keepends=True):
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            if value:
                config[key] = json.loads(value)
        else:
            body.append(line)
    return config, list(csv.DictReader(body))


def render_json(tables: dict[str, list[dict]], config: dict) -> str:
    return json.dumps({"config": config, "results": tables}, indent=2, sort_keys=False) + "\n"


def emit(tables: dict[str, list[dict]], config: dict, fmt: str, out: Path | None, stem: str) -> list[Path]:
    """Write tables to ``out`` (a directory) or stdout; returns written paths."""
    written = []
    if fmt == "json":
        text = render_json(tables, config)
        if out is None:
            sys.stdout.write(text)
        else:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{stem}.json"
            path.write_text(text, encoding="utf-8")
            written.append(path)
        return written
    for name, table in tables.items():
        text = render_csv(table, {**config, "table": name})
        if out is None:
            sys.stdout.write(text + "\n")
        else:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{stem}-{name}.csv" if len(tables) > 1 else out / f"{stem}.csv"
            path.write_text(text, encoding="utf-8")
            written.append(path)
    return written


def _load_spec(args, trials=None) -> dict:
    if args.grid is not None:
        spec = runs.load_grid(args.grid)
    else:
        spec = runs.load_preset(args.preset or "smoke")
    return runs.resolve_spec(spec, trials)


def _policy(path):
    return MappingPolicy.from_json(path) if path is not None else None


def _cmd_simulate(args) -> dict:
    spec = _load_spec(args, args.trials)
    threads = thread_count(args.threads)
    config = {"command": "simulate", "version": __version__, "seed": args.seed, "threads": threads,
              "surrogate_variance": args.gumbel_surrogate_variance, "spec": spec}
    tables = runs.run_simulate(spec, args.seed, args.gumbel_surrogate_variance, threads)
    return config, tables


def _cmd_bounds(args):
    spec = _load_spec(args)
    config = {"command": "bounds", "version": __version__,
              "surrogate_variance": args.gumbel_surrogate_variance, "spec": spec}
    return config, runs.run_bounds(spec, args.gumbel_surrogate_variance)


def _read_log(path: Path):
    with open(path, "rb") as f:
        return parse_response_log(f)


def _cmd_analyze(args):
    if args.bins < 3:
        raise runs.ConfigError("--bins must be >= 3")
    records = _read_log(args.log)
    policy = _policy(args.mapping)
    config = {"command": "analyze", "version": __version__, "seed": args.seed, "log": str(args.log),
              "pi_soft_rule": args.pi_soft_rule, "mapping": None if args.mapping is None else str(args.mapping),
              "extract_years": args.extract_years, "bins": args.bins}
    tables = runs.run_analyze(records, policy, args.pi_soft_rule, args.extract_years, args.bins,
                              seed=args.seed)
    return config, tables


def _cmd_pi_recovery(args):
    if args.questions < 50:
        raise runs.ConfigError("--questions must be >= 50")
    if args.draws < 1:
        raise runs.ConfigError("--draws must be >= 1")
    config = {"command": "pi-recovery", "version": __version__, "seed": args.seed,
              "true_pi": args.true_pi, "questions": args.questions, "draws": args.draws,
              "pi_soft_rule": args.pi_soft_rule}
    return config, runs.run_pi_recovery(args.true_pi, args.questions, args.draws, args.seed,
                                        args.pi_soft_rule)


def _cmd_normalize(args) -> int:
    records = assign_categories(_read_log(args.log), _policy(args.mapping), args.extract_years)
    text = "".join(r.to_json() + "\n" for r in records)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


_COMMANDS = {"simulate": _cmd_simulate, "bounds": _cmd_bounds, "analyze": _cmd_analyze,
             "pi-recovery": _cmd_pi_recovery}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "normalize":
            return _cmd_normalize(args)
        config, tables = _COMMANDS[args.command](args)
        emit(tables, config, args.format, args.out, args.command)
    except LogFormatError as e:
        print(f"xgap: invalid log {args.log}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (runs.ConfigError, ValueError) as e:
        print(f"xgap: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"xgap: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except RuntimeError as e:
        print(f"xgap: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
