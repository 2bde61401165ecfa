"""``causal-roundtrip`` command line: run a config or print a preset.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .exceptions import ConfigError, DegenerateColumnError, DimensionError, GraphError
from .experiments import ExperimentConfig, preset, run_experiment

log = logging.getLogger("causal_roundtrip")

VALIDATION_ERRORS = (ConfigError, GraphError, DimensionError, DegenerateColumnError)


def _parse_seeds(text: str):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def tables_frame(report: dict) -> pd.DataFrame:
    """Long format: one row per (table, row index, column, value), per-seed values included."""
    records = []
    for name, rows in report.get("tables", {}).items():
        for i, row in enumerate(rows):
            for key, val in row.items():
                records.append({"table": name, "row": i, "column": key, "value": val})
    for row in report.get("per_seed", []):
        seed = row.get("seed")
        for key, val in row.items():
            if key in ("seed", "model"):
                continue
            column = f"{row['model']}.{key}" if "model" in row else key
            records.append({"table": "per_seed", "row": seed, "column": column, "value": val})
    return pd.DataFrame(records, columns=["table", "row", "column", "value"])


def summary_markdown(report: dict) -> str:
    cfg = report["config"]
    lines = [f"# {cfg['experiment']}", "", f"seeds: {cfg['seeds']}, n: {cfg['n']}, data seed: {cfg['data_seed']}", ""]
    if report.get("truth"):
        lines += ["## Ground truth", ""] + [f"- {k}: {v}" for k, v in report["truth"].items()] + [""]
    if report.get("aggregates"):
        lines += ["## Aggregates", "", "| metric | mean | std | median |", "|---|---|---|---|"]
        for k, v in report["aggregates"].items():
            lines.append(f"| {k} | {v['mean']:.6g} | {v['std']:.6g} | {v['median']:.6g} |")
        lines.append("")
    for name, rows in report.get("tables", {}).items():
        if not rows:
            continue
        cols = list(rows[0])
        lines += [f"## {name}", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for r in rows:
            lines.append("| " + " | ".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols) + " |")
        lines.append("")
    if report.get("verdicts"):
        lines += ["## Verdicts", ""] + [f"- {k}: {v}" for k, v in report["verdicts"].items()] + [""]
    for note in report.get("notes", []):
        lines.append(f"Note: {note}")
    lines.append(f"\nwall clock: {report['timing']['wall_clock_s']:.1f} s")
    return "\n".join(lines) + "\n"


def write_outputs(report: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    tables_frame(report).to_csv(out / "tables.csv", index=False)
    (out / "summary.md").write_text(summary_markdown(report))


def _cmd_run(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    if args.seeds is not None:
        if isinstance(raw, dict):
            raw["seeds"] = _parse_seeds(args.seeds)
    cfg = ExperimentConfig.from_dict(raw)
    out = Path(args.out) if args.out else Path(raw.get("output_dir") or f"runs/{cfg.experiment}")
    log.info("running %s with seeds %s", cfg.experiment, cfg.seeds)
    report = run_experiment(cfg)
    write_outputs(report, out)
    print(f"wrote {out / 'report.json'}")
    return 0


def _cmd_preset(args) -> int:
    print(json.dumps(preset(args.name, args.scale), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-roundtrip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--seeds", default=None, help="comma-separated seeds overriding the config")
    r.set_defaults(func=_cmd_run)
    q = sub.add_parser("preset", help="print a preset config as JSON")
    q.add_argument("name")
    q.add_argument("--scale", choices=("full", "desk"), default="full")
    q.set_defaults(func=_cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
