"""Command line entry point: ``fairlens audit | inject | experiment``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from .detector import DEFAULT_EPSILON, assess
from .harness import ConfigError, load_configs, run_grid, write_outputs, check_rq_criteria
from .inject import InjectionSpec, inject_bias
from .learner import Hyperparams, fit, predict
from .metrics import AttributeMetrics, FairnessReport, fairness_report
from .reweigh import STRATEGIES, compute_weights

logger = logging.getLogger("fairlens")

EXIT_UNFAIR = 1
EXIT_ERROR = 2


def _median_report(reports: list[FairnessReport]) -> FairnessReport:
    """Per-metric medians over repeats; an attribute undefined in any repeat stays undefined."""
    attrs = []
    for j, first in enumerate(reports[0].attributes):
        per = [r.attributes[j] for r in reports]
        errors = [m.error for m in per if m.error]
        if errors:
            attrs.append(AttributeMetrics(first.attribute, None, None, None, error=errors[0]))
            continue
        attrs.append(AttributeMetrics(
            first.attribute,
            float(np.median([m.eod for m in per])),
            float(np.median([m.aod for m in per])),
            float(np.median([m.spd for m in per])),
        ))
    return FairnessReport(
        tuple(attrs),
        float(np.median([r.accuracy for r in reports])),
        float(np.median([r.f1 for r in reports])),
    )


def cmd_audit(args) -> int:
    schema = ds.load_schema(args.schema)
    table = ds.load_dataset(args.data, schema)
    hp = Hyperparams(l2_strength=args.l2)
    requested = args.attribute or schema.sensitive_names
    for name in requested:
        schema.sensitive_index(name)

    reports = []
    for r in range(args.repeats):
        train, test = ds.split(table, args.train_fraction, args.seed + r)
        weights = compute_weights(train, args.reweigh)
        train, test, _ = ds.standardize(train, test)
        model = fit(train, weights, hp)
        y_pred = predict(model, test.features, hp.decision_threshold)
        reports.append(fairness_report(test.labels, y_pred, test.sensitive, test.sensitive_names, strict=False))
        if args.model_out and r == 0:
            model.save(args.model_out)
    report = _median_report(reports)
    verdict = assess(report, args.epsilon, [tuple(s.names) for s in schema.sensitive])

    print(f"accuracy {report.accuracy:.4f}  f1 {report.f1:.4f}  ({args.repeats} repeat(s), reweigh={args.reweigh})")
    for name in requested:
        m, v = report[name], verdict[name]
        if m.eod is not None:
            print(f"  {name}: EOD {m.eod:+.4f}  AOD {m.aod:+.4f}  SPD {m.spd:+.4f}")
        print(f"  {v.describe()}")
    doc = {
        "data": str(args.data),
        "schema": schema.name or str(args.schema),
        "reweigh": args.reweigh,
        "repeats": args.repeats,
        "seed": args.seed,
        "report": report.to_json(),
        "verdict": verdict.to_json(),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_UNFAIR if any(verdict[n].unfair for n in requested) else 0


def cmd_inject(args) -> int:
    schema = ds.load_schema(args.schema)
    raw = ds.load_csv(args.data, schema)
    table = ds.encode(raw, schema)
    attr = schema.sensitive_index(args.attribute)
    side = schema.sensitive[attr].side_of(args.favor)
    spec = InjectionSpec(attr, side, args.degree, args.seed)
    _, log = inject_bias(table, spec)

    pos = schema.positive_label
    neg = ds.negative_label_for(raw, schema)
    overrides = {int(table.row_ids[i]): {schema.label_column: pos} for i in log.promoted}
    overrides.update({int(table.row_ids[i]): {schema.label_column: neg} for i in log.demoted})
    ds.write_raw_csv(raw, args.out, overrides)

    doc = log.to_json(table)
    doc.update(favored=schema.sensitive[attr].names[side], seed=args.seed, source=str(args.data))
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".flips.json")
    log_path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"flipped {len(log.promoted)} rows to {pos!r} and {len(log.demoted)} rows to {neg!r}; "
          f"wrote {args.out} and {log_path}")
    return 0


def cmd_experiment(args) -> int:
    configs = load_configs(args.config)
    tables = []
    skipped = []
    for cfg in configs:
        if args.repeats is not None:
            cfg = dataclasses.replace(cfg, repeats=args.repeats)
        if not Path(cfg.data).is_file():
            # other datasets still run; the exit code reports the gap
            print(f"fairlens: error: {cfg.name or cfg.schema}: data file not found: {cfg.data}", file=sys.stderr)
            skipped.append(cfg.name or str(cfg.schema))
            continue
        start = time.perf_counter()
        table = run_grid(cfg, jobs=args.jobs)
        logger.info("%s: %d cells in %.1f s", table.dataset, len(table.rows), time.perf_counter() - start)
        tables.append(table)
    if not tables:
        return EXIT_ERROR
    paths = write_outputs(tables, args.out)
    for t in tables:
        rq = check_rq_criteria(t)
        print(f"{t.dataset}: RQ1 {'pass' if rq['rq1']['pass'] else 'FAIL'}, "
              f"RQ2a {'pass' if rq['rq2a']['pass'] else 'FAIL'}, RQ2b {'pass' if rq['rq2b']['pass'] else 'FAIL'}"
              + (f", failed cells: {rq['failed_cells']}" if rq["failed_cells"] else ""))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    if skipped:
        print(f"skipped (data missing): {', '.join(skipped)}", file=sys.stderr)
        return EXIT_ERROR
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairlens", description=__doc__)
    p.add_argument("--version", action="version", version=f"fairlens {__version__}")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="train on a labeled dataset and report per-attribute fairness")
    a.add_argument("--data", required=True, type=Path)
    a.add_argument("--schema", required=True, help="schema JSON path or builtin name")
    a.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    a.add_argument("--reweigh", choices=STRATEGIES, default="fairbalanceclass")
    a.add_argument("--attribute", action="append", help="sensitive column to audit (repeatable; default all)")
    a.add_argument("--repeats", type=int, default=1, help="seeded splits; medians are reported")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--train-fraction", type=float, default=0.7)
    a.add_argument("--l2", type=float, default=1.0)
    a.add_argument("--out", type=Path, help="write the JSON report here")
    a.add_argument("--model-out", type=Path, help="write the first repeat's model as JSON")
    a.set_defaults(func=cmd_audit)

    i = sub.add_parser("inject", help="flip labels to favor one side of a sensitive attribute")
    i.add_argument("--data", required=True, type=Path)
    i.add_argument("--schema", required=True)
    i.add_argument("--attribute", required=True, help="sensitive column name")
    i.add_argument("--favor", required=True, help="favored side: display name or 0/1")
    i.add_argument("--degree", required=True, type=float)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True, type=Path, help="corrupted CSV")
    i.add_argument("--log", type=Path, help="flip-log JSON (default: <out>.flips.json)")
    i.set_defaults(func=cmd_inject)

    e = sub.add_parser("experiment", help="run a repeated-split experiment grid")
    e.add_argument("--config", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--repeats", type=int, help="override the configured repeat count")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ds.SchemaError, ds.DataError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"fairlens: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
