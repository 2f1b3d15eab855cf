"""Repeated-split experiment grid: split, inject, reweigh, fit, evaluate, aggregate.

One grid row ("cell") is a (reweighing strategy, injection) pair. Each cell
runs ``repeats`` times with split seed ``base_seed + r``; medians and IQRs
over the repeats make up the result table.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import dataset as ds
from .detector import DEFAULT_EPSILON
from .inject import FlipLog, InjectionSpec, inject_multi
from .learner import Hyperparams, fit, predict
from .metrics import fairness_report, present
from .reweigh import STRATEGIES, compute_weights

logger = logging.getLogger(__name__)

STRATEGY_LABELS = {"none": "None", "fairbalanceclass": "FairBalanceClass"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class Injection:
    """One grid injection: favored side names (one per attribute) at one degree."""

    sides: tuple[str, ...] = ()
    degree: float = 0.0

    @property
    def is_none(self) -> bool:
        return not self.sides

    def label(self) -> str:
        if self.is_none:
            return "None"
        return ", ".join(f"{s} ({self.degree:g})" for s in self.sides)


@dataclass(frozen=True)
class Cell:
    strategy: str
    injection: Injection = Injection()

    def label(self) -> str:
        return f"{STRATEGY_LABELS.get(self.strategy, self.strategy)}/{self.injection.label()}"


@dataclass(frozen=True)
class ExperimentConfig:
    data: Path
    schema: str | Path
    name: str = ""
    reweigh: str = "fairbalanceclass"
    baseline: bool = True
    injections: tuple[tuple[str, ...], ...] = ()
    degrees: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    repeats: int = 30
    train_fraction: float = 0.7
    base_seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    standardize: bool = True
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.reweigh not in STRATEGIES:
            raise ConfigError(f"reweigh must be one of {STRATEGIES}, got {self.reweigh!r}")
        if any(not 0.0 <= d < 1.0 for d in self.degrees):
            raise ConfigError(f"degrees must lie in [0, 1), got {list(self.degrees)}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be nonnegative")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")

    def load_schema(self) -> ds.DatasetSchema:
        return ds.load_schema(self.schema)

    def cells(self) -> list[Cell]:
        out = []
        if self.baseline:
            out.append(Cell("none"))
        out.append(Cell(self.reweigh))
        for sides in self.injections:
            for d in self.degrees:
                out.append(Cell(self.reweigh, Injection(tuple(sides), float(d))))
        return out

    @classmethod
    def from_json(cls, doc: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("data", "schema"):
            if key not in doc:
                raise ConfigError(f"config is missing {key!r}")
        schema = doc["schema"]
        if str(schema) not in ds.BUILTIN_SCHEMAS:
            schema = base_dir / schema
        kwargs: dict[str, Any] = {k: v for k, v in doc.items() if k not in ("data", "schema", "hyperparams")}
        if "injections" in kwargs:
            kwargs["injections"] = tuple(tuple(s) if isinstance(s, list) else (s,) for s in kwargs["injections"])
        if "degrees" in kwargs:
            kwargs["degrees"] = tuple(float(d) for d in kwargs["degrees"])
        return cls(
            data=base_dir / doc["data"],
            schema=schema,
            hyperparams=Hyperparams(**doc.get("hyperparams", {})),
            **kwargs,
        )

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["data"] = str(self.data)
        doc["schema"] = str(self.schema)
        doc["injections"] = [list(s) for s in self.injections]
        doc["degrees"] = list(self.degrees)
        return doc


def load_configs(path: str | Path) -> list[ExperimentConfig]:
    """A config file holds one experiment or ``{"experiments": [...]}``.

    Relative paths inside are resolved against the config file's folder.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent
    docs = doc["experiments"] if isinstance(doc, dict) and "experiments" in doc else [doc]
    configs = [ExperimentConfig.from_json(d, base) for d in docs]
    names = [c.name or c.load_schema().name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"experiment names must be unique, got {names}")
    return configs


# ---------------------------------------------------------------------------
# One repeat of one cell


def injection_seed(split_seed: int, k: int) -> int:
    """Independent seed for the k-th injection spec of a repeat."""
    return int(np.random.SeedSequence([split_seed, k + 1]).generate_state(1)[0])


def injection_specs(schema: ds.DatasetSchema, injection: Injection, split_seed: int) -> list[InjectionSpec]:
    specs = []
    for k, side_name in enumerate(injection.sides):
        attr, side = schema.resolve_side(side_name)
        specs.append(InjectionSpec(attr, side, injection.degree, injection_seed(split_seed, k)))
    return specs


@dataclass(frozen=True)
class PreparedRepeat:
    train: ds.DatasetTable
    test: ds.DatasetTable
    weights: np.ndarray
    flips: tuple[FlipLog, ...]


def prepare_repeat(config: ExperimentConfig, schema: ds.DatasetSchema, table: ds.DatasetTable,
                   cell: Cell, repeat: int) -> PreparedRepeat:
    """Split, inject into train only, reweigh and standardize."""
    seed = config.base_seed + repeat
    train, test = ds.split(table, config.train_fraction, seed)
    flips: list[FlipLog] = []
    if not cell.injection.is_none:
        train, flips = inject_multi(train, injection_specs(schema, cell.injection, seed))
    weights = compute_weights(train, cell.strategy)
    if config.standardize:
        train, test, _ = ds.standardize(train, test)
    return PreparedRepeat(train, test, weights, tuple(flips))


def run_cell(config: ExperimentConfig, schema: ds.DatasetSchema, table: ds.DatasetTable,
             cell: Cell, repeat: int) -> dict[str, float]:
    """Metrics of one repeat: ``accuracy``, ``f1`` and ``<metric>:<attribute>``."""
    prep = prepare_repeat(config, schema, table, cell, repeat)
    model = fit(prep.train, prep.weights, config.hyperparams)
    y_pred = predict(model, prep.test.features, config.hyperparams.decision_threshold)
    report = fairness_report(prep.test.labels, y_pred, prep.test.sensitive, prep.test.sensitive_names)
    out = {"accuracy": report.accuracy, "f1": report.f1}
    for m in report.attributes:
        for k in ("eod", "aod", "spd"):
            out[f"{k}:{m.attribute}"] = getattr(m, k)
    return out


# ---------------------------------------------------------------------------
# Results


def median_iqr(values: Sequence[float]) -> tuple[float, float]:
    """Median and 75th minus 25th percentile (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return float(q50), float(q75 - q25)


@dataclass
class CellResult:
    dataset: str
    cell: Cell
    metrics: list[str]
    values: dict[str, list[float]] = field(default_factory=dict)  # metric -> per-repeat values
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def aggregate(self, metric: str) -> tuple[float, float]:
        return median_iqr(self.values[metric])


@dataclass
class ResultTable:
    dataset: str
    sensitive: tuple[str, ...]
    side_names: tuple[tuple[str, str], ...]
    epsilon: float
    repeats: int
    rows: list[CellResult]

    def metrics(self) -> list[str]:
        return metric_names(self.sensitive)

    def find(self, strategy: str, sides: tuple[str, ...] = (), degree: float | None = None) -> CellResult:
        for row in self.rows:
            inj = row.cell.injection
            if row.cell.strategy == strategy and inj.sides == tuple(sides) and (degree is None or inj.degree == degree):
                return row
        raise KeyError((strategy, sides, degree))


def metric_names(sensitive: Sequence[str]) -> list[str]:
    names = ["accuracy", "f1"]
    for a in sensitive:
        names += [f"eod:{a}", f"aod:{a}", f"spd:{a}"]
    return names


_WORKER: dict[str, Any] = {}


def _init_worker(config, schema, table):
    _WORKER.update(config=config, schema=schema, table=table)


def _run_task(task: tuple[int, Cell, int]):
    idx, cell, repeat = task
    try:
        return idx, repeat, run_cell(_WORKER["config"], _WORKER["schema"], _WORKER["table"], cell, repeat), None
    except Exception as exc:  # reported per cell; the grid carries on
        return idx, repeat, None, f"repeat {repeat}: {type(exc).__name__}: {exc}"


def run_grid(config: ExperimentConfig, jobs: int = 1, table: ds.DatasetTable | None = None) -> ResultTable:
    """Run every cell of the grid ``repeats`` times.

    With ``jobs > 1`` tasks run in worker processes; results are merged by
    (cell, repeat) so the table does not depend on completion order.
    """
    schema = config.load_schema()
    if table is None:
        table = ds.load_dataset(config.data, schema)
    name = config.name or schema.name or Path(config.data).stem
    cells = config.cells()
    for cell in cells:  # fail fast on bad side names before any work
        injection_specs(schema, cell.injection, 0)
    tasks = [(i, c, r) for i, c in enumerate(cells) for r in range(config.repeats)]
    logger.info("%s: %d cells x %d repeats on %d rows", name, len(cells), config.repeats, table.row_count)

    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(config, schema, table)) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _init_worker(config, schema, table)
        outcomes = [_run_task(t) for t in tasks]

    names = metric_names(table.sensitive_names)
    per_cell: dict[int, dict[int, dict[str, float]]] = {i: {} for i in range(len(cells))}
    errors: dict[int, list[tuple[int, str]]] = {i: [] for i in range(len(cells))}
    for idx, repeat, record, err in outcomes:
        if err is None:
            per_cell[idx][repeat] = record
        else:
            errors[idx].append((repeat, err))

    rows = []
    for i, cell in enumerate(cells):
        row = CellResult(name, cell, names)
        if errors[i]:
            row.error = "; ".join(e for _, e in sorted(errors[i]))
            logger.warning("%s %s failed: %s", name, cell.label(), row.error)
        else:
            recs = [per_cell[i][r] for r in range(config.repeats)]
            row.values = {m: [rec[m] for rec in recs] for m in names}
        rows.append(row)
    side_names = tuple(tuple(s.names) for s in schema.sensitive)
    return ResultTable(name, tuple(table.sensitive_names), side_names, config.epsilon, config.repeats, rows)


# ---------------------------------------------------------------------------
# Rendering


def render_csv(tables: Iterable[ResultTable]) -> str:
    """Long format, one line per (cell, metric), medians and IQRs in ``repr`` precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "preprocessing", "injection", "metric", "median", "iqr", "repeats", "status", "error"])
    for table in tables:
        for row in table.rows:
            pre = STRATEGY_LABELS.get(row.cell.strategy, row.cell.strategy)
            inj = row.cell.injection.label()
            if row.failed:
                w.writerow([table.dataset, pre, inj, "", "", "", table.repeats, "failed", row.error])
                continue
            for m in row.metrics:
                med, iqr = row.aggregate(m)
                w.writerow([table.dataset, pre, inj, m, repr(med), repr(iqr), table.repeats, "ok", ""])
    return buf.getvalue()


def render_markdown(tables: Iterable[ResultTable]) -> str:
    """Tables of ``median (IQR)`` times 100; bold EOD/AOD medians with |x| >= epsilon."""
    out = []
    for table in tables:
        header = ["Preprocessing", "Injection", "Accuracy", "F1"]
        for a in table.sensitive:
            header += [f"{a} EOD", f"{a} AOD", f"{a} SPD"]
        out.append(f"### {table.dataset}\n")
        out.append(f"Values are 100 x median (IQR) over {table.repeats} repeats. "
                   f"Bold EOD/AOD: |median| >= {table.epsilon:g}.\n")
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "---|" * len(header))
        for row in table.rows:
            pre = STRATEGY_LABELS.get(row.cell.strategy, row.cell.strategy)
            cells = [pre, row.cell.injection.label()]
            if row.failed:
                cells += [f"failed: {row.error}"] + [""] * (len(header) - 3)
            else:
                for m in row.metrics:
                    med, iqr = row.aggregate(m)
                    text = f"{present(med)} ({present(iqr)})"
                    if m.split(":")[0] in ("eod", "aod") and abs(med) >= table.epsilon:
                        text = f"**{text}**"
                    cells.append(text)
            out.append("| " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out)


def render(tables: ResultTable | Sequence[ResultTable], fmt: str) -> str:
    if isinstance(tables, ResultTable):
        tables = [tables]
    if fmt == "csv":
        return render_csv(tables)
    if fmt == "markdown":
        return render_markdown(tables)
    raise ValueError(f"unknown format {fmt!r}; expected csv or markdown")


# ---------------------------------------------------------------------------
# Research-question checks


def _median(row: CellResult, metric: str) -> float:
    return row.aggregate(metric)[0]


def _unfair(row: CellResult, attr: str, eps: float) -> bool:
    return max(abs(_median(row, f"eod:{attr}")), abs(_median(row, f"aod:{attr}"))) >= eps


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def check_rq_criteria(table: ResultTable, epsilon: float | None = None) -> dict:
    """Detection (RQ1), direction (RQ2a) and degree-trend (RQ2b) checks on medians.

    RQ1: with reweighing, no injection and every non-injected attribute are
    fair, and every attribute injected at the largest degree is unfair.
    RQ2a: injections favoring opposite sides of an attribute at the same
    degree give EOD and AOD medians of opposite sign.
    RQ2b: per injected side, |EOD| and |AOD| medians never decrease as the
    degree grows.
    """
    eps = table.epsilon if epsilon is None else epsilon
    attr_of = {}
    for a, names in zip(table.sensitive, table.side_names):
        for side, n in enumerate(names):
            attr_of[n.lower()] = (a, side)
    ok_rows = [r for r in table.rows if not r.failed]
    failed = [r.cell.label() for r in table.rows if r.failed]
    reweigh_rows = [r for r in ok_rows if r.cell.strategy != "none"]

    rq1_violations = []
    degrees = sorted({r.cell.injection.degree for r in reweigh_rows if not r.cell.injection.is_none})
    top = degrees[-1] if degrees else None
    for row in reweigh_rows:
        inj = row.cell.injection
        injected = {attr_of[s.lower()][0] for s in inj.sides}
        if not inj.is_none and inj.degree != top:
            continue
        for a in table.sensitive:
            unfair = _unfair(row, a, eps)
            if a in injected and not unfair:
                rq1_violations.append(f"{row.cell.label()}: injected attribute {a} not detected")
            if a not in injected and unfair:
                rq1_violations.append(f"{row.cell.label()}: non-injected attribute {a} flagged unfair")

    singles = [r for r in reweigh_rows if len(r.cell.injection.sides) == 1]
    by_side: dict[str, dict[float, CellResult]] = {}
    for r in singles:
        by_side.setdefault(r.cell.injection.sides[0], {})[r.cell.injection.degree] = r

    rq2a = []
    for a, names in zip(table.sensitive, table.side_names):
        s0, s1 = (by_side.get(n, {}) for n in names)
        for d in sorted(set(s0) & set(s1)):
            for k in ("eod", "aod"):
                v0, v1 = _median(s0[d], f"{k}:{a}"), _median(s1[d], f"{k}:{a}")
                rq2a.append({
                    "attribute": a, "degree": d, "metric": k,
                    f"favor_{names[0]}": v0, f"favor_{names[1]}": v1,
                    "pass": _sign(v0) * _sign(v1) == -1,
                })

    rq2b = []
    for side, rows in by_side.items():
        a = attr_of[side.lower()][0]
        ds_sorted = sorted(rows)
        for k in ("eod", "aod"):
            mags = [abs(_median(rows[d], f"{k}:{a}")) for d in ds_sorted]
            drops = [(ds_sorted[i], ds_sorted[i + 1]) for i in range(len(mags) - 1) if mags[i + 1] < mags[i]]
            rq2b.append({
                "favored": side, "attribute": a, "metric": k, "degrees": ds_sorted,
                "abs_medians": mags, "decreases": drops, "pass": not drops,
            })

    return {
        "dataset": table.dataset,
        "epsilon": eps,
        "failed_cells": failed,
        "rq1": {"degree": top, "pass": not rq1_violations and not failed, "violations": rq1_violations},
        "rq2a": {"pass": all(x["pass"] for x in rq2a), "checks": rq2a},
        "rq2b": {"pass": all(x["pass"] for x in rq2b), "checks": rq2b},
    }


def write_outputs(tables: Sequence[ResultTable], out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "markdown": out / "results.md", "rq": out / "rq_summary.json"}
    paths["csv"].write_text(render_csv(tables))
    paths["markdown"].write_text(render_markdown(tables))
    summary = {t.dataset: check_rq_criteria(t) for t in tables}
    paths["rq"].write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return paths


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o).__name__)
