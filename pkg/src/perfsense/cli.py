"""Command-line entry point: ``perfsense <subcommand> [flags]``.

Tabular results go to stdout (or ``--out``) as CSV with a header row;
event and score streams are newline-delimited JSON. Diagnostics go to
stderr. Exit status is 0 on success, 1 on bad input, 2 on internal errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import sys
import warnings
from contextlib import contextmanager
from typing import Sequence

import numpy as np

from perfsense import __version__
from perfsense.config import ConfigError
from perfsense.engine import (
    DEFAULT_PROPORTIONS,
    DEFAULT_THRESHOLDS,
    Engine,
    ScoreLog,
    LOG_HEADER,
    derive_thresholds,
    map_tier,
    parse_trigger_config,
    read_events,
    tier_proportions,
)
from perfsense.evaluate import entropy_weights, evaluate_multilevel, evaluate_snapshot, positivize
from perfsense.forecast import ArimaOrder, ConvergenceError, DEFAULT_BOUNDS, CRITERIA, auto_order, fit_arima, forecast
from perfsense.matrix import read_matrix_csv
from perfsense.portrait import (
    DailyLabelHistory,
    daily_label,
    evaluate_fit,
    fit_portrait,
    network_quality_rules,
    parse_rules,
    split_time_domain,
)
from perfsense.preprocess import pca
from perfsense.schema import default_schema, load_schema, read_records, validate_record
from perfsense.smooth import SmoothParams, smooth_all

INPUT_ERRORS = (ValueError, KeyError, OSError, ConvergenceError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _emit(args, text: str):
    with _output(getattr(args, "out", None)) as fh:
        fh.write(text)


def _read_text(path) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _schema(args):
    return load_schema(args.schema) if args.schema else default_schema()


def _matrix(args, schema):
    with open(args.matrix, encoding="utf-8", newline="") as fh:
        X = read_matrix_csv(fh)
    return X.reorder(schema)


def _floats(text: str, what: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise ValueError(f"{what}: expected {count} values, got {len(vals)}")
    return vals


def read_series_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``ts`` and ``score`` (or ``raw``/``scaled``) columns; ts defaults to row index."""
    reader = csv.DictReader(io.StringIO(_read_text(path)))
    fields = reader.fieldnames or []
    col = next((c for c in ("score", "raw", "scaled") if c in fields), None)
    if col is None:
        raise ValueError(f"{path}: need a 'score' column, found {fields}")
    ts, vals = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            vals.append(float(row[col]))
            ts.append(int(float(row["ts"])) if "ts" in fields else lineno - 2)
        except (TypeError, ValueError):
            raise ValueError(f"{path} line {lineno}: non-numeric value") from None
    return np.asarray(ts, dtype=np.int64), np.asarray(vals, dtype=float)


# -- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    schema = _schema(args)
    print(f"schema ok: {len(schema)} indicators in {len(schema.categories)} categories "
          f"({', '.join(schema.categories)})")
    if args.rules:
        rules = parse_rules(_read_text(args.rules))
        print(f"rules ok: {len(rules)} tags")
    if args.trigger:
        cfg = parse_trigger_config(_read_text(args.trigger))
        print(f"trigger ok: scoring on {', '.join(sorted(cfg.scoring_events))}")
    if args.records:
        n = dropped = 0
        for rec in read_records(_read_text(args.records).splitlines()):
            kept = validate_record(schema, rec)
            n += 1
            dropped += len(rec.values) - len(kept.values)
        print(f"records ok: {n} records, {dropped} out-of-range values dropped")
    return 0


def cmd_score(args) -> int:
    schema = _schema(args)
    X = _matrix(args, schema)
    thresholds = _floats(args.thresholds, "--thresholds", 2)
    sv = evaluate_snapshot(X, schema) if args.single_level else evaluate_multilevel(X, schema)
    rows = [(rid, r, s, map_tier(s, thresholds).value) for rid, r, s in zip(X.row_ids, sv.raw, sv.scaled)]
    _emit(args, csv_text(("row_id", "raw", "scaled", "tier"), rows))
    if args.plot:
        from perfsense.plotting import plot_score_distribution

        plot_score_distribution(args.plot, sv.scaled, thresholds)
    return 0


def cmd_weights(args) -> int:
    schema = _schema(args)
    X = _matrix(args, schema)
    report = entropy_weights(positivize(X, schema)).report()
    if args.format == "json":
        _emit(args, "".join(json.dumps(r) + "\n" for r in report))
    else:
        rows = [(r["indicator"], r["p_summary"]["min"], r["p_summary"]["mean"], r["p_summary"]["max"],
                 r["e"], r["g"], r["w"]) for r in report]
        _emit(args, csv_text(("indicator", "p_min", "p_mean", "p_max", "e", "g", "w"), rows))
    return 0


def cmd_pca(args) -> int:
    schema = _schema(args)
    X = _matrix(args, schema)
    res = pca(X, args.variance)
    rows = []
    for k in range(len(res.eigenvalues)):
        rows.append([f"pc{k + 1}", res.eigenvalues[k], res.explained_variance_ratio[k],
                     int(k < res.selected_count)] + list(res.components[k]))
    _emit(args, csv_text(("component", "eigenvalue", "explained_ratio", "selected") + tuple(res.columns), rows))
    return 0


def cmd_smooth(args) -> int:
    ts, raw = read_series_csv(args.input)
    params = SmoothParams(args.lookback)
    out = smooth_all(raw, params)
    rows = zip(ts.tolist(), raw, out["sma"], out["wma"], out["wma_corr"], out["hma"])
    _emit(args, csv_text(("ts", "raw", "sma", "wma", "wma_corr", "hma"), rows))
    if args.plot:
        from perfsense.plotting import plot_smoothing

        plot_smoothing(args.plot, ts, raw, out, args.lookback)
    return 0


def cmd_forecast(args) -> int:
    _, s = read_series_csv(args.input)
    if args.order == "auto":
        bounds = ArimaOrder.parse(args.bounds) if args.bounds else DEFAULT_BOUNDS
        model = auto_order(s, bounds, args.criterion)
    else:
        model = fit_arima(s, ArimaOrder.parse(args.order), restarts=args.restarts, seed=args.seed)
    fc = forecast(model, s, args.horizon)
    print(json.dumps(model.summary()), file=sys.stderr)
    rows = zip(range(1, args.horizon + 1), fc.point, fc.lo80, fc.hi80, fc.variance)
    _emit(args, csv_text(("step", "point", "lo80", "hi80", "variance"), rows))
    if args.plot:
        from perfsense.plotting import plot_forecast

        plot_forecast(args.plot, s, fc.point, fc.lo80, fc.hi80, str(model.order))
    return 0


def _histories(path, rules) -> dict[str, DailyLabelHistory]:
    days: dict[str, dict[dt.date, int]] = {}
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            device, date = str(obj["device_id"]), dt.date.fromisoformat(obj["date"])
            feats = obj.get("features") or {}
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path} line {lineno}: expected {{device_id, date, features}} ({exc})") from None
        per_day = days.setdefault(device, {})
        if date in per_day:
            raise ValueError(f"{path} line {lineno}: second record for {device} on {date}")
        per_day[date] = daily_label(rules, feats)
    return {d: DailyLabelHistory.of(d, v.items()) for d, v in sorted(days.items())}


def cmd_portrait(args) -> int:
    rules = parse_rules(_read_text(args.rules)) if args.rules else network_quality_rules()
    histories = _histories(args.input, rules)
    if not args.evaluate:
        labels = [fit_portrait(h, args.window, args.threshold) for h in histories.values()]
        _emit(args, "".join(p.to_json() + "\n" for p in labels))
        return 0
    predicted, actual = [], []
    for h in histories.values():
        train, test = split_time_domain(h, args.split)
        predicted.append(fit_portrait(train, args.window, args.threshold))
        actual.append(fit_portrait(test, args.window, args.threshold))
    report = evaluate_fit(predicted, actual, args.target, histories, args.window, args.threshold)
    cols = ("target", "category", "population", "predicted", "actual", "hits", "prediction_proportion",
            "accuracy", "recall_proportion", "recall_rate", "stability")
    _emit(args, csv_text(cols, ([r.as_dict()[c] for c in cols] for r in report.rows)))
    return 0


def cmd_thresholds(args) -> int:
    _, scores = read_series_csv(args.input)
    props = _floats(args.proportions, "--proportions", 3)
    t = derive_thresholds(scores, props)
    got = tier_proportions(scores, t)
    _emit(args, csv_text(("t1", "t2", "p_low", "p_mid", "p_high"), [(t[0], t[1], *got)]))
    if args.plot:
        from perfsense.plotting import plot_score_distribution

        plot_score_distribution(args.plot, scores, t, title="derived tier thresholds")
    return 0


def cmd_replay(args) -> int:
    schema = _schema(args)
    with open(args.reference, encoding="utf-8", newline="") as fh:
        reference = read_matrix_csv(fh)
    cfg = parse_trigger_config(_read_text(args.trigger))
    events = list(read_events(_read_text(args.events).splitlines()))
    if args.log:
        with ScoreLog(args.log) as log:
            Engine(schema, cfg, reference, log).replay(events)
    else:
        records = Engine(schema, cfg, reference).replay(events)
        sys.stdout.write(LOG_HEADER + "\n" + "".join(r.to_json() + "\n" for r in records))
    return 0


def cmd_simulate_ab(args) -> int:
    from perfsense.abharness import METRICS, Strategy, generate_fleet, run_experiment

    fleet = generate_fleet(args.devices, args.seed)
    strategy = Strategy.null() if args.null_strategy else Strategy()
    report = run_experiment(fleet, static_cut=args.static_cut, strategy=strategy, duration_days=args.days,
                            assign_days=args.assign_days, seed=args.seed)
    if args.format == "table":
        _emit(args, report.table() + "\n")
    else:
        rows = [(r["group"], r["metric"], r["size"], r["baseline"], r["treated"], r["relative_change"])
                for r in report.rows()]
        rows += [("delta", r["metric"], len(report.control.device_ids), r["cross_absolute"],
                  r["cross_relative"], r["delta"]) for r in report.delta_rows()]
        _emit(args, csv_text(("group", "metric", "size", "baseline", "treated", "relative_change"), rows))
    if args.plot:
        from perfsense.plotting import plot_ab

        plot_ab(args.plot, METRICS, [report.deltas[m]["control_change"] for m in METRICS],
                [report.deltas[m]["experimental_change"] for m in METRICS])
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="perfsense", description="Dynamic device performance scoring toolkit.")
    p.add_argument("--version", action="version", version=f"perfsense {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0, help="seed for stochastic steps (default 0)")
        return sp

    def schema_flag(sp):
        sp.add_argument("--schema", metavar="FILE", help="feature schema config (default: bundled schema)")

    def out_flag(sp):
        sp.add_argument("--out", metavar="FILE", help="write data here instead of stdout")

    def plot_flag(sp):
        sp.add_argument("--plot", metavar="FILE", help="also render a figure (png, svg or pdf)")

    sp = add("validate", cmd_validate, "Check a schema and optional rule, trigger and telemetry files.")
    schema_flag(sp)
    sp.add_argument("--rules", metavar="FILE", help="label rule config")
    sp.add_argument("--trigger", metavar="FILE", help="trigger config")
    sp.add_argument("--records", metavar="FILE", help="telemetry NDJSON to validate")

    sp = add("score", cmd_score, "Score every row of a decision matrix.")
    schema_flag(sp)
    sp.add_argument("--matrix", metavar="FILE", required=True, help="CSV: row_id,<indicators>")
    sp.add_argument("--thresholds", default=",".join(map(str, DEFAULT_THRESHOLDS)), metavar="T1,T2",
                    help="tier cut points (default %(default)s)")
    sp.add_argument("--single-level", action="store_true", help="skip the per-category stage")
    out_flag(sp)
    plot_flag(sp)

    sp = add("weights", cmd_weights, "Report entropy weights of a decision matrix.")
    schema_flag(sp)
    sp.add_argument("--matrix", metavar="FILE", required=True, help="CSV: row_id,<indicators>")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    out_flag(sp)

    sp = add("pca", cmd_pca, "Principal components of a standardized decision matrix.")
    schema_flag(sp)
    sp.add_argument("--matrix", metavar="FILE", required=True, help="CSV: row_id,<indicators>")
    sp.add_argument("--variance", type=float, default=0.85, help="variance share to retain (default 0.85)")
    out_flag(sp)

    sp = add("smooth", cmd_smooth, "Smooth a score series with SMA, WMA, corrected WMA and HMA.")
    sp.add_argument("--in", dest="input", metavar="FILE", required=True, help="CSV with ts,score columns")
    sp.add_argument("--lookback", type=int, default=9, help="window length (default 9)")
    out_flag(sp)
    plot_flag(sp)

    sp = add("forecast", cmd_forecast, "Fit an ARIMA model to a score series and forecast it.")
    sp.add_argument("--in", dest="input", metavar="FILE", required=True, help="CSV with a score column")
    sp.add_argument("--order", default="auto", help="'auto' or p,d,q (default auto)")
    sp.add_argument("--bounds", metavar="P,D,Q", help="order search bounds for auto (default 5,2,5)")
    sp.add_argument("--criterion", choices=CRITERIA, default="bic")
    sp.add_argument("--horizon", type=int, default=10, help="steps ahead (default 10)")
    sp.add_argument("--restarts", type=int, default=0, help="extra seeded starts for MA terms")
    out_flag(sp)
    plot_flag(sp)

    sp = add("portrait", cmd_portrait, "Fit network-quality portraits from daily feature records.")
    sp.add_argument("--in", dest="input", metavar="FILE", required=True,
                    help="NDJSON: {device_id, date, features}")
    sp.add_argument("--rules", metavar="FILE", help="label rule config (default: network quality rules)")
    sp.add_argument("--window", type=int, default=15, help="window in days (default 15)")
    sp.add_argument("--threshold", type=float, default=0.70, help="dominant-tag share (default 0.70)")
    sp.add_argument("--evaluate", action="store_true", help="split by date and report fit quality")
    sp.add_argument("--split", type=float, default=0.8, help="train share of the date span (default 0.8)")
    sp.add_argument("--target", default="net", help="target label in the report (default net)")
    out_flag(sp)

    sp = add("thresholds", cmd_thresholds, "Derive tier thresholds from a score sample.")
    sp.add_argument("--in", dest="input", metavar="FILE", required=True, help="CSV with a score column")
    sp.add_argument("--proportions", default=",".join(map(str, DEFAULT_PROPORTIONS)), metavar="P1,P2,P3",
                    help="low,mid,high shares (default %(default)s)")
    out_flag(sp)
    plot_flag(sp)

    sp = add("replay", cmd_replay, "Replay an event log through the scoring engine.")
    schema_flag(sp)
    sp.add_argument("--reference", metavar="FILE", required=True, help="reference population matrix CSV")
    sp.add_argument("--trigger", metavar="FILE", required=True, help="trigger config")
    sp.add_argument("--events", metavar="FILE", required=True, help="NDJSON: {name, device_id, ts_ms, params}")
    sp.add_argument("--log", metavar="FILE", help="append score records here instead of stdout")

    sp = add("simulate-ab", cmd_simulate_ab, "Run the synthetic-fleet AB experiment.")
    sp.add_argument("--devices", type=int, default=300, help="fleet size (default 300)")
    sp.add_argument("--days", type=int, default=30, help="experiment length in days (default 30)")
    sp.add_argument("--assign-days", type=int, default=7, help="days of telemetry before assignment (default 7)")
    sp.add_argument("--static-cut", type=float, default=7.0, help="static low-end cut on (0,12] (default 7)")
    sp.add_argument("--null-strategy", action="store_true", help="use a zero-effect strategy")
    sp.add_argument("--format", choices=("table", "csv"), default="table")
    out_flag(sp)
    plot_flag(sp)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
