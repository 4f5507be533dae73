"""Command line entry point ``cdi-lab``.

Exit codes: 0 success or experiment pass, 2 experiment fail, 1 usage or
numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import __version__
from .appendix import appendix_report
from .errors import CdiLabError
from .harness import SCHEMA, ExperimentConfig, run_experiment
from .measure import load_measure
from .rates import cdi_classify, gamma_identity, lambda_bk, log_binom, merger_distribution
from .simulate import BACKENDS, simulate_path
from .speed import speed_table_for

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None


def _measure(path: str):
    return load_measure(_read_json(path))


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _write_csv(path: str, rows, schema: int = SCHEMA):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema: {schema}\n")
        csv.writer(fh).writerows(rows)


def cmd_rates(args) -> int:
    spec = _measure(args.measure)
    row = merger_distribution(spec, args.b)
    out = {"b": args.b, "total_rate": row.total_rate, "gamma": row.gamma,
           "gamma_identity": gamma_identity(spec, args.b)}
    if args.k is not None:
        lam = lambda_bk(spec, args.b, args.k)
        out.update(k=args.k, lambda_bk=lam,
                   weight=math.exp(log_binom(args.b, args.k)) * lam,
                   probability=row.prob(args.k))
    else:
        out["probabilities"] = row.probabilities.tolist()
    _emit(out)
    return EXIT_OK


def cmd_classify(args) -> int:
    _emit(cdi_classify(_measure(args.measure), args.bmax, args.qmax))
    return EXIT_OK


def cmd_speed(args) -> int:
    spec = _measure(args.measure)
    table = speed_table_for(spec, args.qmin, args.qmax, args.ppd)
    for t in args.t or []:
        print(repr(float(table.v(t, extrapolate=args.extrapolate))))
    if args.emit_table:
        t = table.u_values
        v = table.v(t)
        rows = [["t", "v", "u_roundtrip_residual"]]
        rows += [[repr(float(a)), repr(float(b)), repr(float(table.u(b) / a - 1.0))]
                 for a, b in zip(t, v)]
        _write_csv(args.emit_table, rows)
    if not args.t and not args.emit_table:
        _emit(table.provenance())
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _measure(args.measure)
    horizon = math.inf if args.horizon is None else args.horizon
    path = simulate_path(spec, args.n, horizon=horizon, seed=args.seed, backend=args.backend)
    if args.out:
        rows = [["time", "count"], [repr(0.0), path.initial_n]]
        rows += [[repr(t), c] for t, c in path.events]
        _write_csv(args.out, rows)
    _emit({"initial_n": path.initial_n, "final_count": path.final_count,
           "events": len(path.times), "absorption_time": path.absorption_time,
           "backend": path.backend, "seed": path.seed, "measure_id": path.measure_id,
           "horizon": None if math.isinf(path.horizon) else path.horizon})
    return EXIT_OK


def cmd_appendix(args) -> int:
    report = appendix_report()
    _emit(report, args.report)
    if args.report:
        print(f"appendix: {'pass' if report['pass'] else 'FAIL'} -> {args.report}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "master_seed": args.seed})
    report = run_experiment(cfg)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
        _write_csv(csv_path, report.csv_rows())
    else:
        sys.stdout.write(text)
        if args.csv:
            _write_csv(args.csv, report.csv_rows())
    print(f"{cfg.experiment}: {'pass' if report.passed else 'FAIL'} "
          f"({report.wall_time:.1f} s)", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _headline(doc: dict) -> str:
    agg = doc.get("aggregate", {})
    bits = []
    for key in ("top_mean", "sup_abs_delta", "ratio_at_smallest_t", "atom_ratio_at_smallest_t"):
        if key in agg:
            bits.append(f"{key}={agg[key]:.6g}")
    if "rungs" in agg:
        bits.append("means=" + ",".join("-" if r.get("mean") is None else f"{r['mean']:.4g}"
                                        for r in agg["rungs"]))
    if "moments" in agg:
        bits += [f"d={m['d']:g}:" + ",".join(f"{x:.3g}" for x in m["means"])
                 for m in agg["moments"]]
    if "measures" in agg:
        bits.append("sim_min=" + ",".join(f"{m['simulated_min']:.3g}" for m in agg["measures"]))
    if "checks" in doc:
        bits += [f"{k}={'pass' if v['pass'] else 'FAIL'}" for k, v in doc["checks"].items()]
    return " ".join(bits)


def cmd_report(args) -> int:
    ok = True
    for path in args.reports:
        doc = _read_json(path)
        if doc.get("schema") != SCHEMA:
            raise UsageError(f"{path}: unsupported report schema {doc.get('schema')!r}")
        passed = bool(doc.get("pass"))
        ok &= passed
        name = doc.get("experiment", "appendix")
        print(f"{path}\t{name}\t{'pass' if passed else 'FAIL'}\t{_headline(doc)}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdi-lab", description="Speed of coming down from infinity for "
                "Lambda-coalescents: rates, speed tables, simulation and experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("rates", help="merger rates out of state b")
    r.add_argument("--measure", required=True)
    r.add_argument("--b", type=int, required=True)
    r.add_argument("--k", type=int)
    r.set_defaults(func=cmd_rates)

    c = sub.add_parser("classify", help="coming down from infinity verdict")
    c.add_argument("--measure", required=True)
    c.add_argument("--bmax", type=int, default=100_000)
    c.add_argument("--qmax", type=float, default=1e8)
    c.set_defaults(func=cmd_classify)

    s = sub.add_parser("speed", help="evaluate v(t) or dump the speed table")
    s.add_argument("--measure", required=True)
    s.add_argument("--t", type=float, action="append")
    s.add_argument("--emit-table", metavar="CSV")
    s.add_argument("--qmin", type=float, default=1.0)
    s.add_argument("--qmax", type=float, default=1e10)
    s.add_argument("--ppd", type=int, default=64, help="grid points per decade")
    s.add_argument("--extrapolate", action="store_true",
                   help="use the tail model below u(qmax) instead of failing")
    s.set_defaults(func=cmd_speed)

    m = sub.add_parser("simulate", help="simulate one block-counting path")
    m.add_argument("--measure", required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--backend", choices=BACKENDS, default="auto")
    m.add_argument("--horizon", type=float)
    m.add_argument("--out", metavar="CSV")
    m.set_defaults(func=cmd_simulate)

    a = sub.add_parser("appendix", help="binomial lemma checks on the canonical grid")
    a.add_argument("--report", metavar="JSON")
    a.set_defaults(func=cmd_appendix)

    e = sub.add_parser("experiment", help="run a Monte Carlo experiment from a config")
    e.add_argument("--config", required=True)
    e.add_argument("--out", metavar="JSON")
    e.add_argument("--csv", metavar="CSV")
    e.add_argument("--seed", type=int, help="override master_seed")
    e.set_defaults(func=cmd_experiment)

    rp = sub.add_parser("report", help="summarize report JSON files")
    rp.add_argument("reports", nargs="+")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
    except CdiLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
