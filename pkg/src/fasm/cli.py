"""Command-line interface.

Exit codes: 0 success, 2 config/validation error, 3 data error,
4 numerical/fit error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cohort import SimSpec, load_csv, simulate_cohort, stratified_split, summarize, write_csv
from .config import PipelineConfig
from .coxfit import CoxModel, fit
from .errors import ConfigError, FasmError
from .pipeline import (OUTPUT_FILES, _finite, dump_json, model_report, run_pipeline, write_curves)
from .rashomon import RashomonSet, VariablePartition, build_integral_set
from .selection import METRIC_ORDER, select_fasm

log = logging.getLogger("fasm")


def _pairs(text, cast=float):
    """Parse ``"a=1,b=2"``; the value follows the last ``=`` so keys such as
    ``group=B`` survive."""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, value = item.strip().rpartition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {item!r}")
        try:
            out[key] = cast(value)
        except ValueError:
            raise ConfigError(f"bad value in {item!r}") from None
    return out


def _config(args):
    overrides = {"seed": args.seed}
    if args.grid:
        try:
            start, end, step = (float(x) for x in args.grid.split(":"))
        except ValueError:
            raise ConfigError(f"grid must look like start:end:step, got {args.grid!r}") from None
        overrides.update({"evaluation.t_start": start - step, "evaluation.t_end": end,
                          "evaluation.step": step})
    if args.config:
        return PipelineConfig.load(args.config, overrides)
    return PipelineConfig.from_dict({}, ".", overrides)


def _schema(args, cfg):
    schema = dict(cfg.schema)
    for key in ("time", "event", "group"):
        if getattr(args, key, None):
            schema[key] = getattr(args, key)
    if getattr(args, "covariates", None):
        schema["covariates"] = args.covariates.split(",")
    if getattr(args, "categorical", None):
        schema["categorical"] = args.categorical.split(",")
    return schema


def _data(args, cfg):
    path = args.data if getattr(args, "data", None) else cfg.data_path
    return load_csv(path, **_schema(args, cfg))


def _out(args, cfg):
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    spec = SimSpec(
        n=args.n,
        group_proportions=_pairs(args.groups),
        true_beta=_pairs(args.beta),
        baseline_shape=args.shape,
        baseline_scale=args.scale,
        censor_rate=_pairs(args.censor),
        horizon=args.horizon,
        seed=args.seed or 0,
    )
    out = Path(args.out or "cohort.csv")
    ds = simulate_cohort(spec)
    write_csv(ds, out)
    truth = {"n": spec.n, "seed": spec.seed, "true_beta": dict(spec.true_beta),
             "group_proportions": dict(spec.group_proportions),
             "censor_rate": dict(spec.censor_rate), "baseline_shape": spec.baseline_shape,
             "baseline_scale": spec.baseline_scale, "horizon": spec.horizon,
             "variable_names": list(ds.variable_names)}
    dump_json(truth, out.with_suffix(".truth.json"))
    print(out)


def cmd_fit(args):
    cfg = _config(args)
    ds = _data(args, cfg)
    roster = args.roster.split(",") if args.roster else None
    model, summary = fit(ds, roster, cfg.fit_config, args.ties or cfg.ties)
    out = _out(args, cfg)
    dump_json(model.to_dict(), out / "model.json")
    dump_json(summary.to_dict(), out / "fit_summary.json")
    print(out / "model.json")


def _split(cfg):
    data = load_csv(cfg.data_path, **cfg.schema)
    return data, stratified_split(data, cfg.split)


def cmd_rashomon(args):
    cfg = _config(args)
    data, (train, val, _) = _split(cfg)
    partition = VariablePartition.from_roster(data.variable_names, cfg.raw["sensitive"])
    rset = build_integral_set(train, val, partition, cfg.rashomon, cfg.measure, cfg.ties,
                              cfg.fit_config, args.threads)
    out = _out(args, cfg)
    rset.write_jsonl(out / "rashomon.jsonl")
    print(out / "rashomon.jsonl")


def cmd_select(args):
    cfg = _config(args)
    _, (_, val, _) = _split(cfg)
    out = _out(args, cfg)
    rset = RashomonSet.read_jsonl(args.rashomon or out / "rashomon.jsonl")
    e = cfg.evaluation
    best, result, table = select_fasm(rset, val, cfg.grid,
                                      normalize=bool(cfg.raw["selection"]["normalize"]),
                                      workers=args.threads, floor=float(e["ipcw_floor"]),
                                      per_group_censoring=bool(e["per_group_censoring"]))
    doc = best.to_model().to_dict()
    doc["selection"] = {"case": list(best.case), "draw": best.draw_index,
                        "msi": result.msi if not result.infinite else None,
                        "msi_infinite": result.infinite, "profile": result.profile.as_dict()}
    dump_json(doc, out / "fasm_model.json")
    dump_json({"metric_order": list(METRIC_ORDER),
               "candidates": _finite(table)},
              out / "selection.json")
    print(out / "fasm_model.json")


def cmd_evaluate(args):
    cfg = _config(args)
    if args.bootstrap is not None:
        cfg.raw["bootstrap"]["n_boot"] = args.bootstrap
    cfg.validate()
    try:
        with open(args.model, encoding="utf-8") as fh:
            model = CoxModel.from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.model} is not valid JSON: {exc}") from None
    ds = _data(args, cfg)
    report = model_report(model, ds, cfg, workers=args.threads)
    out = _out(args, cfg)
    dump_json(report.to_dict(), out / "report.json")
    write_curves(out / "curves.csv", [("model", report.rows())])
    print(out / "report.json")


def cmd_run(args):
    cfg = _config(args)
    result = run_pipeline(cfg, args.out, workers=args.threads)
    for name in OUTPUT_FILES + ("manifest.json",):
        print(result["out"] / name)


def cmd_summarize(args):
    cfg = _config(args)
    summary = summarize(_data(args, cfg))
    if args.out:
        out = _out(args, cfg)
        dump_json(summary, out / "summary.json")
        print(out / "summary.json")
    else:
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


# -- parser ----------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="pipeline config file (YAML or JSON)")
    shared.add_argument("--seed", type=_seed, help="master seed (overrides config)")
    shared.add_argument("--out", help="output directory (simulate: output CSV path)")
    shared.add_argument("--threads", type=_positive_int, default=1,
                        help="worker cap; results do not depend on it")
    shared.add_argument("--grid", help="evaluation grid start:end:step")
    shared.add_argument("-v", "--verbose", action="store_true")

    schema = argparse.ArgumentParser(add_help=False)
    schema.add_argument("--data", help="cohort CSV")
    schema.add_argument("--time", help="time column")
    schema.add_argument("--event", help="event column (0/1)")
    schema.add_argument("--group", help="sensitive group column")
    schema.add_argument("--covariates", help="comma-separated covariate columns")
    schema.add_argument("--categorical", help="comma-separated categorical columns")

    parser = argparse.ArgumentParser(prog="fasm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="write a synthetic cohort CSV")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--groups", default="A=0.5,B=0.5", help="group proportions, e.g. W=0.8,B=0.2")
    p.add_argument("--beta", default="x1=0.8,x2=-0.5",
                   help="true coefficients, e.g. x1=0.8,group=B=0.3")
    p.add_argument("--shape", type=float, default=1.5, help="Weibull baseline shape")
    p.add_argument("--scale", type=float, default=100.0, help="Weibull baseline scale")
    p.add_argument("--censor", default="A=0.005,B=0.005", help="exponential censoring rates")
    p.add_argument("--horizon", type=float, default=120.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[shared, schema], help="fit a Cox model")
    p.add_argument("--roster", help="comma-separated model variables (default: all)")
    p.add_argument("--ties", choices=("efron", "breslow"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rashomon", parents=[shared], help="build the Rashomon set")
    p.set_defaults(func=cmd_rashomon)

    p = sub.add_parser("select", parents=[shared], help="select the highest-MSI member")
    p.add_argument("--rashomon", help="rashomon.jsonl (default: <out>/rashomon.jsonl)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", parents=[shared, schema], help="audit a saved model")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 disables)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[shared], help="full pipeline")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", parents=[shared, schema], help="descriptive summary")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FasmError as exc:
        print(f"fasm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"fasm {args.command}: I/O error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
