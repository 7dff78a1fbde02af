"""End-to-end runs: split, fit case optima, sample the Rashomon set, select the
fairest member and compare it with the two reference Cox models on test data."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import load_csv, stratified_split
from .errors import CrossMetricError, FasmError, SchemaError
from .rankmetrics import RankingEvaluator, bootstrap_ci
from .rashomon import VariablePartition, build_integral_set
from .selection import METRIC_ORDER, select_fasm

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("delta_iauc", "delta_ci", "delta_xci", "i_delta_xauc", "iauc", "c_index")
OUTPUT_FILES = ("fasm_model.json", "rashomon.jsonl", "report_val.json", "report_test.json",
                "curves.csv")


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class StageError(FasmError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


class _Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except FasmError as exc:
            raise StageError(name, exc) from exc
        except OSError as exc:
            err = FasmError(str(exc))
            err.exit_code = 5
            raise StageError(name, err) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)


def load_dataset(cfg):
    return load_csv(cfg.data_path, **cfg.schema)


def model_report(model, dataset, cfg, bootstrap=True, workers=1, grid=None):
    """Metric report for one model; the per-model block of every report."""
    e = cfg.evaluation
    grid = cfg.grid if grid is None else grid
    ev = RankingEvaluator(dataset, grid=grid, floor=float(e["ipcw_floor"]),
                          per_group_censoring=bool(e["per_group_censoring"]))
    report = ev.report(model.risk_scores(dataset))
    b = cfg.bootstrap
    if bootstrap and b["n_boot"]:
        for metric, attr in (("c_index", "c_index"), ("i_auc", "iauc")):
            point, lo, hi = bootstrap_ci(dataset, model, metric, b["n_boot"], b["seed"],
                                         grid, float(e["ipcw_floor"]), b["stratified"],
                                         workers)
            report.bootstrap[attr] = {"point": point, "lower": lo, "upper": hi}
    return report


def risk_quantile_rows(model, dataset, times):
    """Predicted-risk (1 - S(t|x)) quartiles by group and event status."""
    rows = []
    times = np.asarray(times, dtype=float)
    risk = 1.0 - model.survival(dataset, times)
    for g in dataset.group_levels:
        for ev in (0, 1):
            sel = (dataset.group == g) & (dataset.event == bool(ev))
            if not sel.any():
                continue
            q = np.percentile(risk[sel], [25, 50, 75], axis=0)
            for name, qs in zip(("risk_q25", "risk_q50", "risk_q75"), q):
                rows += [(name, f"{g}|event={ev}", float(t), float(v))
                         for t, v in zip(times, qs)]
    return rows


def write_curves(path, blocks):
    """Tidy CSV: model, metric, pair, time, value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "pair", "time", "value"])
        for model_name, rows in blocks:
            for metric, pair, t, v in rows:
                w.writerow([model_name, metric, pair, "" if t is None else repr(t),
                            "" if v is None else repr(v)])


def table_row(name, report):
    d = report.to_dict()
    row = {"model": name}
    for key in METRIC_ORDER:
        row[key] = d["disparities"][key]
    for key in ("iauc", "c_index"):
        ci = report.bootstrap.get(key)
        row[key] = {"value": d[key]["overall"],
                    "lower": ci["lower"] if ci else None,
                    "upper": ci["upper"] if ci else None}
    return row


def _finite(x):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    return x


def run_pipeline(cfg, out_dir=None, workers=1):
    """Execute every stage and write the output directory.

    Outputs are staged in a temporary directory and moved into place only
    after every stage succeeds, so a failed run leaves nothing behind.
    """
    out = Path(out_dir or cfg.output_dir)
    timer = _Timer()
    with timer.stage("load"):
        data = load_dataset(cfg)
        if len(data.group_levels) < 2:
            raise CrossMetricError(
                f"cross-group metrics need at least two groups, found {list(data.group_levels)}")
    with timer.stage("split"):
        train, val, test = stratified_split(data, cfg.split)
        for name, part in (("validation", val), ("test", test)):
            if len(part.group_levels) < 2:
                raise CrossMetricError(f"the {name} split holds fewer than two groups")
    with timer.stage("rashomon"):
        partition = VariablePartition.from_roster(data.variable_names, cfg.raw["sensitive"])
        rset = build_integral_set(train, val, partition, cfg.rashomon, cfg.measure,
                                  cfg.ties, cfg.fit_config, workers)
        blind = rset.case_fit(())
        if blind is None:
            raise SchemaError(f"the sensitive-free model could not be fitted: {rset.failures}")
    e = cfg.evaluation
    with timer.stage("select"):
        fasm, result, table = select_fasm(
            rset, val, cfg.grid, normalize=bool(cfg.raw["selection"]["normalize"]),
            workers=workers, floor=float(e["ipcw_floor"]),
            per_group_censoring=bool(e["per_group_censoring"]))
    models = {"CoxPH": rset.full.model, "Under-blindness": blind.model,
              "FASM": fasm.to_model()}
    with timer.stage("evaluate"):
        val_reports = {k: model_report(m, val, cfg, bootstrap=False) for k, m in models.items()}
        test_reports = {k: model_report(m, test, cfg, workers=workers)
                        for k, m in models.items()}

    selected = {"case": list(fasm.case), "draw": fasm.draw_index, "msi": _finite(result.msi),
                "msi_infinite": result.infinite, "validation_performance": fasm.performance,
                "profile": result.profile.as_dict()}
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".fasm-", dir=out.parent))
    try:
        with timer.stage("write"):
            fasm_doc = models["FASM"].to_dict()
            fasm_doc["selection"] = selected
            dump_json(fasm_doc, staging / "fasm_model.json")
            rset.write_jsonl(staging / "rashomon.jsonl")
            common = {"metric_order": list(METRIC_ORDER), "measure": rset.measure,
                      "rashomon": {"full_model_performance": rset.full_performance,
                                   "cases": [{"case": list(c.case), "performance": c.performance,
                                              "gated_in": c.gated_in, "stats": c.stats}
                                             for c in rset.cases],
                                   "failures": rset.failures}}
            dump_json({**common, "split": "validation", "selected": selected,
                       "models": {k: r.to_dict() for k, r in val_reports.items()},
                       "candidates": _finite(table)},
                      staging / "report_val.json")
            dump_json({**common, "split": "test", "selected": selected,
                       "table": {"columns": list(TABLE_COLUMNS),
                                 "rows": [table_row(k, r) for k, r in test_reports.items()]},
                       "models": {k: r.to_dict() for k, r in test_reports.items()}},
                      staging / "report_test.json")
            risk_times = [float(t) for t in e["risk_times"]]
            write_curves(staging / "curves.csv",
                         [(k, r.rows()) for k, r in test_reports.items()]
                         + [(k, risk_quantile_rows(models[k], test, risk_times))
                            for k in models])
            files = {name: sha256(staging / name) for name in OUTPUT_FILES}
        out.mkdir(parents=True, exist_ok=True)
        for name in OUTPUT_FILES:
            os.replace(staging / name, out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    manifest = {
        "toolkit_version": __version__,
        "config": cfg.echo(),
        "seeds": {"split": cfg.split.seed, "rashomon": cfg.rashomon.seed,
                  "bootstrap": cfg.bootstrap["seed"]},
        "selected_model": selected,
        "timings_seconds": timer.timings,
        "files": files,
    }
    dump_json(manifest, out / "manifest.json")
    log.info("run complete: %s", out)
    return {"out": out, "manifest": manifest, "rashomon": rset, "fasm": fasm,
            "table": table, "test_reports": test_reports, "val_reports": val_reports}
