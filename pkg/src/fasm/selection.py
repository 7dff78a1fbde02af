"""Fairness profiles, the Model Selection Index and selection of the fairest
near-optimal model."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (CrossMetricError, FasmError, MetricUndefinedError, ProfileError,
                     SelectionError)
from .rankmetrics import RankingEvaluator, disparities

# Adjacent entries multiply inside the MSI cycle, so the order is part of the
# definition.  This is the column order of the published comparison table.
METRIC_ORDER = ("delta_iauc", "delta_ci", "delta_xci", "i_delta_xauc")


@dataclass(frozen=True)
class FairnessProfile:
    metrics: tuple
    names: tuple = METRIC_ORDER
    grid: object = None

    def __post_init__(self):
        metrics = tuple(float(m) for m in self.metrics)
        if len(metrics) != len(self.names):
            raise ProfileError("metrics and names differ in length")
        if len(metrics) < 2:
            raise ProfileError("a profile needs at least two metrics")
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "names", tuple(self.names))

    def as_dict(self):
        return dict(zip(self.names, self.metrics))


@dataclass(frozen=True)
class MSIResult:
    msi: float
    profile: FairnessProfile
    model: object = None

    @property
    def infinite(self):
        return math.isinf(self.msi)


def msi(profile, model=None) -> MSIResult:
    """Model Selection Index: 1 / sum_j m_j m_{j+1}, indices cyclic.

    Returns +inf when every adjacent product vanishes.
    """
    m = profile.metrics
    bad = [n for n, v in zip(profile.names, m) if not v >= 0]
    if bad:
        raise ProfileError(f"fairness metrics must be nonnegative: {bad}")
    total = math.fsum(m[j] * m[(j + 1) % len(m)] for j in range(len(m)))
    return MSIResult(math.inf if total == 0 else 1.0 / total, profile, model)


def _profile_from_counts(ev, counts):
    levels = ev.levels
    c_group = {g: ev.concordance(counts, g, g) for g in levels}
    xci = {(a, b): ev.concordance(counts, a, b) for a, b in itertools.permutations(levels, 2)}
    iauc_group = {}
    for g in levels:
        try:
            iauc_group[g] = ev.integrate(ev.auc_series(counts, g, g))[0]
        except MetricUndefinedError:
            iauc_group[g] = math.nan
    xauc = {(a, b): ev.auc_series(counts, a, b) for a, b in itertools.permutations(levels, 2)}
    d = disparities(c_group, iauc_group, xci, xauc, ev.masses)
    values = [d[k] for k in METRIC_ORDER]
    undefined = [k for k, v in zip(METRIC_ORDER, values) if v is None or math.isnan(v)]
    if undefined:
        raise MetricUndefinedError(f"fairness metrics undefined: {undefined}")
    return FairnessProfile(values, METRIC_ORDER, ev.grid)


def fairness_profile(model, dataset, grid, evaluator=None, **evaluator_kw):
    """[delta_iauc, delta_ci, delta_xci, i_delta_xauc] of ``model`` on
    ``dataset``.  Pass a prebuilt :class:`RankingEvaluator` to reuse censoring
    curves and pair bookkeeping across many models."""
    if len(dataset.group_levels) < 2:
        raise CrossMetricError("fairness profile needs at least two groups")
    ev = evaluator or RankingEvaluator(dataset, grid=grid, **evaluator_kw)
    return _profile_from_counts(ev, ev.counts(model.risk_scores(dataset)))


def _normalize(profiles):
    arr = np.array([p.metrics for p in profiles])
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (arr - lo) / span
    return [FairnessProfile(tuple(row), p.names, p.grid) for row, p in zip(scaled, profiles)]


def _rank_key(entry):
    r = entry["msi"]
    return (0 if math.isinf(r) else 1, -r if math.isfinite(r) else 0.0,
            -entry["performance"], entry["draw"], entry["case_order"])


def select_fasm(rset, dataset, grid, normalize=False, workers=1, **evaluator_kw):
    """Profile every Rashomon-set member on ``dataset`` and pick the highest
    MSI.  Ties go to higher validation performance, then lower draw index.

    Returns
    -------
    model : SampledModel
    result : MSIResult
    table : list of dict
        Every profiled candidate, best first.
    """
    if len(dataset.group_levels) < 2:
        raise CrossMetricError("selection needs at least two groups")
    members = [(k, m) for k, c in enumerate(rset.cases) if c.gated_in for m in c.members]
    if not members:
        raise SelectionError("the Rashomon set is empty")
    ev = RankingEvaluator(dataset, grid=grid, **evaluator_kw)

    def profile(item):
        try:
            return fairness_profile(item[1], dataset, grid, evaluator=ev)
        except FasmError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            profiles = list(pool.map(profile, members))
    else:
        profiles = [profile(it) for it in members]
    ok = [(it, p) for it, p in zip(members, profiles) if p is not None]
    if not ok:
        raise SelectionError("no Rashomon-set member could be profiled")
    scored = [p for _, p in ok]
    if normalize:
        scored = _normalize(scored)
    table = []
    for ((k, m), raw), p in zip(ok, scored):
        res = msi(p, m)
        table.append({"case": list(m.case), "case_order": k, "draw": m.draw_index,
                      "performance": m.performance, "msi": res.msi,
                      **raw.as_dict(), "_result": res})
    table.sort(key=_rank_key)
    best = table[0].pop("_result")
    for row in table[1:]:
        row.pop("_result")
    return best.model, best, table
