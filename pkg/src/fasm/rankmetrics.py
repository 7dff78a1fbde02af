"""Censoring-adjusted ranking metrics and their subgroup disparities.

Every concordance-style estimate here is built the same way: for each anchor
(an observed event) count its comparable partners and the concordant share of
them as exact half-integers, multiply by the anchor's IPCW weight, and add the
products with :func:`math.fsum`.  Because the counts are exact and ``fsum`` is
correctly rounded, results do not depend on summation order and are
reproducible bit-for-bit.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .censorkm import DEFAULT_FLOOR, StepFunction, censoring_km, kaplan_meier
from .errors import ConfigError, MetricUndefinedError

_ROW_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class TimeGrid:
    t_start: float
    t_end: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if len(pts) == 0:
            raise ConfigError("time grid is empty")
        if not self.t_end > self.t_start >= 0:
            raise ConfigError("time grid needs 0 <= t_start < t_end")
        if np.any(np.diff(pts) <= 0) or pts[0] <= self.t_start or pts[-1] > self.t_end:
            raise ConfigError("grid points must increase strictly within (t_start, t_end]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def regular(cls, start=1.0, end=120.0, step=1.0):
        """Points ``start, start+step, ..., <= end`` with t_start = start - step."""
        if step <= 0 or end < start:
            raise ConfigError(f"bad grid {start}:{end}:{step}")
        m = int(math.floor((end - start) / step + 1e-9)) + 1
        return cls(max(start - step, 0.0), end, start + step * np.arange(m))

    @classmethod
    def parse(cls, text):
        """Parse ``"start:end:step"``."""
        try:
            start, end, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise ConfigError(f"grid must look like start:end:step, got {text!r}") from None
        return cls.regular(start, end, step)

    @classmethod
    def event_times(cls, dataset, t_start=0.0, t_end=None):
        """Grid on the distinct observed event times inside the window."""
        t = np.unique(dataset.time[dataset.event])
        t_end = float(t.max()) if t_end is None else t_end
        return cls(t_start, t_end, t[(t > t_start) & (t <= t_end)])

    def to_dict(self):
        return {"t_start": self.t_start, "t_end": self.t_end, "points": self.points.tolist()}


def stieltjes_masses(S_hat: StepFunction, grid: TimeGrid):
    """Increments S(t_{k-1}) - S(t_k) with t_0 = t_start."""
    edges = np.r_[grid.t_start, grid.points]
    s = S_hat(edges)
    return s[:-1] - s[1:]


def integrate_series(values, masses):
    """S-weighted average of a grid series.

    Grid points with an undefined (NaN) value hand their mass to the nearest
    later defined point, or the nearest earlier one if none is later.

    Returns
    -------
    value : float
    merged : list of int
        Indices of undefined points whose mass was moved.
    """
    values = np.asarray(values, dtype=float)
    masses = np.asarray(masses, dtype=float).copy()
    defined = np.flatnonzero(~np.isnan(values))
    if len(defined) == 0:
        raise MetricUndefinedError("no grid point has a defined value")
    merged = []
    for k in np.flatnonzero(np.isnan(values)):
        later = defined[defined > k]
        target = later[0] if len(later) else defined[defined < k][-1]
        masses[target] += masses[k]
        masses[k] = 0.0
        merged.append(int(k))
    used = defined[masses[defined] > 0]
    if len(used) == 0:
        raise MetricUndefinedError("no survival mass inside the evaluation window")
    total = math.fsum(masses[used].tolist())
    avg = math.fsum((values[used] * masses[used]).tolist()) / total
    lo, hi = values[used].min(), values[used].max()
    return float(min(max(avg, lo), hi)), merged


def _weighted_ratio(weights, num_counts, den_counts):
    den = math.fsum((weights * den_counts).tolist())
    if den == 0:
        return math.nan
    return math.fsum((weights * num_counts).tolist()) / den


class RankingEvaluator:
    """Pairwise ranking metrics for one evaluation dataset.

    Censoring and survival curves, IPCW weights and the time grid are fixed
    at construction; :meth:`counts` then works out the pair statistics for a
    score vector, and the metric methods read them.

    Parameters
    ----------
    dataset : SurvivalDataset
    grid : TimeGrid, optional
        Needed for AUC(t)-based metrics.
    G : StepFunction or dict, optional
        Censoring survival; defaults to the Kaplan-Meier estimate on
        ``dataset``.  A dict maps group label to a per-group curve.
    S_hat : StepFunction, optional
        Overall event survival used as integration measure.
    floor : float
        Lower truncation of G inside IPCW weights.
    per_group_censoring : bool
        Estimate G separately within each group (ignored if ``G`` given).
    """

    def __init__(self, dataset, grid=None, G=None, S_hat=None, floor=DEFAULT_FLOOR,
                 per_group_censoring=False):
        self.dataset = dataset
        self.grid = grid
        self.floor = floor
        self.levels = tuple(dataset.group_levels)
        if G is None:
            if per_group_censoring:
                G = {g: censoring_km(dataset.subset(np.flatnonzero(dataset.group == g)))
                     for g in self.levels}
            else:
                G = censoring_km(dataset)
        self.G = G
        self.per_group = isinstance(G, dict)
        self.S_hat = kaplan_meier(dataset) if S_hat is None else S_hat

        time, event, group = dataset.time, dataset.event, dataset.group
        self.members = {g: np.flatnonzero(group == g) for g in self.levels}
        self.anchors = {g: idx[event[idx]] for g, idx in self.members.items()}
        self.anchor_weight = {}
        self.case_weight = {}
        for g, idx in self.anchors.items():
            curve = G[g] if self.per_group else G
            g_minus = np.maximum(curve.left_limit(time[idx]), floor)
            self.anchor_weight[g] = 1.0 / (g_minus * g_minus)
            self.case_weight[g] = 1.0 / g_minus
        if grid is not None:
            pts = grid.points
            self.masses = stieltjes_masses(self.S_hat, grid)
            self.control_mask = {g: (time[idx][:, None] > pts[None, :]).astype(float)
                                 for g, idx in self.members.items()}
            self.n_controls = {g: m.sum(axis=0) for g, m in self.control_mask.items()}
            self._layouts = {}
            self.control_weight = {}
            for g in self.levels:
                curve = G[g] if self.per_group else G
                self.control_weight[g] = 1.0 / np.maximum(curve(pts), floor)

    # -- pair statistics -------------------------------------------------

    def counts(self, scores):
        """Per-anchor pair counts for every ordered group pair.

        Returns a dict keyed by ``(a, b)`` with
        ``ci_conc``/``ci_comp`` (twice-concordant and comparable counts per
        anchor of ``a`` against later subjects of ``b``) and, with a grid,
        ``auc_conc`` (twice-concordant counts per case of ``a`` against
        controls of ``b`` at every grid point).
        """
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (len(self.dataset),):
            raise ValueError("scores must align with the dataset")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        time = self.dataset.time
        out = {}
        for a, b in itertools.product(self.levels, repeat=2):
            ia, ib = self.anchors[a], self.members[b]
            ra, rb = scores[ia], scores[ib]
            ta, tb = time[ia], time[ib]
            ci_conc = np.empty(len(ia))
            ci_comp = np.empty(len(ia))
            auc_conc = None
            if self.grid is not None:
                auc_conc = np.empty((len(ia), len(self.grid.points)))
            for lo in range(0, len(ia), _ROW_CHUNK):
                sl = slice(lo, lo + _ROW_CHUNK)
                cmp = (2.0 * (ra[sl, None] > rb[None, :])
                       + (ra[sl, None] == rb[None, :]))
                later = tb[None, :] > ta[sl, None]
                ci_comp[sl] = later.sum(axis=1)
                ci_conc[sl] = np.where(later, cmp, 0.0).sum(axis=1)
                if auc_conc is not None:
                    auc_conc[sl] = cmp @ self.control_mask[b]
            out[a, b] = {"ci_conc": ci_conc, "ci_comp": ci_comp, "auc_conc": auc_conc}
        return out

    # -- metrics ---------------------------------------------------------

    def _groups(self, spec):
        if spec is None:
            return self.levels
        if isinstance(spec, str):
            spec = (spec,)
        unknown = [g for g in spec if g not in self.levels]
        if unknown:
            raise MetricUndefinedError(f"no subjects in group(s) {unknown}")
        return tuple(spec)

    def concordance(self, counts, cases=None, controls=None):
        """IPCW concordance with anchors from ``cases`` groups and partners
        from ``controls`` groups; NaN if no comparable pair."""
        w, num, den = [], [], []
        for a in self._groups(cases):
            conc = sum(counts[a, b]["ci_conc"] for b in self._groups(controls))
            comp = sum(counts[a, b]["ci_comp"] for b in self._groups(controls))
            w.append(self.anchor_weight[a])
            num.append(0.5 * conc)
            den.append(comp)
        return _weighted_ratio(np.concatenate(w), np.concatenate(num), np.concatenate(den))

    def _case_layout(self, cases):
        """Permutation putting the concatenated anchors of ``cases`` in time
        order, and per grid point the number of cases with T <= t."""
        key = tuple(cases)
        if key not in self._layouts:
            t = np.concatenate([self.dataset.time[self.anchors[a]] for a in cases])
            perm = np.argsort(t, kind="stable")
            self._layouts[key] = perm, np.searchsorted(t[perm], self.grid.points, side="right")
        return self._layouts[key]

    def auc_series(self, counts, cases=None, controls=None):
        """Cumulative/dynamic AUC(t) over the grid; NaN where no case or no
        control exists."""
        if self.grid is None:
            raise ConfigError("AUC(t) needs a time grid")
        cases, controls = self._groups(cases), self._groups(controls)
        out = np.full(len(self.grid.points), np.nan)
        perm, n_cases = self._case_layout(cases)
        w = np.concatenate([self.case_weight[a] for a in cases])[perm]
        if self.per_group:
            num = np.concatenate([
                sum(self.control_weight[b] * (0.5 * counts[a, b]["auc_conc"]) for b in controls)
                for a in cases])
            ctrl = sum(self.control_weight[b] * self.n_controls[b] for b in controls)
        else:
            v = self.control_weight[self.levels[0]]
            num = np.concatenate([
                v * (0.5 * sum(counts[a, b]["auc_conc"] for b in controls)) for a in cases])
            ctrl = v * sum(self.n_controls[b] for b in controls)
        numer = np.ascontiguousarray((w[:, None] * num[perm]).T)
        denom = np.ascontiguousarray((w[:, None] * ctrl[None, :]).T)
        for k in np.flatnonzero((n_cases > 0) & (ctrl > 0)):
            m = n_cases[k]
            out[k] = math.fsum(numer[k, :m].tolist()) / math.fsum(denom[k, :m].tolist())
        return out

    def integrate(self, series):
        if self.grid is None:
            raise ConfigError("integration needs a time grid")
        return integrate_series(series, self.masses)

    def report(self, scores, bootstrap=None):
        """Full :class:`MetricReport` for one score vector."""
        counts = self.counts(scores)
        levels = self.levels
        c_overall = self.concordance(counts)
        c_group = {g: self.concordance(counts, g, g) for g in levels}
        xci = {(a, b): self.concordance(counts, a, b)
               for a, b in itertools.permutations(levels, 2)}
        auc = iauc = None
        auc_group, iauc_group, xauc = {}, {}, {}
        merged = {}
        if self.grid is not None:
            auc = self.auc_series(counts)
            iauc, merged["iauc"] = _safe_integrate(self, auc)
            for g in levels:
                auc_group[g] = self.auc_series(counts, g, g)
                iauc_group[g], merged[f"iauc|{g}"] = _safe_integrate(self, auc_group[g])
            for a, b in itertools.permutations(levels, 2):
                xauc[a, b] = self.auc_series(counts, a, b)
        disp = disparities(c_group, iauc_group if self.grid is not None else None,
                           xci, xauc if self.grid is not None else None,
                           self.masses if self.grid is not None else None)
        return MetricReport(
            c_index=c_overall, c_index_group=c_group, iauc=iauc, iauc_group=iauc_group,
            auc=auc, auc_group=auc_group, xci=xci, xauc=xauc, grid=self.grid,
            disparities=disp, merged_points=merged, bootstrap=bootstrap or {},
            per_group_censoring=self.per_group,
        )


def _safe_integrate(ev, series):
    try:
        return ev.integrate(series)
    except MetricUndefinedError:
        return math.nan, []


def _require(value, what):
    if value is None or math.isnan(value):
        raise MetricUndefinedError(f"{what} is undefined: no comparable pairs")
    return value


# --------------------------------------------------------------------------
# Functional interface

def c_index(dataset, scores, G=None, restrict_group=None, floor=DEFAULT_FLOOR):
    """IPCW concordance index P(R_i > R_j | T_i < T_j), optionally within one
    group.  Pairs are anchored at observed events; ties in score count 0.5."""
    ev = RankingEvaluator(dataset, G=G, floor=floor, S_hat=StepFunction.constant(1.0))
    counts = ev.counts(scores)
    return _require(ev.concordance(counts, restrict_group, restrict_group), "C-index")


def x_ci(dataset, scores, G=None, a=None, b=None, floor=DEFAULT_FLOOR):
    """Cross-group concordance: anchors (events) from group ``a``, later
    subjects from group ``b``."""
    ev = RankingEvaluator(dataset, G=G, floor=floor, S_hat=StepFunction.constant(1.0))
    counts = ev.counts(scores)
    return _require(ev.concordance(counts, a, b), f"xCI({a},{b})")


def auc_t(dataset, scores, G=None, t=None, restrict=None, floor=DEFAULT_FLOOR):
    """Cumulative/dynamic AUC at time ``t``.

    Cases are events with T <= t (weight 1/G(T-)), controls have T > t
    (weight 1/G(t)).  ``restrict=(a, b)`` takes cases from group ``a`` and
    controls from group ``b`` (the cross-group xAUC).
    """
    grid = TimeGrid(0.0, float(t), [float(t)])
    ev = RankingEvaluator(dataset, grid=grid, G=G, floor=floor,
                          S_hat=StepFunction.constant(1.0))
    a, b = restrict if restrict is not None else (None, None)
    value = ev.auc_series(ev.counts(scores), a, b)[0]
    return _require(value, f"AUC({t})")


def i_auc(dataset, scores, G=None, S_hat=None, grid=None, restrict_group=None,
          floor=DEFAULT_FLOOR):
    """AUC(t) averaged over the grid with weights -dS(t)."""
    grid = grid or TimeGrid.regular()
    ev = RankingEvaluator(dataset, grid=grid, G=G, S_hat=S_hat, floor=floor)
    series = ev.auc_series(ev.counts(scores), restrict_group, restrict_group)
    return ev.integrate(series)[0]


def disparities(c_group, iauc_group, xci, xauc, masses):
    """Subgroup disparities from per-group and cross-group metric values.

    Parameters
    ----------
    c_group, iauc_group : dict group -> float
        ``iauc_group`` may be None when no time grid is used.
    xci : dict (a, b) -> float
    xauc : dict (a, b) -> ndarray, or None
    masses : ndarray or None
        Integration masses for the grid (see :func:`stieltjes_masses`).

    Returns
    -------
    dict with keys ``delta_ci``, ``delta_iauc``, ``delta_xci``,
    ``delta_xauc`` (series) and ``i_delta_xauc``.  Cross-group entries are
    None with a single group; NaN marks an undefined component.
    """
    levels = sorted(c_group)
    pairs = list(itertools.combinations(levels, 2))

    def max_gap(values):
        if values is None:
            return None
        if not pairs:
            return 0.0
        vals = [values[g] for g in levels]
        if any(v is None or math.isnan(v) for v in vals):
            return math.nan
        return max(abs(values[a] - values[b]) for a, b in pairs)

    out = {"delta_ci": max_gap(c_group), "delta_iauc": max_gap(iauc_group),
           "delta_xci": None, "delta_xauc": None, "i_delta_xauc": None}
    if not pairs:
        return out
    gaps = [abs(xci[a, b] - xci[b, a]) for a, b in pairs]
    out["delta_xci"] = math.nan if any(math.isnan(g) for g in gaps) else max(gaps)
    if xauc is not None:
        series = np.vstack([np.abs(xauc[a, b] - xauc[b, a]) for a, b in pairs])
        with np.errstate(all="ignore"):
            delta = np.where(np.all(np.isnan(series), axis=0), np.nan,
                             np.nanmax(np.where(np.isnan(series), -np.inf, series), axis=0))
        out["delta_xauc"] = delta
        try:
            out["i_delta_xauc"] = integrate_series(delta, masses)[0]
        except MetricUndefinedError:
            out["i_delta_xauc"] = math.nan
    return out


# --------------------------------------------------------------------------
# Reports

def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def _pair_key(pair):
    return f"{pair[0]}|{pair[1]}"


@dataclass(eq=False)
class MetricReport:
    c_index: float
    c_index_group: dict
    iauc: float
    iauc_group: dict
    auc: np.ndarray
    auc_group: dict
    xci: dict
    xauc: dict
    grid: TimeGrid
    disparities: dict
    merged_points: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)
    per_group_censoring: bool = False

    def to_dict(self):
        d = self.disparities
        out = {
            "c_index": {"overall": _num(self.c_index),
                        "groups": {g: _num(v) for g, v in self.c_index_group.items()}},
            "iauc": {"overall": _num(self.iauc),
                     "groups": {g: _num(v) for g, v in self.iauc_group.items()}},
            "xci": {_pair_key(p): _num(v) for p, v in self.xci.items()},
            "disparities": {
                "delta_ci": _num(d["delta_ci"]),
                "delta_iauc": _num(d["delta_iauc"]),
                "delta_xci": _num(d["delta_xci"]),
                "i_delta_xauc": _num(d["i_delta_xauc"]),
            },
            "censoring": "per-group" if self.per_group_censoring else "overall",
        }
        if self.grid is not None:
            out["grid"] = {"t_start": self.grid.t_start, "t_end": self.grid.t_end,
                           "n_points": len(self.grid.points)}
            out["undefined_points_merged"] = {k: v for k, v in self.merged_points.items() if v}
        if self.bootstrap:
            out["bootstrap"] = self.bootstrap
        return out

    def rows(self):
        """Tidy rows ``(metric, group_or_pair, time, value)``; scalars carry
        an empty time and undefined values an empty value."""
        rows = [("c_index", "overall", None, self.c_index)]
        rows += [("c_index", g, None, v) for g, v in self.c_index_group.items()]
        rows += [("iauc", "overall", None, self.iauc)]
        rows += [("iauc", g, None, v) for g, v in self.iauc_group.items()]
        rows += [("xci", _pair_key(p), None, v) for p, v in self.xci.items()]
        d = self.disparities
        for key in ("delta_ci", "delta_iauc", "delta_xci", "i_delta_xauc"):
            rows.append((key, "all", None, d[key]))
        if self.grid is not None:
            pts = self.grid.points
            rows += [("auc", "overall", t, v) for t, v in zip(pts, self.auc)]
            for g, s in self.auc_group.items():
                rows += [("auc", g, t, v) for t, v in zip(pts, s)]
            for p, s in self.xauc.items():
                rows += [("xauc", _pair_key(p), t, v) for t, v in zip(pts, s)]
            if d["delta_xauc"] is not None:
                pairs = sorted({tuple(sorted(p)) for p in self.xauc})
                label = _pair_key(pairs[0]) if len(pairs) == 1 else "max"
                rows += [("delta_xauc", label, t, v) for t, v in zip(pts, d["delta_xauc"])]
        return [(m, g, None if t is None else float(t), _num(v)) for m, g, t, v in rows]


def evaluate(dataset, scores, grid=None, floor=DEFAULT_FLOOR, per_group_censoring=False):
    """Every metric of the report for one score vector."""
    ev = RankingEvaluator(dataset, grid=grid, floor=floor,
                          per_group_censoring=per_group_censoring)
    return ev.report(scores)


# --------------------------------------------------------------------------
# Bootstrap

def _replicate_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _metric_value(dataset, scores, metric, grid, floor):
    if metric == "c_index":
        ev = RankingEvaluator(dataset, floor=floor, S_hat=StepFunction.constant(1.0))
        return ev.concordance(ev.counts(scores))
    if metric == "i_auc":
        ev = RankingEvaluator(dataset, grid=grid, floor=floor)
        series = ev.auc_series(ev.counts(scores))
        try:
            return ev.integrate(series)[0]
        except MetricUndefinedError:
            return math.nan
    raise ConfigError(f"unknown bootstrap metric {metric!r}")


def bootstrap_ci(dataset, model, metric="c_index", n_boot=200, seed=0, grid=None,
                 floor=DEFAULT_FLOOR, stratified=False, workers=1):
    """Percentile bootstrap 95% interval for ``c_index`` or ``i_auc``.

    Subjects are resampled with replacement and G, S are re-estimated on
    every replicate.  Replicate ``b`` draws from its own RNG stream derived
    from ``(seed, b)``, so results do not depend on ``workers``.

    Returns
    -------
    point, lower, upper : float
    """
    if n_boot < 100:
        raise ConfigError("n_boot must be at least 100")
    if metric == "i_auc" and grid is None:
        grid = TimeGrid.regular()
    score_fn = model.risk_scores if hasattr(model, "risk_scores") else model
    point = _metric_value(dataset, score_fn(dataset), metric, grid, floor)
    if math.isnan(point):
        raise MetricUndefinedError(f"{metric} is undefined on the full dataset")
    n = len(dataset)
    strata = [np.flatnonzero(dataset.group == g) for g in dataset.group_levels]

    def replicate(b):
        rng = _replicate_rng(seed, b)
        if stratified:
            idx = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata])
        else:
            idx = rng.integers(0, n, n)
        sample = dataset.subset(idx)
        if not sample.event.any():
            return math.nan
        return _metric_value(sample, score_fn(sample), metric, grid, floor)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(replicate, range(n_boot)))
    else:
        values = [replicate(b) for b in range(n_boot)]
    values = np.array(values)
    ok = values[~np.isnan(values)]
    if n_boot - len(ok) > 0.1 * n_boot:
        raise MetricUndefinedError(
            f"{n_boot - len(ok)} of {n_boot} bootstrap replicates left {metric} undefined")
    lower, upper = np.percentile(ok, [2.5, 97.5])
    return float(point), float(lower), float(upper)
