"""Survival cohorts: data model, CSV ingestion, stratified splits, simulation
and descriptive summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, SplitError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Subject:
    covariates: dict
    time: float
    event: bool
    group: str


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Column-oriented survival data.

    ``X`` rows are subjects, columns follow ``variable_names``.  Instances are
    treated as immutable; the arrays are flagged read-only on construction.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    group: np.ndarray
    variable_names: tuple
    group_levels: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, len(self.variable_names))
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event, dtype=bool).ravel()
        group = np.asarray(self.group, dtype=object).ravel()
        n = len(time)
        if X.shape != (n, len(self.variable_names)):
            raise ValueError(
                f"X has shape {X.shape}, expected ({n}, {len(self.variable_names)})")
        if len(event) != n or len(group) != n:
            raise ValueError("time, event and group must have the same length")
        if n and not (np.all(np.isfinite(time)) and np.all(time > 0)):
            raise ValueError("survival times must be positive and finite")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        levels = self.group_levels
        if levels is None:
            levels = tuple(sorted({str(g) for g in group}))
        else:
            levels = tuple(levels)
            present = {str(g) for g in group}
            missing = present - set(levels)
            if missing:
                raise ValueError(f"group labels {sorted(missing)} not in group_levels")
            levels = tuple(lv for lv in levels if lv in present)
        for arr in (X, time, event, group):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "group_levels", levels)

    def __len__(self):
        return len(self.time)

    @property
    def n_events(self):
        return int(self.event.sum())

    def subject(self, i):
        return Subject(
            covariates=dict(zip(self.variable_names, self.X[i].tolist())),
            time=float(self.time[i]),
            event=bool(self.event[i]),
            group=str(self.group[i]),
        )

    @property
    def subjects(self):
        return [self.subject(i) for i in range(len(self))]

    def subset(self, index):
        index = np.asarray(index)
        return SurvivalDataset(
            self.X[index], self.time[index], self.event[index], self.group[index],
            self.variable_names,
        )

    def columns(self, names):
        """Covariate matrix restricted to ``names`` (in that order)."""
        pos = {v: k for k, v in enumerate(self.variable_names)}
        missing = [nm for nm in names if nm not in pos]
        if missing:
            raise SchemaError(f"dataset lacks variables {missing}")
        return self.X[:, [pos[nm] for nm in names]]

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject]):
        if not subjects:
            raise ValueError("no subjects")
        names = tuple(subjects[0].covariates)
        for s in subjects:
            if set(s.covariates) != set(names):
                raise ValueError("subjects carry different covariate names")
        X = [[s.covariates[nm] for nm in names] for s in subjects]
        return cls(np.array(X, dtype=float).reshape(len(subjects), len(names)),
                   [s.time for s in subjects], [s.event for s in subjects],
                   [s.group for s in subjects], names)


# --------------------------------------------------------------------------
# CSV ingestion

def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, time="time", event="event", group="group", covariates=None,
             categorical=None):
    """Read a cohort from a comma-separated file.

    Parameters
    ----------
    path : str or Path
    time, event, group : str
        Column names holding follow-up time, the 0/1 event flag and the
        sensitive group label.
    covariates : list of str, optional
        Covariate columns. Defaults to every remaining column followed by
        the group column, so the sensitive attribute is available to models
        as ``group=<level>`` indicators.  Pass an explicit list without the
        group column to keep it out of the design matrix.
    categorical : list of str, optional
        Columns to one-hot encode.  Any covariate column with a non-numeric
        value is treated as categorical regardless.

    Categorical columns become 0/1 indicators named ``"col=level"``; the
    lexicographically first level is the reference and gets no column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        rows = [r for r in reader if r]

    for col in (time, event, group):
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    if covariates is None:
        covariates = [h for h in header if h not in (time, event, group)] + [group]
    for col in covariates:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    pos = {h: k for k, h in enumerate(header)}

    times, events, groups = [], [], []
    raw = {c: [] for c in covariates}
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=i)
        cells = [c.strip() for c in row]
        try:
            t = float(cells[pos[time]])
        except ValueError:
            raise ParseError(f"non-numeric time {cells[pos[time]]!r}", row=i) from None
        if not (math.isfinite(t) and t > 0):
            raise ParseError(f"time must be positive and finite, got {t}", row=i)
        ev = cells[pos[event]]
        if ev in ("0", "1"):
            e = ev == "1"
        elif _is_number(ev) and float(ev) in (0.0, 1.0):
            e = float(ev) == 1.0
        else:
            raise ParseError(f"event value {ev!r} is not 0 or 1", row=i)
        g = cells[pos[group]]
        if g == "":
            raise ParseError(f"missing value in column {group!r}", row=i)
        for c in covariates:
            if cells[pos[c]] == "":
                raise ParseError(f"missing value in column {c!r}", row=i)
            raw[c].append(cells[pos[c]])
        times.append(t)
        events.append(e)
        groups.append(g)

    categorical = set(categorical or ())
    names, cols = [], []
    for c in covariates:
        values = raw[c]
        if c in categorical or c == group or not all(_is_number(v) for v in values):
            levels = sorted(set(values))
            for lv in levels[1:]:
                names.append(f"{c}={lv}")
                cols.append([1.0 if v == lv else 0.0 for v in values])
        else:
            names.append(c)
            cols.append([float(v) for v in values])
    n = len(times)
    X = np.array(cols, dtype=float).T if cols else np.empty((n, 0))
    return SurvivalDataset(X.reshape(n, len(names)), times, events, groups, tuple(names))


def write_csv(dataset: SurvivalDataset, path, group_indicators=True):
    """Write a cohort as ``time,event,group,covariates...``.

    Indicator columns derived from the group label (``group=B`` ...) are
    dropped when ``group_indicators`` is true since the loader rebuilds them
    from the group column.
    """
    keep = [k for k, nm in enumerate(dataset.variable_names)
            if not (group_indicators and nm.startswith("group="))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", "group"] + [dataset.variable_names[k] for k in keep])
        for i in range(len(dataset)):
            w.writerow([repr(float(dataset.time[i])), int(dataset.event[i]),
                        dataset.group[i]] + [repr(float(dataset.X[i, k])) for k in keep])


# --------------------------------------------------------------------------
# Stratified split

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.7, 0.1, 0.2)
    seed: int = 0
    strata: tuple = ("group", "event")

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3:
            raise ConfigError("split fractions must be a (train, val, test) triple")
        if any(f < 0 or f > 1 for f in fr) or abs(sum(fr) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions {fr} must lie in [0, 1] and sum to 1")
        if not set(self.strata) <= {"group", "event"}:
            raise ConfigError(f"unknown strata roles {self.strata}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "fractions", fr)


def largest_remainder(size, fractions):
    """Integer counts summing to ``size`` closest to ``fractions * size``.

    Fractions are taken at their decimal value, so 0.7 * 25 is exactly 17.5.
    Ties in the remainder go to the earlier split.
    """
    exact = [Fraction(repr(f)) * size for f in fractions]
    counts = [math.floor(q) for q in exact]
    short = size - sum(counts)
    order = sorted(range(len(exact)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:short]:
        counts[k] += 1
    return counts


def _strata_keys(dataset, roles):
    keys = []
    for i in range(len(dataset)):
        key = []
        if "group" in roles:
            key.append(str(dataset.group[i]))
        if "event" in roles:
            key.append(int(dataset.event[i]))
        keys.append(tuple(key))
    return keys


def stratified_split(dataset: SurvivalDataset, spec: SplitSpec = SplitSpec()):
    """Split into (train, val, test), stratifying on group x event status.

    Within each stratum the per-split counts follow largest-remainder
    rounding and membership is a seeded uniform shuffle.  Strata are visited
    in sorted order; each split keeps the original subject order.
    """
    keys = _strata_keys(dataset, spec.strata)
    strata = {}
    for i, k in enumerate(keys):
        strata.setdefault(k, []).append(i)
    n_positive = sum(f > 0 for f in spec.fractions)
    rng = np.random.default_rng(int(spec.seed))
    parts = [[], [], []]
    for key in sorted(strata):
        members = np.array(strata[key])
        if n_positive == 3 and len(members) < 3:
            raise SplitError(
                f"stratum {key} has {len(members)} subject(s); at least 3 are needed")
        counts = largest_remainder(len(members), spec.fractions)
        shuffled = members[rng.permutation(len(members))]
        start = 0
        for k, c in enumerate(counts):
            parts[k].extend(shuffled[start:start + c].tolist())
            start += c
    return tuple(dataset.subset(np.sort(np.array(p, dtype=int))) for p in parts)


# --------------------------------------------------------------------------
# Simulation

@dataclass(frozen=True)
class SimSpec:
    """Weibull proportional-hazards cohort with per-group exponential censoring.

    Keys of ``true_beta`` name the covariates; a key ``"group=<level>"`` is
    the coefficient on that group's indicator.  Indicators for every
    non-reference level are always emitted (coefficient 0 if absent).
    """

    n: int = 1000
    group_proportions: Mapping = field(default_factory=lambda: {"A": 0.5, "B": 0.5})
    true_beta: Mapping = field(default_factory=lambda: {"x1": 0.8, "x2": -0.5})
    baseline_shape: float = 1.5
    baseline_scale: float = 100.0
    censor_rate: Mapping = field(default_factory=lambda: {"A": 0.005, "B": 0.005})
    horizon: float = 120.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n <= 0:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        props = dict(self.group_proportions)
        if not props:
            raise ConfigError("group_proportions is empty")
        if any(not 0 < p < 1 for p in props.values()) and len(props) > 1:
            raise ConfigError("group proportions must lie in (0, 1)")
        if abs(sum(props.values()) - 1.0) > 1e-9:
            raise ConfigError("group proportions must sum to 1")
        if self.baseline_shape <= 0 or self.baseline_scale <= 0:
            raise ConfigError("Weibull shape and scale must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        rates = dict(self.censor_rate)
        for g in props:
            if rates.get(g, 0.0) < 0:
                raise ConfigError(f"censor rate for {g!r} is negative")
        for key in self.true_beta:
            if key.startswith("group=") and key[6:] not in props:
                raise ConfigError(f"{key!r} names an unknown group")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def simulate_cohort(spec: SimSpec) -> SurvivalDataset:
    rng = np.random.default_rng(int(spec.seed))
    n = int(spec.n)
    levels = sorted(spec.group_proportions)
    cum = np.cumsum([spec.group_proportions[g] for g in levels])
    cum[-1] = 1.0
    # one uniform per subject, stratified over n equal cells
    u = (rng.permutation(n) + rng.random(n)) / n
    gidx = np.searchsorted(cum, u, side="right")
    group = np.array([levels[k] for k in gidx], dtype=object)

    cont = [k for k in spec.true_beta if not k.startswith("group=")]
    names = list(cont) + [f"group={g}" for g in levels[1:]]
    X = np.empty((n, len(names)))
    X[:, :len(cont)] = rng.standard_normal((n, len(cont)))
    for k, g in enumerate(levels[1:]):
        X[:, len(cont) + k] = (group == g).astype(float)
    beta = np.array([float(spec.true_beta.get(nm, 0.0)) for nm in names])

    # H0(t) = (t / scale)^shape, so T = scale * (E / exp(lp))^(1/shape)
    lp = X @ beta
    e = rng.exponential(size=n)
    t_event = spec.baseline_scale * (e * np.exp(-lp)) ** (1.0 / spec.baseline_shape)
    rates = np.array([float(spec.censor_rate.get(g, 0.0)) for g in group])
    c = rng.exponential(size=n)
    with np.errstate(divide="ignore"):
        t_censor = np.where(rates > 0, c / np.where(rates > 0, rates, 1.0), np.inf)
    bound = np.minimum(t_censor, spec.horizon)
    event = t_event <= bound
    observed = np.minimum(t_event, bound)
    return SurvivalDataset(X, observed, event, group, tuple(names), tuple(levels))


# --------------------------------------------------------------------------
# Descriptive summary

def _block(ds: SurvivalDataset, n_total):
    n = len(ds)
    out = {"n": n, "percent": 100.0 * n / n_total if n_total else 0.0, "variables": {}}
    for k, nm in enumerate(ds.variable_names):
        col = ds.X[:, k]
        if np.all(np.isin(col, (0.0, 1.0))):
            cnt = int(col.sum())
            out["variables"][nm] = {"type": "indicator", "count": cnt,
                                    "percent": 100.0 * cnt / n}
        else:
            q1, med, q3 = np.percentile(col, [25, 50, 75])
            out["variables"][nm] = {
                "type": "continuous", "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if n > 1 else 0.0,
                "median": float(med), "iqr": [float(q1), float(q3)],
            }
    out["survival_time"] = {"mean": float(ds.time.mean()),
                            "sd": float(ds.time.std(ddof=1)) if n > 1 else 0.0}
    out["events"] = {"count": ds.n_events, "rate": ds.n_events / n}
    return out


def summarize(dataset: SurvivalDataset) -> dict:
    """Overall and per-group descriptive statistics (mean/SD with n-1
    denominator, median/IQR, indicator counts, event rate)."""
    if len(dataset) == 0:
        raise ValueError("cannot summarize an empty dataset")
    n = len(dataset)
    groups = {}
    for g in dataset.group_levels:
        groups[g] = _block(dataset.subset(np.flatnonzero(dataset.group == g)), n)
    return {"overall": _block(dataset, n), "groups": groups}
