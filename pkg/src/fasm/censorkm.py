"""Kaplan-Meier curves for the event and censoring distributions, plus the
inverse-probability-of-censoring weights built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step curve.

    ``values[k]`` holds on ``[times[k], times[k+1])``; before ``times[0]`` the
    curve equals ``value_before_first``.
    """

    times: np.ndarray
    values: np.ndarray
    value_before_first: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape:
            raise ValueError("times and values must align")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("jump times must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "value_before_first", float(self.value_before_first))

    def _lookup(self, t, side):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side=side) - 1
        padded = np.concatenate(([self.value_before_first], self.values))
        out = padded[k + 1]
        return out if out.ndim else float(out)

    def __call__(self, t):
        """Value at ``t`` (last jump at or before ``t``)."""
        return self._lookup(t, "right")

    def left_limit(self, t):
        """Value just before ``t`` (last jump strictly before ``t``)."""
        return self._lookup(t, "left")

    def to_dict(self):
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def constant(cls, value=1.0):
        return cls(np.empty(0), np.empty(0), value)


def _product_limit(time, observed):
    time = np.asarray(time, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    if len(time) == 0:
        raise ValueError("cannot estimate a survival curve from no subjects")
    jumps = np.unique(time[observed])
    if len(jumps) == 0:
        return StepFunction.constant(1.0)
    sorted_t = np.sort(time)
    at_risk = len(time) - np.searchsorted(sorted_t, jumps, side="left")
    d = np.bincount(np.searchsorted(jumps, time[observed]), minlength=len(jumps))
    # Between censorings the product telescopes to remaining / at-risk-at-block
    # start; evaluating it that way keeps uncensored stretches exact.
    remaining = at_risk - d
    starts = np.ones(len(jumps), dtype=bool)
    starts[1:] = at_risk[1:] != remaining[:-1]
    block = np.cumsum(starts) - 1
    n0 = at_risk[starts]
    last = np.r_[np.flatnonzero(starts)[1:] - 1, len(jumps) - 1]
    factor = remaining[last] / n0
    base = np.r_[1.0, np.cumprod(factor)[:-1]]
    values = base[block] * (remaining / n0[block])
    return StepFunction(jumps, values, 1.0)


def kaplan_meier(dataset) -> StepFunction:
    """Kaplan-Meier estimate of the event-free survival S(t).

    Subjects censored at an event time count as still at risk there.
    """
    return _product_limit(dataset.time, dataset.event)


def censoring_km(dataset) -> StepFunction:
    """Kaplan-Meier estimate of G(t) = P(C > t), censoring taken as the event."""
    return _product_limit(dataset.time, ~np.asarray(dataset.event, dtype=bool))


def censoring_curves(dataset, per_group=False):
    """Censoring survival for the whole dataset, or one curve per group."""
    if not per_group:
        return censoring_km(dataset)
    return {g: censoring_km(dataset.subset(np.flatnonzero(dataset.group == g)))
            for g in dataset.group_levels}


def ipcw_pair_weight(G: StepFunction, case_time, floor=DEFAULT_FLOOR):
    """Weight 1 / max(G(t-), floor)^2 for comparable pairs anchored at an
    event at ``case_time``.  Vectorizes over ``case_time``."""
    g = np.maximum(G.left_limit(case_time), floor)
    w = 1.0 / (g * g)
    return w if np.ndim(w) else float(w)
