"""Cox proportional-hazards models: partial likelihood, Newton-Raphson fitting,
Breslow baseline hazard and prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .censorkm import StepFunction
from .errors import (ConditioningError, ConfigError, DegenerateDesignError, ObjectiveError,
                     SchemaError, SeparationError)

TIES = ("efron", "breslow")


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 50
    tolerance: float = 1e-9
    step_halving_max: int = 10
    divergence_bound: float = 20.0

    def __post_init__(self):
        if (self.max_iterations <= 0 or self.tolerance <= 0
                or self.step_halving_max <= 0 or self.divergence_bound <= 0):
            raise ConfigError("fit options must all be positive")


class RiskSetIndex:
    """Sorted risk-set bookkeeping for one dataset and covariate roster.

    Build once, then call :meth:`evaluate` for as many coefficient vectors as
    needed; rejection sampling relies on this to score thousands of draws on
    the same validation set.
    """

    def __init__(self, X, time, event, ties="efron"):
        if ties not in TIES:
            raise ValueError(f"ties must be one of {TIES}, got {ties!r}")
        X = np.asarray(X, dtype=float)
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=bool)
        if not event.any():
            raise ObjectiveError("partial likelihood needs at least one event")
        order = np.argsort(time, kind="stable")
        self.X = X[order]
        self.time = time[order]
        self.event = event[order]
        self.ties = ties
        self.event_times, inverse, counts = np.unique(
            self.time[self.event], return_inverse=True, return_counts=True)
        self.counts = counts
        # first sorted position with time >= each distinct event time
        self.risk_start = np.searchsorted(self.time, self.event_times, side="left")
        self.event_rows = np.flatnonzero(self.event)
        self.event_group = inverse.ravel()
        if ties == "efron":
            rank = np.arange(len(self.event_rows)) - np.repeat(
                np.r_[0, np.cumsum(counts)[:-1]], counts)
            self.frac = rank / np.repeat(counts, counts)
        else:
            self.frac = np.zeros(len(self.event_rows))
        self.x_event_sum = self.X[self.event].sum(axis=0)

    @classmethod
    def from_dataset(cls, dataset, roster, ties="efron"):
        return cls(dataset.columns(roster), dataset.time, dataset.event, ties)

    def _revcumsum(self, a):
        return np.cumsum(a[::-1], axis=0)[::-1]

    def evaluate(self, beta, order=2):
        """Log partial likelihood and, for ``order`` >= 1 / 2, its gradient and
        Hessian.  Returns ``value`` or a tuple ``(value, grad[, hess])``."""
        beta = np.asarray(beta, dtype=float)
        eta = self.X @ beta
        shift = eta.max()
        w = np.exp(eta - shift)
        k = self.event_group
        frac = self.frac
        ev = self.event_rows

        R0 = self._revcumsum(w)[self.risk_start]
        D0 = np.bincount(k, weights=w[ev], minlength=len(self.event_times))
        den = R0[k] - frac * D0[k]
        value = float(eta[ev].sum() - np.sum(np.log(den) + shift))
        if order == 0:
            return value

        wx = w[:, None] * self.X
        R1 = self._revcumsum(wx)[self.risk_start]
        D1 = np.zeros_like(R1)
        np.add.at(D1, k, wx[ev])
        num1 = R1[k] - frac[:, None] * D1[k]
        mean1 = num1 / den[:, None]
        grad = self.x_event_sum - mean1.sum(axis=0)
        if order == 1:
            return value, grad

        wxx = wx[:, :, None] * self.X[:, None, :]
        R2 = self._revcumsum(wxx)[self.risk_start]
        D2 = np.zeros_like(R2)
        np.add.at(D2, k, wxx[ev])
        num2 = R2[k] - frac[:, None, None] * D2[k]
        hess = -(num2 / den[:, None, None]).sum(axis=0) + mean1.T @ mean1
        hess = 0.5 * (hess + hess.T)
        return value, grad, hess


def log_partial_likelihood(dataset, roster, beta, ties="efron"):
    """Cox log partial likelihood with its exact gradient and Hessian.

    Returns
    -------
    value : float
    gradient : ndarray, shape (p,)
    hessian : ndarray, shape (p, p)
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if len(beta) != len(roster):
        raise ValueError(f"beta has {len(beta)} entries for {len(roster)} variables")
    return RiskSetIndex.from_dataset(dataset, roster, ties).evaluate(beta, order=2)


@dataclass(frozen=True, eq=False)
class CoxModel:
    beta: np.ndarray
    variable_names: tuple
    baseline_cumhaz: StepFunction = field(default_factory=lambda: StepFunction.constant(0.0))
    ties: str = "efron"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        if len(beta) != len(self.variable_names):
            raise ValueError("beta and variable_names differ in length")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))

    def risk_scores(self, dataset):
        """Linear predictors for every subject of ``dataset``."""
        return dataset.columns(self.variable_names) @ self.beta

    def survival(self, dataset, t):
        """S(t | x) for every subject; ``t`` may be a scalar or 1-d array
        (result shape (n,) or (n, len(t)))."""
        H = self.baseline_cumhaz(np.asarray(t, dtype=float))
        hr = np.exp(self.risk_scores(dataset))
        return np.exp(-np.multiply.outer(hr, H))

    def with_beta(self, beta):
        return CoxModel(beta, self.variable_names, self.baseline_cumhaz, self.ties)

    def to_dict(self):
        return {
            "variable_names": list(self.variable_names),
            "beta": self.beta.tolist(),
            "ties": self.ties,
            "baseline": {"times": self.baseline_cumhaz.times.tolist(),
                         "cumhaz": self.baseline_cumhaz.values.tolist()},
        }

    @classmethod
    def from_dict(cls, d):
        try:
            base = StepFunction(d["baseline"]["times"], d["baseline"]["cumhaz"], 0.0)
            return cls(d["beta"], d["variable_names"], base, d.get("ties", "efron"))
        except KeyError as exc:
            raise SchemaError(f"model JSON lacks field {exc}") from None


@dataclass(frozen=True, eq=False)
class FitSummary:
    log_partial_likelihood_at_optimum: float
    log_partial_likelihood_null: float
    covariance: np.ndarray
    standard_errors: np.ndarray
    iterations: int
    converged: bool

    def to_dict(self):
        return {
            "log_partial_likelihood_at_optimum": self.log_partial_likelihood_at_optimum,
            "log_partial_likelihood_null": self.log_partial_likelihood_null,
            "covariance": self.covariance.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }


def breslow_baseline(dataset, roster, beta) -> StepFunction:
    """Breslow cumulative baseline hazard: at each distinct event time t the
    increment is d_t / sum_{time >= t} exp(beta'x)."""
    if not dataset.event.any():
        return StepFunction.constant(0.0)
    X = dataset.columns(roster)
    w = np.exp(X @ np.asarray(beta, dtype=float))
    order = np.argsort(dataset.time, kind="stable")
    ts, ws = dataset.time[order], w[order]
    times, d = np.unique(dataset.time[dataset.event], return_counts=True)
    risk = np.cumsum(ws[::-1])[::-1][np.searchsorted(ts, times, side="left")]
    return StepFunction(times, np.cumsum(d / risk), 0.0)


def fit(dataset, roster=None, config=FitConfig(), ties="efron"):
    """Maximum partial-likelihood fit by Newton-Raphson from beta = 0.

    Steps that lower the objective are halved up to
    ``config.step_halving_max`` times.

    Raises
    ------
    DegenerateDesignError
        A roster column is constant.
    SeparationError
        A coefficient exceeds ``config.divergence_bound`` (monotone likelihood).
    ConditioningError
        The observed information is singular.
    """
    roster = tuple(dataset.variable_names if roster is None else roster)
    X = dataset.columns(roster)
    for k, nm in enumerate(roster):
        if len(X) and np.ptp(X[:, k]) == 0:
            raise DegenerateDesignError(nm)
    index = RiskSetIndex(X, dataset.time, dataset.event, ties)
    p = len(roster)

    beta = np.zeros(p)
    ll, grad, hess = index.evaluate(beta)
    ll_null = ll
    converged = p == 0
    iterations = 0
    while not converged and iterations < config.max_iterations:
        iterations += 1
        info = -hess
        try:
            if np.linalg.cond(info) > 1e13:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise ConditioningError(
                f"observed information is singular at iteration {iterations}") from None
        new = beta + step
        ll_new = index.evaluate(new, order=0)
        halvings = 0
        while not ll_new >= ll and halvings < config.step_halving_max:
            step = step / 2
            new = beta + step
            ll_new = index.evaluate(new, order=0)
            halvings += 1
        if np.any(np.abs(new) > config.divergence_bound):
            worst = roster[int(np.argmax(np.abs(new)))]
            raise SeparationError(
                f"coefficient of {worst!r} exceeds {config.divergence_bound}; "
                "the partial likelihood appears monotone (separation)")
        change = abs(ll_new - ll) / abs(ll) if ll != 0 else abs(ll_new - ll)
        beta = new
        ll, grad, hess = index.evaluate(beta)
        converged = change < config.tolerance

    if p:
        try:
            cov = np.linalg.inv(-hess)
        except np.linalg.LinAlgError:
            raise ConditioningError("observed information is singular at the optimum") from None
        cov = 0.5 * (cov + cov.T)
    else:
        cov = np.zeros((0, 0))
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    model = CoxModel(beta, roster, breslow_baseline(dataset, roster, beta), ties)
    summary = FitSummary(ll, ll_null, cov, se, iterations, bool(converged))
    return model, summary


def predict_risk(model: CoxModel, subject) -> float:
    """Linear predictor beta'x of a single subject (higher = riskier)."""
    cov = subject.covariates
    missing = [nm for nm in model.variable_names if nm not in cov]
    if missing:
        raise SchemaError(f"subject lacks roster variables {missing}")
    return float(sum(b * cov[nm] for b, nm in zip(model.beta, model.variable_names)))


def predict_survival(model: CoxModel, subject, time) -> float:
    """S(t | x) = exp(-H0(t) exp(beta'x))."""
    if time <= 0:
        raise ValueError("time must be positive")
    return float(np.exp(-model.baseline_cumhaz(time) * np.exp(predict_risk(model, subject))))
