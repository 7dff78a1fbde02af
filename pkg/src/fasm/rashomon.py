"""Rashomon sets of near-optimal Cox models.

For every subset of the sensitive variables a case-specific optimum is fitted
on training data; coefficient vectors are then drawn around it from
N(beta*, k * Sigma*) with k ~ U(u1, u2) and kept when their validation
performance stays within the case margin.  The integral set is the union of
the cases whose own optimum passes the gate against the full model.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .censorkm import StepFunction
from .coxfit import CoxModel, FitConfig, FitSummary, RiskSetIndex, fit
from .errors import ConfigError, FasmError, SamplingExhaustedError, SchemaError

MAX_SENSITIVE = 10
_BATCH = 256


# --------------------------------------------------------------------------
# Performance measure

class LikelihoodRatioR2:
    """Likelihood-ratio pseudo-R^2, 1 - exp(-2 (l(beta) - l(0)) / n).

    ``l`` is the Cox log partial likelihood on the scored dataset and ``n``
    its number of subjects.  The null model scores exactly 0.
    """

    name = "lr_pseudo_r2"
    params: dict = {}

    def prepare(self, dataset, roster, ties="efron"):
        """Return a fast ``beta -> score`` callable bound to ``dataset``."""
        index = RiskSetIndex.from_dataset(dataset, roster, ties)
        null = index.evaluate(np.zeros(len(roster)), order=0)
        n = len(dataset)

        def score(beta):
            gap = index.evaluate(beta, order=0) - null
            return 0.0 - math.expm1(-2.0 * gap / n)

        return score

    def __call__(self, dataset, model):
        return self.prepare(dataset, model.variable_names, model.ties)(model.beta)

    def describe(self):
        return {"name": self.name, "params": dict(self.params)}


MEASURES = {LikelihoodRatioR2.name: LikelihoodRatioR2}


def get_measure(name):
    try:
        return MEASURES[name]()
    except KeyError:
        raise ConfigError(f"unknown performance measure {name!r}; "
                          f"available: {sorted(MEASURES)}") from None


def performance_r2pl(dataset, model, roster=None, ties=None):
    """Default near-optimality score of ``model`` (a CoxModel, or a
    coefficient vector together with ``roster``) on ``dataset``."""
    if not isinstance(model, CoxModel):
        model = CoxModel(model, roster, ties=ties or "efron")
    return LikelihoodRatioR2()(dataset, model)


def near_optimal_threshold(reference, margin):
    """Lowest admissible score given the reference optimum.

    Equals (1 - margin) * reference for nonnegative references; for a
    negative reference the margin is still taken below it.
    """
    return reference - margin * abs(reference)


# --------------------------------------------------------------------------
# Configuration and records

@dataclass(frozen=True)
class VariablePartition:
    nonsensitive: tuple
    sensitive: tuple

    def __post_init__(self):
        object.__setattr__(self, "nonsensitive", tuple(self.nonsensitive))
        object.__setattr__(self, "sensitive", tuple(self.sensitive))
        overlap = set(self.nonsensitive) & set(self.sensitive)
        if overlap:
            raise ConfigError(f"variables {sorted(overlap)} are both sensitive and not")

    @classmethod
    def from_roster(cls, roster, sensitive):
        """Split ``roster`` given sensitive names.  A name that is not itself
        a variable selects every indicator ``name=<level>`` derived from it."""
        chosen = []
        for s in sensitive:
            hits = [v for v in roster if v == s or v.startswith(f"{s}=")]
            if not hits:
                raise SchemaError(f"sensitive variable {s!r} is not in the model roster")
            chosen += [h for h in hits if h not in chosen]
        return cls([v for v in roster if v not in chosen], [v for v in roster if v in chosen])

    def roster(self, included, order=None):
        names = list(self.nonsensitive) + [s for s in self.sensitive if s in included]
        if order is not None:
            names = [v for v in order if v in names]
        return tuple(names)


@dataclass(frozen=True)
class RashomonConfig:
    epsilon: float = 0.05
    epsilon0: float = 0.02
    u1: float = 0.1
    u2: float = 2.0
    n_target: int = 500
    max_draws: int = None
    seed: int = 0
    gate: str = "epsilon"

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not 0 < self.epsilon0 < self.epsilon:
            raise ConfigError("epsilon0 must lie in (0, epsilon)")
        if not 0 < self.u1 < self.u2:
            raise ConfigError("sampling scales need 0 < u1 < u2")
        if int(self.n_target) != self.n_target or self.n_target <= 0:
            raise ConfigError("n_target must be a positive integer")
        if self.max_draws is None:
            object.__setattr__(self, "max_draws", 50 * int(self.n_target))
        if self.max_draws < self.n_target:
            raise ConfigError("max_draws must be at least n_target")
        if self.gate not in ("epsilon", "epsilon0"):
            raise ConfigError("gate must be 'epsilon' or 'epsilon0'")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def gate_margin(self):
        return self.epsilon if self.gate == "epsilon" else self.epsilon0


@dataclass(frozen=True, eq=False)
class SampledModel:
    beta: np.ndarray
    variable_names: tuple
    case: tuple
    performance: float
    draw_index: int
    baseline: StepFunction = None
    ties: str = "efron"

    def to_model(self):
        return CoxModel(self.beta, self.variable_names,
                        self.baseline or StepFunction.constant(0.0), self.ties)

    def risk_scores(self, dataset):
        return dataset.columns(self.variable_names) @ self.beta

    def record(self):
        return {"case": list(self.case),
                "beta": dict(zip(self.variable_names, self.beta.tolist())),
                "performance": self.performance, "draw": self.draw_index}


@dataclass(eq=False)
class CaseFit:
    mask: int
    case: tuple
    model: CoxModel
    summary: FitSummary


@dataclass(eq=False)
class RashomonCase:
    fit: CaseFit
    performance: float
    gated_in: bool
    threshold: float = None
    members: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def case(self):
        return self.fit.case


@dataclass(eq=False)
class RashomonSet:
    cases: list
    full: CaseFit
    full_performance: float
    config: RashomonConfig
    measure: dict
    failures: dict = field(default_factory=dict)

    def members(self):
        return [m for c in self.cases if c.gated_in for m in c.members]

    def case_fit(self, case):
        for c in self.cases:
            if tuple(c.case) == tuple(case):
                return c.fit
        return None

    def header(self):
        return {
            "type": "header",
            "config": asdict(self.config),
            "measure": self.measure,
            "reference": {
                "full_model_performance": self.full_performance,
                "cases": [{
                    "case": list(c.case), "mask": c.fit.mask,
                    "performance": c.performance, "gated_in": c.gated_in,
                    "threshold": c.threshold, "stats": c.stats,
                    "optimum": c.fit.model.to_dict(),
                    "fit": c.fit.summary.to_dict(),
                } for c in self.cases],
                "failures": self.failures,
            },
        }

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for m in self.members():
                fh.write(json.dumps(m.record(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise SchemaError(f"{path}: first record must be the header")
        head = lines[0]
        cfg = RashomonConfig(**head["config"])
        cases, by_tag = [], {}
        for c in head["reference"]["cases"]:
            model = CoxModel.from_dict(c["optimum"])
            f = c["fit"]
            summary = FitSummary(f["log_partial_likelihood_at_optimum"],
                                 f["log_partial_likelihood_null"],
                                 np.array(f["covariance"]).reshape(len(model.beta), -1),
                                 np.array(f["standard_errors"]), f["iterations"],
                                 f["converged"])
            rc = RashomonCase(CaseFit(c["mask"], tuple(c["case"]), model, summary),
                              c["performance"], c["gated_in"], c["threshold"], [],
                              c["stats"])
            cases.append(rc)
            by_tag[tuple(c["case"])] = rc
        for rec in lines[1:]:
            rc = by_tag[tuple(rec["case"])]
            opt = rc.fit.model
            beta = np.array([rec["beta"][v] for v in opt.variable_names])
            rc.members.append(SampledModel(beta, opt.variable_names, rc.case,
                                           rec["performance"], rec["draw"],
                                           opt.baseline_cumhaz, opt.ties))
        full = max(cases, key=lambda c: c.fit.mask).fit
        return cls(cases, full, head["reference"]["full_model_performance"], cfg,
                   head["measure"], head["reference"].get("failures", {}))


# --------------------------------------------------------------------------
# Operations

def case_optima(train, partition, ties="efron", fit_config=FitConfig()):
    """Fit one optimum per subset of the sensitive variables.

    Subsets are enumerated in bitmask order (bit k includes
    ``partition.sensitive[k]``), so mask 0 is the sensitive-free model and the
    last mask the full model.

    Returns
    -------
    fits : list of CaseFit
    failures : dict case-label -> error message
    """
    sens = partition.sensitive
    if len(sens) > MAX_SENSITIVE:
        raise ConfigError(f"{len(sens)} sensitive variables; at most {MAX_SENSITIVE} supported")
    order = tuple(v for v in train.variable_names
                  if v in partition.nonsensitive or v in sens)
    fits, failures = [], {}
    for mask in range(2 ** len(sens)):
        included = tuple(s for k, s in enumerate(sens) if mask >> k & 1)
        roster = partition.roster(included, order)
        try:
            model, summary = fit(train, roster, fit_config, ties)
        except FasmError as exc:
            failures["+".join(included) or "(none)"] = f"{type(exc).__name__}: {exc}"
            continue
        fits.append(CaseFit(mask, included, model, summary))
    return fits, failures


def _sqrt_psd(cov):
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def draw_rng(seed, case_mask, draw):
    """Independent RNG stream for one draw of one case."""
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(int(case_mask), int(draw))))


def sample_case(case_fit, validation, config=RashomonConfig(), measure=None, workers=1):
    """Rejection-sample near-optimal coefficient vectors around a case optimum.

    Draw ``d`` uses its own RNG stream, draws are scored in fixed-size
    batches and accepted models are kept in draw order, so the output is the
    same for any ``workers``.

    Returns
    -------
    members : list of SampledModel
        The case optimum itself (draw index -1) followed by up to
        ``n_target`` accepted draws.
    stats : dict
    """
    measure = measure or LikelihoodRatioR2()
    opt = case_fit.model
    score = measure.prepare(validation, opt.variable_names, opt.ties)
    ref = score(opt.beta)
    threshold = near_optimal_threshold(ref, config.epsilon0)
    root = _sqrt_psd(case_fit.summary.covariance)
    p = len(opt.beta)

    def one(d):
        rng = draw_rng(config.seed, case_fit.mask, d)
        k = rng.uniform(config.u1, config.u2)
        beta = opt.beta + math.sqrt(k) * (root @ rng.standard_normal(p))
        return beta, score(beta)

    def member(beta, perf, d):
        return SampledModel(beta, opt.variable_names, case_fit.case, perf, d,
                            opt.baseline_cumhaz, opt.ties)

    accepted = []
    evaluated = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while evaluated < config.max_draws and len(accepted) < config.n_target:
            batch = range(evaluated, min(evaluated + _BATCH, config.max_draws))
            results = list(pool.map(one, batch)) if pool else [one(d) for d in batch]
            for d, (beta, perf) in zip(batch, results):
                if perf >= threshold and len(accepted) < config.n_target:
                    accepted.append(member(beta, perf, d))
            evaluated = batch.stop
    finally:
        if pool:
            pool.shutdown()

    used = accepted[-1].draw_index + 1 if len(accepted) == config.n_target else evaluated
    stats = {"draws": used, "accepted": len(accepted),
             "acceptance_rate": len(accepted) / used if used else 0.0,
             "reference_performance": ref, "threshold": threshold}
    if not accepted:
        raise SamplingExhaustedError(
            f"no draw accepted for case {list(case_fit.case)} after {used} draws", stats)
    members = [member(opt.beta.copy(), ref, -1)] if ref >= threshold else []
    return members + accepted, stats


def build_integral_set(train, validation, partition, config=RashomonConfig(),
                       measure=None, ties="efron", fit_config=FitConfig(), workers=1):
    """Fit every case optimum, gate cases against the full model on the
    validation set and sample each admitted case."""
    measure = measure or LikelihoodRatioR2()
    fits, failures = case_optima(train, partition, ties, fit_config)
    full_mask = 2 ** len(partition.sensitive) - 1
    full = next((f for f in fits if f.mask == full_mask), None)
    if full is None:
        raise FasmError(f"full-model fit failed: {failures}")
    full_perf = measure(validation, full.model)
    gate = near_optimal_threshold(full_perf, config.gate_margin)
    cases = []
    for f in fits:
        perf = full_perf if f is full else measure(validation, f.model)
        rc = RashomonCase(f, perf, perf >= gate, gate)
        if rc.gated_in:
            try:
                rc.members, rc.stats = sample_case(f, validation, config, measure, workers)
            except SamplingExhaustedError as exc:
                rc.gated_in = False
                rc.stats = exc.stats
                failures["+".join(f.case) or "(none)"] = str(exc)
        cases.append(rc)
    return RashomonSet(cases, full, full_perf, config, measure.describe(), failures)
