"""Fairness-aware survival modeling.

Cox proportional-hazards fitting, censoring-adjusted intra- and cross-group
ranking metrics, Rashomon sets of near-optimal models, and selection of the
fairest near-optimal model by the Model Selection Index.
"""

__version__ = "0.1.0"

from .censorkm import StepFunction, censoring_km, ipcw_pair_weight, kaplan_meier
from .cohort import (SimSpec, SplitSpec, Subject, SurvivalDataset, load_csv,
                     simulate_cohort, stratified_split, summarize)
from .coxfit import (CoxModel, FitConfig, FitSummary, breslow_baseline, fit,
                     log_partial_likelihood, predict_risk, predict_survival)
from .rankmetrics import (MetricReport, RankingEvaluator, TimeGrid, auc_t, bootstrap_ci,
                          c_index, disparities, evaluate, i_auc, x_ci)
from .rashomon import (RashomonConfig, RashomonSet, SampledModel, VariablePartition,
                       build_integral_set, case_optima, performance_r2pl, sample_case)
from .selection import METRIC_ORDER, FairnessProfile, MSIResult, fairness_profile, msi, select_fasm

__all__ = [
    "StepFunction", "censoring_km", "ipcw_pair_weight", "kaplan_meier",
    "SimSpec", "SplitSpec", "Subject", "SurvivalDataset", "load_csv", "simulate_cohort",
    "stratified_split", "summarize",
    "CoxModel", "FitConfig", "FitSummary", "breslow_baseline", "fit",
    "log_partial_likelihood", "predict_risk", "predict_survival",
    "MetricReport", "RankingEvaluator", "TimeGrid", "auc_t", "bootstrap_ci", "c_index",
    "disparities", "evaluate", "i_auc", "x_ci",
    "RashomonConfig", "RashomonSet", "SampledModel", "VariablePartition",
    "build_integral_set", "case_optima", "performance_r2pl", "sample_case",
    "METRIC_ORDER", "FairnessProfile", "MSIResult", "fairness_profile", "msi", "select_fasm",
]
