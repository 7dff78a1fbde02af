import math

import numpy as np
import pytest

from fasm.cohort import SimSpec, Subject, simulate_cohort
from fasm.coxfit import (CoxModel, FitConfig, breslow_baseline, fit, log_partial_likelihood,
                         predict_risk, predict_survival)
from fasm.errors import (ConfigError, DegenerateDesignError, ObjectiveError, SchemaError,
                         SeparationError)

from conftest import dataset
from oracles import cox_loglik_oracle, grid_argmax


def _random_instance(rng, n=None, p=None, ties=True):
    n = n or int(rng.integers(6, 31))
    p = p or int(rng.integers(1, 6))
    if ties:
        time = rng.integers(1, max(3, n // 2), size=n).astype(float)
    else:
        time = rng.permutation(n) + 1.0
    event = rng.random(n) < 0.7
    event[0] = True
    X = rng.standard_normal((n, p))
    return dataset(time, event, X), rng.standard_normal(p) * 0.5


class TestLogPartialLikelihood:
    def test_two_subject_hand_value(self):
        ds = dataset([1, 2], [1, 1], [1.0, 0.0])
        value, grad, _ = log_partial_likelihood(ds, ["x1"], [0.0])
        assert value == pytest.approx(math.log(0.5))
        assert grad[0] == pytest.approx(0.5)

    def test_null_value_depends_only_on_risk_sets(self):
        a = dataset([1, 2, 3, 4], [1, 0, 1, 1], [[1, 2], [3, 4], [5, 6], [7, 8]])
        b = dataset([1, 2, 3, 4], [1, 0, 1, 1], [[-9, 0], [0, 1], [2, 2], [1, 1]])
        va = log_partial_likelihood(a, ["x1", "x2"], [0, 0])[0]
        vb = log_partial_likelihood(b, ["x1", "x2"], [0, 0])[0]
        assert va == vb == pytest.approx(-(math.log(4) + math.log(2) + math.log(1)))

    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_enumeration(self, seed, ties):
        ds, beta = _random_instance(np.random.default_rng(seed))
        roster = ds.variable_names
        value = log_partial_likelihood(ds, roster, beta, ties)[0]
        assert value == pytest.approx(
            cox_loglik_oracle(ds.X, ds.time, ds.event, beta, ties), rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        ds, beta = _random_instance(np.random.default_rng(100 + seed), n=8)
        roster = ds.variable_names
        _, grad, hess = log_partial_likelihood(ds, roster, beta)
        h = 1e-6
        for k in range(len(beta)):
            e = np.zeros(len(beta))
            e[k] = h
            fp = log_partial_likelihood(ds, roster, beta + e)
            fm = log_partial_likelihood(ds, roster, beta - e)
            assert grad[k] == pytest.approx((fp[0] - fm[0]) / (2 * h), rel=1e-5, abs=1e-7)
            np.testing.assert_allclose(hess[:, k], (fp[1] - fm[1]) / (2 * h),
                                       rtol=1e-5, atol=1e-7)

    def test_no_events(self):
        with pytest.raises(ObjectiveError):
            log_partial_likelihood(dataset([1, 2], [0, 0], [1.0, 2.0]), ["x1"], [0.1])


class TestFit:
    def test_matches_grid_search(self, six_subject):
        model, summary = fit(six_subject)
        f = lambda b: cox_loglik_oracle(six_subject.X, six_subject.time,  # noqa: E731
                                        six_subject.event, [b])
        best, _ = grid_argmax(f)
        assert abs(model.beta[0] - best) < 2e-3
        assert summary.converged

    def test_two_subject_separation(self):
        with pytest.raises(SeparationError):
            fit(dataset([1, 2], [1, 1], [1.0, 0.0]))

    def test_constant_column(self):
        ds = dataset([1, 2, 3, 4], [1, 1, 0, 1], [[0.3, 1], [0.1, 1], [0.9, 1], [0.4, 1]])
        with pytest.raises(DegenerateDesignError, match="x2"):
            fit(ds)

    def test_missing_roster_column(self, six_subject):
        with pytest.raises(SchemaError):
            fit(six_subject, ["x9"])

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            FitConfig(max_iterations=0)

    def test_permutation_invariance(self):
        ds = simulate_cohort(SimSpec(n=300, seed=5))
        b1 = fit(ds)[0].beta
        perm = np.random.default_rng(1).permutation(len(ds))
        b2 = fit(ds.subset(perm))[0].beta
        np.testing.assert_allclose(b1, b2, atol=1e-8)

    def test_scaling(self):
        ds = simulate_cohort(SimSpec(n=300, seed=6))
        m1 = fit(ds)[0]
        X = ds.X.copy()
        X[:, 0] *= 3.0
        scaled = dataset(ds.time, ds.event, X, ds.group, ds.variable_names)
        m2 = fit(scaled)[0]
        assert m2.beta[0] == pytest.approx(m1.beta[0] / 3.0, abs=1e-6)
        np.testing.assert_array_equal(np.argsort(m1.risk_scores(ds), kind="stable"),
                                      np.argsort(m2.risk_scores(scaled), kind="stable"))

    def test_efron_equals_breslow_without_ties(self):
        ds, _ = _random_instance(np.random.default_rng(3), n=40, p=3, ties=False)
        a, sa = fit(ds, ties="efron")
        b, sb = fit(ds, ties="breslow")
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-10)
        assert sa.log_partial_likelihood_at_optimum == pytest.approx(
            sb.log_partial_likelihood_at_optimum, abs=1e-10)

    def test_recovers_truth(self):
        ds = simulate_cohort(SimSpec(n=5000, group_proportions={"A": 0.5, "B": 0.5},
                                     true_beta={"x1": 0.8, "x2": -0.5, "group=B": 0.3},
                                     seed=21))
        model, summary = fit(ds)
        truth = np.array([0.8, -0.5, 0.3])
        assert np.all(np.abs(model.beta - truth) < 3 * summary.standard_errors)


class TestBaseline:
    def test_nelson_aalen_at_zero(self):
        ds = dataset([1, 2, 3], [1, 1, 1])
        H = breslow_baseline(ds, ["x1"], [0.0])
        np.testing.assert_allclose(np.diff(np.r_[0, H.values]), [1 / 3, 1 / 2, 1.0])
        assert H(2) == pytest.approx(0.8333, abs=1e-4)
        assert H(0.5) == 0.0

    def test_no_events(self):
        H = breslow_baseline(dataset([1, 2], [0, 0]), ["x1"], [0.0])
        assert H(5.0) == 0.0

    def test_tied_fixture(self):
        # times 1, 2, 2, 3, 4 with the tie at 2 both events; beta = 0.5 on x
        x = np.array([0.0, 1.0, -1.0, 2.0, 0.5])
        ds = dataset([1, 2, 2, 3, 4], [1, 1, 1, 0, 1], x)
        H = breslow_baseline(ds, ["x1"], [0.5])
        w = np.exp(0.5 * x)
        want = [1 / w.sum(), 2 / w[1:].sum(), 1 / w[4]]
        np.testing.assert_allclose(np.diff(np.r_[0, H.values]), want, rtol=1e-14)
        np.testing.assert_array_equal(H.times, [1.0, 2.0, 4.0])


class TestPrediction:
    def _model(self):
        ds = dataset([1, 2, 3], [1, 1, 1], [[1, 0], [0, 1], [1, 1]])
        return CoxModel([0.5, -1.0], ("x1", "x2"), breslow_baseline(ds, ["x1", "x2"], [0, 0]))

    def test_risk(self):
        assert predict_risk(self._model(), Subject({"x1": 2.0, "x2": 1.0}, 1.0, True, "A")) == 0.0

    def test_missing_covariate(self):
        with pytest.raises(SchemaError):
            predict_risk(self._model(), Subject({"x1": 2.0}, 1.0, True, "A"))

    def test_survival(self):
        m = self._model().with_beta([0.0, 0.0])
        s = Subject({"x1": 3.0, "x2": -2.0}, 1.0, True, "A")
        assert predict_survival(m, s, 0.5) == 1.0
        assert predict_survival(m, s, 2.0) == pytest.approx(math.exp(-(1 / 3 + 1 / 2)))
        assert predict_survival(m, s, 2.0) == pytest.approx(0.4346, abs=1e-4)

    def test_survival_monotone_and_bounded(self):
        ds = simulate_cohort(SimSpec(n=200, seed=2))
        model, _ = fit(ds)
        S = model.survival(ds, np.linspace(0.1, 150, 40))
        assert np.all((S >= 0) & (S <= 1))
        assert np.all(np.diff(S, axis=1) <= 0)

    def test_json_roundtrip(self):
        ds = simulate_cohort(SimSpec(n=200, seed=2))
        model, _ = fit(ds)
        back = CoxModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.beta, model.beta)
        np.testing.assert_array_equal(back.risk_scores(ds), model.risk_scores(ds))
