import math

import numpy as np
import pytest

from fasm.censorkm import StepFunction, censoring_km, kaplan_meier
from fasm.cohort import SimSpec, simulate_cohort
from fasm.coxfit import CoxModel, fit
from fasm.errors import ConfigError, MetricUndefinedError
from fasm.rankmetrics import (RankingEvaluator, TimeGrid, auc_t, bootstrap_ci, c_index,
                              disparities, evaluate, i_auc, integrate_series, x_ci)

from conftest import dataset
from oracles import auc_oracle, concordance_oracle, make_dataset, report_oracle


def _same(a, b):
    return (math.isnan(a) and math.isnan(b)) or a == b


class TestCIndex:
    def test_perfect_anti_and_tied(self):
        ds = dataset([1, 2, 3], [1, 1, 1])
        assert c_index(ds, [3, 2, 1]) == 1.0
        assert c_index(ds, [1, 2, 3]) == 0.0
        assert c_index(ds, [5, 5, 5]) == 0.5

    def test_no_comparable_pairs(self):
        with pytest.raises(MetricUndefinedError):
            c_index(dataset([1, 2], [0, 0]), [1.0, 2.0])

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        ds = make_dataset(rng, 40, tie_times=True)
        scores = np.round(rng.standard_normal(40), 1)
        G = censoring_km(ds)
        assert c_index(ds, scores, G) == concordance_oracle(ds, scores, G)


class TestCrossConcordance:
    def _fixture(self):
        return dataset([1, 3, 2, 4], [1, 1, 1, 0], group=["a", "a", "b", "b"]), \
            np.array([0.9, 0.4, 0.5, 0.1])

    def test_hand_enumeration(self):
        ds, r = self._fixture()
        assert x_ci(ds, r, a="a", b="b") == 1.0
        assert x_ci(ds, r, a="b", b="a") == 1.0
        rep = evaluate(ds, r)
        assert rep.disparities["delta_xci"] == 0.0

    def test_same_group_is_restricted_c_index(self):
        rng = np.random.default_rng(4)
        ds = make_dataset(rng, 50)
        scores = rng.standard_normal(50)
        assert x_ci(ds, scores, a="A", b="A") == c_index(ds, scores, restrict_group="A")

    def test_null_scores_near_half(self):
        rng = np.random.default_rng(12)
        ds = make_dataset(rng, 1500)
        scores = rng.standard_normal(1500)
        assert x_ci(ds, scores, a="A", b="B") == pytest.approx(0.5, abs=0.05)
        assert x_ci(ds, scores, a="B", b="A") == pytest.approx(0.5, abs=0.05)


class TestAUC:
    def test_single_case(self):
        ds = dataset([1, 2, 3], [1, 1, 1])
        assert auc_t(ds, [3, 1, 2], t=1.5) == 1.0

    def test_two_cases(self):
        ds = dataset([1, 2, 3], [1, 1, 1])
        assert auc_t(ds, [3, 1, 2], t=2.5) == 0.5

    def test_no_controls(self):
        with pytest.raises(MetricUndefinedError):
            auc_t(dataset([1, 2, 3], [1, 1, 1]), [3, 1, 2], t=3.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(50 + seed)
        ds = make_dataset(rng, 45, tie_times=True)
        scores = np.round(rng.standard_normal(45), 1)
        G = censoring_km(ds)
        t = float(np.median(ds.time))
        assert auc_t(ds, scores, G, t) == auc_oracle(ds, scores, G, t)
        assert auc_t(ds, scores, G, t, ("A", "B")) == auc_oracle(ds, scores, G, t, {"A"}, {"B"})


class TestIntegratedAUC:
    def test_hand_fixture(self):
        # events at 1 and 3; S jumps to 0.8 then 0.8 * 2/3; AUC(1) = 1/4, AUC(3) = 1/2
        ds = dataset([1, 2, 3, 4, 5], [1, 0, 1, 0, 0])
        scores = np.array([2.0, 5.0, 3.0, 1.0, 4.0])
        grid = TimeGrid.regular(1, 5, 1)
        assert auc_t(ds, scores, t=1.0) == 0.25
        assert auc_t(ds, scores, t=3.0) == 0.5
        assert i_auc(ds, scores, grid=grid) == pytest.approx(11 / 28, abs=1e-12)

    def test_constant_series(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            masses = rng.random(12)
            masses[rng.random(12) < 0.3] = 0.0
            masses[0] = 0.1
            assert integrate_series(np.full(12, 0.73), masses)[0] == 0.73

    def test_single_event_window(self):
        ds = dataset([2, 4, 6, 8], [0, 1, 0, 0])
        scores = np.array([0.1, 0.9, 0.5, 0.3])
        grid = TimeGrid.regular(1, 8, 1)
        assert i_auc(ds, scores, grid=grid) == auc_t(ds, scores, t=4.0)

    def test_undefined_mass_moves_later(self):
        value, merged = integrate_series([np.nan, 0.2, 0.6], [0.5, 0.25, 0.25])
        assert merged == [0]
        assert value == pytest.approx((0.75 * 0.2 + 0.25 * 0.6) / 1.0)
        value, merged = integrate_series([0.2, 0.6, np.nan], [0.25, 0.25, 0.5])
        assert value == pytest.approx((0.25 * 0.2 + 0.75 * 0.6))

    def test_no_mass(self):
        with pytest.raises(MetricUndefinedError):
            integrate_series([0.5, 0.5], [0.0, 0.0])


class TestDisparities:
    def test_arithmetic(self):
        d = disparities({"A": 0.76, "B": 0.76}, None, {("A", "B"): 0.8, ("B", "A"): 0.9},
                        None, None)
        assert d["delta_ci"] == 0.0
        assert d["delta_xci"] == pytest.approx(0.1)

    def test_constant_delta_xauc(self):
        xauc = {("A", "B"): np.full(5, 0.52), ("B", "A"): np.full(5, 0.50)}
        d = disparities({"A": 0.7, "B": 0.7}, {"A": 0.7, "B": 0.7},
                        {("A", "B"): 0.6, ("B", "A"): 0.6}, xauc, np.full(5, 0.1))
        assert d["i_delta_xauc"] == pytest.approx(0.02, abs=1e-15)

    def test_single_group(self):
        rep = evaluate(dataset([1, 2, 3], [1, 1, 0]), [3, 2, 1], TimeGrid.regular(1, 3, 1))
        assert rep.disparities["delta_ci"] == 0.0
        assert rep.disparities["delta_xci"] is None
        assert rep.disparities["i_delta_xauc"] is None

    def test_clones_have_no_disparity(self):
        rng = np.random.default_rng(7)
        base = make_dataset(rng, 30, n_groups=1)
        scores = rng.standard_normal(30)
        X = np.vstack([base.X, base.X])
        ds = dataset(np.r_[base.time, base.time], np.r_[base.event, base.event], X,
                     ["A"] * 30 + ["B"] * 30)
        rep = evaluate(ds, np.r_[scores, scores], TimeGrid.regular(1, 60, 1))
        for k in ("delta_ci", "delta_iauc", "delta_xci", "i_delta_xauc"):
            assert rep.disparities[k] == pytest.approx(0.0, abs=1e-12)


class TestEquivalence:
    @pytest.mark.parametrize("seed", range(25))
    def test_report_matches_enumeration(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(8, 51))
        ds = make_dataset(rng, n, int(rng.integers(2, 4)), rng.uniform(0, 0.5),
                          tie_times=bool(seed % 2))
        scores = np.round(rng.standard_normal(n), 1)
        grid = TimeGrid.regular(1, float(ds.time.max()), max(1.0, float(ds.time.max()) / 15))
        ev = RankingEvaluator(ds, grid=grid)
        rep = ev.report(scores)
        o = report_oracle(ds, scores, ev.G, ev.S_hat, grid)
        assert _same(rep.c_index, o["c_index"])
        assert _same(rep.iauc, o["iauc"])
        for k in ("delta_ci", "delta_iauc", "delta_xci", "i_delta_xauc"):
            assert _same(rep.disparities[k], o[k]), k
        for p, s in rep.xauc.items():
            assert all(_same(a, b) for a, b in zip(s, o["xauc"][p]))


class TestInvariances:
    def _report(self, ds, scores):
        return evaluate(ds, scores, TimeGrid.regular(1, 80, 1))

    def _flat(self, rep):
        d = rep.to_dict()
        return [d["c_index"]["overall"], d["iauc"]["overall"], *d["xci"].values(),
                *d["disparities"].values()]

    def test_monotone_transform(self):
        rng = np.random.default_rng(8)
        ds = make_dataset(rng, 60)
        s = np.round(rng.standard_normal(60), 1)
        base = self._flat(self._report(ds, s))
        assert self._flat(self._report(ds, np.exp(s))) == base
        assert self._flat(self._report(ds, 3.0 * s + 1.0)) == base

    def test_negation_complements(self):
        rng = np.random.default_rng(9)
        ds = make_dataset(rng, 60)
        s = rng.standard_normal(60)
        assert c_index(ds, -s) == pytest.approx(1 - c_index(ds, s), abs=1e-12)
        assert x_ci(ds, -s, a="A", b="B") == pytest.approx(1 - x_ci(ds, s, a="A", b="B"),
                                                           abs=1e-12)
        t = float(np.median(ds.time))
        assert auc_t(ds, -s, t=t) == pytest.approx(1 - auc_t(ds, s, t=t), abs=1e-12)

    def test_label_swap(self):
        rng = np.random.default_rng(10)
        ds = make_dataset(rng, 60)
        s = rng.standard_normal(60)
        swapped = dataset(ds.time, ds.event, ds.X,
                          np.where(ds.group == "A", "B", "A"), ds.variable_names)
        a, b = self._report(ds, s).disparities, self._report(swapped, s).disparities
        for k in ("delta_ci", "delta_iauc", "delta_xci", "i_delta_xauc"):
            assert a[k] == b[k]
        np.testing.assert_array_equal(a["delta_xauc"], b["delta_xauc"])

    def test_row_order(self):
        rng = np.random.default_rng(11)
        ds = make_dataset(rng, 60)
        s = rng.standard_normal(60)
        perm = rng.permutation(60)
        assert self._report(ds, s).to_dict() == self._report(ds.subset(perm), s[perm]).to_dict()

    def test_no_censoring_reduces_to_unweighted(self):
        rng = np.random.default_rng(12)
        ds = make_dataset(rng, 50, censor_frac=0.0)
        s = rng.standard_normal(50)
        grid = TimeGrid.regular(1, 100, 1)
        ipcw = RankingEvaluator(ds, grid=grid).report(s).to_dict()
        plain = RankingEvaluator(ds, grid=grid, G=StepFunction.constant(1.0)).report(s).to_dict()
        assert ipcw == plain


class TestReport:
    def test_grid_rows(self):
        ds = simulate_cohort(SimSpec(n=400, seed=1))
        model, _ = fit(ds)
        rep = evaluate(ds, model.risk_scores(ds), TimeGrid.parse("1:120:1"))
        rows = [r for r in rep.rows() if r[0] == "delta_xauc"]
        assert len(rows) == 120
        assert {r[1] for r in rows} == {"A|B"}

    def test_grid_parse(self):
        g = TimeGrid.parse("1:120:1")
        assert g.t_start == 0.0 and len(g.points) == 120 and g.points[-1] == 120.0
        with pytest.raises(ConfigError):
            TimeGrid.parse("1:120")

    def test_per_group_censoring_flag(self):
        ds = simulate_cohort(SimSpec(n=300, seed=2))
        rep = evaluate(ds, ds.X[:, 0], TimeGrid.regular(), per_group_censoring=True)
        assert rep.to_dict()["censoring"] == "per-group"


class TestBootstrap:
    def _setup(self):
        ds = simulate_cohort(SimSpec(n=300, seed=4))
        return ds, fit(ds)[0]

    def test_deterministic(self):
        ds, model = self._setup()
        a = bootstrap_ci(ds, model, n_boot=200, seed=3)
        b = bootstrap_ci(ds, model, n_boot=200, seed=3, workers=4)
        assert a == b
        assert a[1] <= a[0] <= a[2]

    def test_i_auc(self):
        ds, model = self._setup()
        point, lo, hi = bootstrap_ci(ds, model, "i_auc", n_boot=100, seed=1)
        assert lo <= point <= hi

    def test_too_few_replicates(self):
        ds, model = self._setup()
        with pytest.raises(ConfigError):
            bootstrap_ci(ds, model, n_boot=50)

    def test_degenerate(self):
        ds = dataset(np.arange(1, 11), [1] + [0] * 9, np.linspace(0, 1, 10))
        model = CoxModel([1.0], ("x1",))
        with pytest.raises(MetricUndefinedError):
            bootstrap_ci(ds, model, n_boot=100, seed=0)
