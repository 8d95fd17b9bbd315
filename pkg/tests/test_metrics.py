import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dercoord as dc
from dercoord.errors import DimensionMismatchError, FitWindowError
from dercoord.metrics import RunTrace, flag_no_progress


def make_trace(p, **kwargs):
    return RunTrace(algorithm="pd1", p=np.asarray(p, dtype=float), **kwargs)


class TestConvergenceError:
    def solution(self, p_star):
        # a_i = 10/p_i equalizes marginal costs exactly at p_star, so the
        # oracle optimum is the requested dispatch
        p_star = np.asarray(p_star, float)
        inst = dc.ProblemInstance(
            p_star,
            np.full(len(p_star), -10.0),
            np.full(len(p_star), 10.0),
            dc.QuadraticCost(10.0 / p_star),
        )
        return dc.solve_bisection(inst)

    def test_constant_at_optimum_is_zero(self):
        sol = self.solution([1.0, 2.0])
        trace = make_trace(np.tile(sol.p_star, (5, 1)))
        np.testing.assert_array_equal(dc.convergence_error(trace, sol), 0.0)

    def test_three_four_five(self):
        sol = self.solution([3.0, 4.0])
        trace = make_trace([[0.0, 0.0]])
        assert dc.convergence_error(trace, sol)[0] == pytest.approx(5.0)

    def test_dimension_mismatch(self):
        sol = self.solution([1.0, 2.0])
        with pytest.raises(DimensionMismatchError):
            dc.convergence_error(make_trace([[0.0, 0.0, 0.0]]), sol)

    def test_invariant_under_consistent_permutation(self):
        sol = self.solution([1.0, 2.0, 4.0])
        rng = np.random.default_rng(0)
        p = rng.normal(size=(6, 3))
        trace = make_trace(p)
        err = dc.convergence_error(trace, sol)
        perm = np.array([2, 0, 1])
        sol_p = self.solution(np.asarray(sol.p_star)[perm])
        err_p = dc.convergence_error(make_trace(p[:, perm]), sol_p)
        np.testing.assert_allclose(err_p, err, atol=1e-12)


class TestWeightedNorm:
    def test_constant_series(self):
        assert dc.weighted_norm([3.0, 3.0, 3.0], 0.5, 2) == pytest.approx(12.0)

    def test_geometric_series_cancels(self):
        series = 7.0 * 0.5 ** np.arange(20)
        for K in (0, 5, 19):
            assert dc.weighted_norm(series, 0.5, K) == pytest.approx(7.0)

    def test_invalid_a_rejected(self):
        with pytest.raises(ValueError):
            dc.weighted_norm([1.0], 1.0, 0)
        with pytest.raises(ValueError):
            dc.weighted_norm([1.0], 0.0, 0)

    @given(
        a=st.floats(0.1, 0.95),
        K1=st.integers(0, 18),
        K2=st.integers(0, 18),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_K_antitone_in_a(self, a, K1, K2, seed):
        rng = np.random.default_rng(seed)
        series = rng.uniform(0.01, 2.0, size=19)
        lo, hi = min(K1, K2), max(K1, K2)
        assert dc.weighted_norm(series, a, lo) <= dc.weighted_norm(series, a, hi) + 1e-12
        a2 = min(0.99, a + 0.04)
        assert dc.weighted_norm(series, a2, hi) <= dc.weighted_norm(series, a, hi) * (1 + 1e-12)


class TestFitRate:
    def test_exact_geometric_series(self):
        series = 2.0 ** -np.arange(40.0)
        est = dc.fit_rate(series, window=(5, 30))
        assert est.rate == pytest.approx(0.5, abs=1e-12)
        assert est.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_default_window_is_last_half(self):
        series = 0.8 ** np.arange(30.0)
        est = dc.fit_rate(series)
        assert est.window == (15, 29)
        assert est.rate == pytest.approx(0.8, abs=1e-12)

    def test_small_additive_noise_barely_moves_fit(self):
        ks = np.arange(40.0)
        clean = dc.fit_rate(0.9**ks)
        noisy = dc.fit_rate(0.9**ks + 1e-12)
        assert abs(noisy.rate - clean.rate) <= 1e-3

    def test_diverging_series_flagged(self):
        est = dc.fit_rate(1.5 ** np.arange(20.0))
        assert est.rate > 1.0 and est.diverging

    def test_floor_values_excluded(self):
        series = np.concatenate([0.5 ** np.arange(30.0), np.full(10, 1e-16)])
        est = dc.fit_rate(series, window=(0, 39))
        assert est.n_points == 30
        assert est.rate == pytest.approx(0.5, abs=1e-9)

    def test_unusable_window_suggests_start(self):
        series = np.concatenate([np.zeros(5), 0.5 ** np.arange(10.0)])
        with pytest.raises(FitWindowError) as err:
            dc.fit_rate(series, window=(0, 4))
        assert err.value.suggested_start == 5


class TestInvariantReport:
    def healthy_trace(self, case39_undirected=None):
        inst = dc.generate_instance(dc.InstanceSpec(n=6), seed=1)
        g = dc.generate_graph(dc.GraphSpec(n=6, extra_edges=2, directed=False), 3)
        params = dc.AlgorithmParams(step=dc.ConstantStep(0.05), xi=0.5, nhat=6.0, horizon=400)
        sched = dc.GraphSchedule(g, 0.2, 4, 400)
        return dc.run("pd1", inst, sched, params), sched

    def test_healthy_run_passes_budgets(self):
        trace, _ = self.healthy_trace()
        report = dc.invariant_report(trace)
        assert report.passed
        assert report["conservation"].value <= dc.BUDGETS["conservation"]

    def test_corrupted_step_is_localized(self):
        trace, _ = self.healthy_trace()
        trace.residuals["conservation"] = trace.residuals["conservation"].copy()
        trace.residuals["conservation"][137] = 0.5  # inject a fault at one step
        report = dc.invariant_report(trace)
        assert not report.passed
        check = report["conservation"]
        assert not check.passed and check.worst_step == 137

    def test_v_floor_reported_with_margin(self):
        inst = dc.generate_instance(dc.InstanceSpec(n=3), seed=2)
        g = dc.NominalGraph(3, [(0, 1), (1, 2), (2, 0)], True)
        params = dc.AlgorithmParams(
            step=dc.ConstantStep(0.02), xi=0.2, nhat=3.0, gamma=0.9, horizon=60
        )
        sched = dc.GraphSchedule(g, 0.2, 8, 60)
        trace = dc.run("robust", inst, sched, params)
        report = dc.invariant_report(trace, schedule=sched)
        check = report["v_floor"]
        assert check.passed
        assert check.budget is not None
        assert check.value / check.budget > 1e6  # the bound is very loose


class TestRateCertificate:
    def test_weighted_norm_bounded_at_fitted_rate(self):
        # on a converged run, a^{-k}||err|| stays bounded in K for the
        # fitted a, certifying O(a^k) decay over the decay window
        inst = dc.generate_instance(dc.InstanceSpec(n=6), seed=1)
        g = dc.generate_graph(dc.GraphSpec(n=6, extra_edges=2, directed=False), 3)
        params = dc.AlgorithmParams(step=dc.ConstantStep(0.05), xi=0.5, nhat=6.0, horizon=700)
        trace = dc.run("pd1", inst, dc.GraphSchedule(g, 0.2, 4, 700), params)
        sol = dc.solve_bisection(inst, xi=0.5, nhat=6.0)
        err = dc.convergence_error(trace, sol)
        stop = int(np.argmax(err <= 1e-10 * err[0]))
        window = (stop // 4, stop)
        fit = dc.fit_rate(err, window=window)
        assert fit.rate < 1.0
        # pad the rate slightly: the fit is a least-squares mid-line
        a = min(0.999, fit.rate * 1.05)
        series = err[window[0] : window[1] + 1]
        norms = [dc.weighted_norm(series, a, K) for K in range(10, len(series), 50)]
        assert max(norms) <= 1e3 * norms[0]


class TestDeviationSeries:
    def test_consensus_deviation_zero_at_consensus(self):
        trace = make_trace(
            np.zeros((3, 2)), consensus=np.full((3, 2), 1.5), v=np.ones((3, 2))
        )
        np.testing.assert_allclose(dc.consensus_deviation(trace), 0.0, atol=1e-15)

    def test_deviation_from_optimum_shrinks_on_converging_run(self):
        inst = dc.generate_instance(dc.InstanceSpec(n=5), seed=3)
        g = dc.generate_graph(dc.GraphSpec(n=5, extra_edges=2, directed=False), 1)
        params = dc.AlgorithmParams(step=dc.ConstantStep(0.05), xi=0.5, nhat=5.0, horizon=2000)
        sched = dc.GraphSchedule(g, 0.1, 2, 2000)
        trace = dc.run("pd1", inst, sched, params)
        sol = dc.solve_bisection(inst, xi=0.5, nhat=5.0)
        z = dc.deviation_from_optimum(trace, sol)
        assert z[-1] <= 1e-6 * z[0]


class TestNoProgressFlag:
    def test_limit_cycle_flagged(self):
        imbalance = np.tile([5.0, 5.0], 100)
        assert flag_no_progress(imbalance)

    def test_decaying_run_not_flagged(self):
        assert not flag_no_progress(5.0 * 0.9 ** np.arange(200.0))

    def test_balanced_start_not_flagged(self):
        assert not flag_no_progress(np.zeros(100))
