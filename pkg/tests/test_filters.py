import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netreg import filters, linops

ALPHAS = np.geomspace(1.0, 1e-4, 9)


class TestFilterValues:
    def test_tikhonov(self):
        assert filters.filter_value(filters.FilterSpec("tikhonov"), 0.5, 1.5) == pytest.approx(0.5)

    def test_tsvd_cutoff(self):
        spec = filters.FilterSpec("tsvd")
        assert filters.filter_value(spec, 0.1, 0.2) == pytest.approx(5.0)
        assert filters.filter_value(spec, 0.1, 0.05) == 0.0
        assert filters.filter_value(spec, 0.1, 0.1) == pytest.approx(10.0)

    def test_landweber_matches_iteration(self):
        # k Landweber steps from 0 give tau sum_j (1 - tau lam)^j applied to the data
        spec = filters.FilterSpec("landweber", step=0.5)
        lam, alpha = 1.3, 1.0 / 7
        x = 0.0
        for _ in range(filters.landweber_iterations(alpha)):
            x = x + 0.5 * (1.0 - lam * x)
        assert filters.filter_value(spec, alpha, lam) == pytest.approx(x / 1.0, rel=1e-13)

    def test_landweber_at_zero(self):
        spec = filters.FilterSpec("landweber", step=0.25)
        assert filters.filter_value(spec, 0.1, 0.0) == pytest.approx(10 * 0.25)

    def test_landweber_small_lambda_no_cancellation(self):
        spec = filters.FilterSpec("landweber")
        assert filters.filter_value(spec, 1e-3, 1e-14) == pytest.approx(1000.0, rel=1e-9)

    def test_iteration_count(self):
        assert filters.landweber_iterations(0.1) == 10
        assert filters.landweber_iterations(0.3) == 4
        assert filters.landweber_iterations(5.0) == 1

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            filters.FilterSpec("wiener")
        with pytest.raises(ValueError):
            filters.filter_values(filters.FilterSpec("tikhonov"), 0.0, [1.0])


class TestVerification:
    @pytest.mark.parametrize("kind", filters.FILTER_KINDS)
    def test_standard_filters_pass(self, kind):
        rep = filters.verify_filter_conditions(filters.FilterSpec(kind), ALPHAS, lambda_max=1.0)
        assert rep.passed, rep
        assert rep.bound_observed <= 1.0 + 1e-12

    def test_tsvd_jumps_at_alpha(self):
        rep = filters.verify_filter_conditions(filters.FilterSpec("tsvd"), [0.5, 0.25], lambda_max=1.0)
        assert len(rep.jump_points[0]) == 1
        assert rep.jump_points[0][0] == pytest.approx(0.5, abs=1e-9)

    def test_tikhonov_has_no_jumps(self):
        rep = filters.verify_filter_conditions(filters.FilterSpec("tikhonov"), [0.5, 0.25], lambda_max=1.0)
        assert rep.jump_points == [[], []]

    def test_landweber_with_too_large_step_fails_bound(self):
        rep = filters.verify_filter_conditions(filters.FilterSpec("landweber", step=3.0), ALPHAS, lambda_max=1.0)
        assert not rep.bounded

    def test_grid_must_descend(self):
        with pytest.raises(ValueError):
            filters.verify_filter_conditions(filters.FilterSpec("tikhonov"), [0.1, 0.2], 1.0)


class TestParameterRule:
    def test_choice(self):
        assert filters.apriori_choice(filters.ParameterRule(2.0, 0.5), 0.04) == pytest.approx(0.4)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5, -0.2])
    def test_rejects_gamma_outside_open_interval(self, gamma):
        with pytest.raises(ValueError):
            filters.ParameterRule(1.0, gamma)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            filters.apriori_choice(filters.ParameterRule(), 0.0)

    @given(gamma=st.floats(0.05, 0.95), c=st.floats(0.1, 10.0))
    def test_limits(self, gamma, c):
        rule = filters.ParameterRule(c, gamma)
        d = np.array([1e-2, 1e-4, 1e-6])
        a = np.array([filters.apriori_choice(rule, v) for v in d])
        assert np.all(np.diff(a) < 0)
        assert np.all(np.diff(d / a) < 0)


class TestReconstruction:
    def test_tikhonov_matches_normal_equations(self, rng):
        M = rng.standard_normal((5, 8))
        f = linops.svd(linops.DenseOperator(M))
        y = rng.standard_normal(5)
        want = np.linalg.solve(M.T @ M + 0.3 * np.eye(8), M.T @ y)
        got = filters.reconstruct_filtered(f, filters.FilterSpec("tikhonov"), 0.3, y)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_small_alpha_tends_to_pseudoinverse(self, rng):
        M = rng.standard_normal((4, 6))
        f = linops.svd(linops.DenseOperator(M))
        y = rng.standard_normal(4)
        want = np.linalg.pinv(M) @ y
        for kind in filters.FILTER_KINDS:
            spec = filters.FilterSpec(kind, step=1.0 / f.s_max**2)
            got = filters.reconstruct_filtered(f, spec, 1e-6, y)
            assert np.linalg.norm(got - want) < 1e-3 * np.linalg.norm(want)

    def test_filter_matrix(self, rng):
        M = rng.standard_normal((3, 4))
        f = linops.svd(linops.DenseOperator(M))
        spec = filters.FilterSpec("tikhonov")
        B = filters.filter_matrix(f, spec, 0.2)
        y = rng.standard_normal(3)
        np.testing.assert_allclose(B @ y, filters.reconstruct_filtered(f, spec, 0.2, y), atol=1e-13)


@given(
    kind=st.sampled_from(filters.FILTER_KINDS),
    alpha=st.floats(1e-4, 1.0),
    lam=st.floats(0.0, 1.0),
)
@settings(max_examples=200)
def test_uniform_bound(kind, alpha, lam):
    assert abs(lam * filters.filter_value(filters.FilterSpec(kind), alpha, lam)) <= 1.0 + 1e-12
