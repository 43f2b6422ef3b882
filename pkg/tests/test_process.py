import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inarout import process as pr


class TestCountSeries:
    def test_values_are_read_only_integers(self):
        s = pr.CountSeries([3, 5, 2])
        assert s.n == 3
        assert s.values.dtype == np.int64
        with pytest.raises(ValueError):
            s.values[0] = 1

    def test_integer_valued_floats_are_accepted(self):
        assert pr.CountSeries(np.array([1.0, 2.0])).values.tolist() == [1, 2]

    @pytest.mark.parametrize("bad", [[1, -1], [1.5, 2], [], [[1, 2]], ["a"]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(pr.ConfigurationError):
            pr.CountSeries(bad)

    def test_labels_must_match_length(self):
        with pytest.raises(pr.ConfigurationError):
            pr.CountSeries([1, 2], labels=["a"])


class TestModelTypes:
    @pytest.mark.parametrize("alphas", [(1.0,), (-0.1,), (0.6, 0.5)])
    def test_invalid_alphas(self, alphas):
        with pytest.raises(pr.ConfigurationError):
            pr.InarModel(alphas, 2.0)

    def test_nonpositive_lambda(self):
        with pytest.raises(pr.ConfigurationError):
            pr.InarModel(0.3, 0.0)

    def test_intervention_validation(self):
        with pytest.raises(pr.ConfigurationError):
            pr.Intervention(10, 1.2, 1.0)
        with pytest.raises(pr.ConfigurationError):
            pr.Intervention(0, 0.5, 1.0)
        assert pr.Intervention(10, 0.5, 3.0).profile == (10, 0.5)


class TestThinning:
    def test_zero_probability(self):
        assert pr.binomial_thin(5, 0.0, pr.generator(1)) == 0

    def test_sure_success(self):
        assert pr.binomial_thin(5, 1.0, pr.generator(1)) == 5

    def test_monte_carlo_mean(self):
        rng = pr.generator(11)
        draws = [pr.binomial_thin(10, 0.3, rng) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(3.0, abs=0.05)

    @pytest.mark.parametrize("alpha", [-0.01, 1.01])
    def test_domain(self, alpha):
        with pytest.raises(ValueError):
            pr.binomial_thin(3, alpha, pr.generator(0))

    @settings(max_examples=50, deadline=None)
    @given(c=st.integers(0, 500), a=st.floats(0, 1), seed=st.integers(0, 2**32))
    def test_never_exceeds_count(self, c, a, seed):
        assert 0 <= pr.binomial_thin(c, a, pr.generator(seed)) <= c


class TestInterventionMean:
    def test_innovation_outlier_hits_once(self):
        iv = pr.Intervention(100, 0.0, 20.0)
        assert pr.intervention_mean(iv, 100) == 20.0
        assert pr.intervention_mean(iv, 101) == 0.0
        assert pr.intervention_mean(iv, 99) == 0.0

    def test_level_shift(self):
        assert pr.intervention_mean(pr.Intervention(100, 1.0, 20.0), 150) == 20.0

    def test_transient(self):
        assert pr.intervention_mean(pr.Intervention(100, 0.8, 20.0), 102) == pytest.approx(12.8)

    def test_profile_matches_pointwise(self):
        iv = pr.Intervention(4, 0.5, 1.0)
        prof = pr.decay_profile(8, 4, 0.5)
        assert prof.tolist() == [pr.intervention_mean(iv, t) for t in range(1, 9)]


class TestStationaryMean:
    def test_examples(self):
        assert pr.stationary_mean(pr.InarModel(0.3, 5.0)) == pytest.approx(7.142857142857)
        assert pr.stationary_mean(pr.InarModel(0.0, 2.0)) == 2.0
        assert pr.stationary_mean(pr.InarModel((0.3, 0.2), 3.0)) == pytest.approx(6.0)

    def test_loglinear_unsupported(self):
        m = pr.InarModel(0.3, pr.LogLinearMean([0.1], np.ones((5, 1))))
        with pytest.raises(pr.UnsupportedError):
            pr.stationary_mean(m)


class TestSimulation:
    def test_long_run_mean_and_autocorrelation(self):
        y = pr.simulate_contaminated(pr.InarModel(0.3, 5.0), [], 100_000, rng=5).values.astype(float)
        assert y.mean() == pytest.approx(5.0 / 0.7, abs=0.05)
        r1 = np.corrcoef(y[1:], y[:-1])[0, 1]
        assert r1 == pytest.approx(0.3, abs=0.02)

    def test_inar2_mean(self):
        y = pr.simulate_contaminated(pr.InarModel((0.3, 0.2), 3.0), [], 100_000, rng=6).values
        assert y.mean() == pytest.approx(6.0, abs=0.1)

    def test_zero_kappa_is_bitwise_clean(self):
        m = pr.InarModel(0.4, 2.0)
        clean = pr.simulate_contaminated(m, [], 300, rng=9)
        ivs = [pr.Intervention(50, 0.8, 0.0), pr.Intervention(200, 1.0, 0.0)]
        assert pr.simulate_contaminated(m, ivs, 300, rng=9) == clean

    def test_deterministic(self):
        m = pr.InarModel((0.3, 0.2), 3.0)
        a = pr.simulate_contaminated(m, [pr.Intervention(30, 0.6, 5.0)], 100, rng=3)
        b = pr.simulate_contaminated(m, [pr.Intervention(30, 0.6, 5.0)], 100, rng=3)
        assert a == b

    def test_prefix_before_onset_unchanged(self):
        m = pr.InarModel(0.3, 5.0)
        clean = pr.simulate_contaminated(m, [], 200, rng=2).values
        dirty = pr.simulate_contaminated(m, [pr.Intervention(100, 0.0, 20.0)], 200, rng=2).values
        assert np.array_equal(clean[:99], dirty[:99])

    def test_innovation_outlier_spike(self):
        # averaged over seeds the excess decays like kappa * alpha^(t - tau)
        m = pr.InarModel(0.3, 5.0)
        iv = [pr.Intervention(100, 0.0, 20.0)]
        diff = np.mean(
            [
                pr.simulate_contaminated(m, iv, 200, rng=s).values - pr.simulate_contaminated(m, [], 200, rng=s).values
                for s in range(400)
            ],
            axis=0,
        )
        assert diff[98] == 0
        assert diff[99] == pytest.approx(20.0, abs=1.0)
        assert diff[100] == pytest.approx(6.0, abs=1.0)
        assert abs(diff[110]) < 0.5

    def test_level_shift_raises_mean(self):
        m = pr.InarModel(0.5, 2.0)
        y = pr.simulate_contaminated(m, [pr.Intervention(101, 1.0, 4.0)], 200, rng=8).values
        assert y[120:].mean() > y[:100].mean() + 4

    def test_onset_outside_window(self):
        with pytest.raises(pr.ConfigurationError):
            pr.simulate_contaminated(pr.InarModel(0.3, 2.0), [pr.Intervention(11, 0.0, 1.0)], 10)

    def test_negative_kappa_refused(self):
        with pytest.raises(pr.ConfigurationError):
            pr.simulate_contaminated(pr.InarModel(0.3, 2.0), [pr.Intervention(5, 0.0, -1.0)], 10)

    def test_short_covariates(self):
        mean = pr.LogLinearMean([0.5], np.ones((50, 1)))
        with pytest.raises(pr.ConfigurationError):
            pr.simulate_contaminated(pr.InarModel(0.3, mean), [], 20, burn_in=40, rng=0)

    def test_loglinear_mean_follows_covariates(self):
        X = np.column_stack([np.ones(20_000), np.r_[np.zeros(10_000), np.ones(10_000)]])
        mean = pr.LogLinearMean([np.log(2.0), np.log(3.0)], X)
        y = pr.simulate_contaminated(pr.InarModel(0.2, mean), [], 10_000, burn_in=10_000, rng=4).values
        assert y.mean() == pytest.approx(6.0 / 0.8, rel=0.03)


class TestSubstreams:
    def test_independent_of_spawn_history(self):
        a = pr.generator(7, 3).integers(0, 2**31, 5)
        pr.generator(7, 1).integers(0, 2**31, 5)
        b = pr.generator(7, 3).integers(0, 2**31, 5)
        assert np.array_equal(a, b)

    def test_keys_differ(self):
        assert not np.array_equal(pr.generator(7, 1).random(4), pr.generator(7, 2).random(4))

    def test_negative_seed(self):
        with pytest.raises(pr.ConfigurationError):
            pr.as_seed_sequence(-1)
