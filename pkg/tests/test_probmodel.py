import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predsel.dynamics import OscillatorState
from predsel.errors import DomainError, SchemaError
from predsel.probmodel import (
    Dataset,
    ModelSpec,
    PriorSpec,
    TruthConfig,
    coupled_models,
    generate_synthetic_data,
    log_likelihood,
    log_prior,
    make_log_likelihood,
    predict_observable,
    truth_observable,
)

B_TIMES = np.linspace(0.0, 6 * math.pi, 61)


def one(name="a", lo=0.0, hi=1.0):
    return PriorSpec(((name, lo, hi),))


class TestPrior:
    def test_unit_interval(self):
        assert log_prior(one(), [0.5]) == 0.0

    def test_outside(self):
        assert log_prior(one(hi=2.0), [2.5]) == -math.inf

    def test_two_params(self):
        prior = PriorSpec((("a", 0.0, 1.0), ("b", 0.0, 10.0)))
        assert log_prior(prior, {"a": 0.3, "b": 7.0}) == pytest.approx(-math.log(10))

    def test_schema_mismatch(self):
        with pytest.raises(SchemaError):
            log_prior(one(), {"b": 0.3})
        with pytest.raises(SchemaError):
            log_prior(one(), [0.1, 0.2])

    def test_bounds_must_be_ordered(self):
        with pytest.raises(DomainError):
            one(lo=1.0, hi=1.0)

    def test_samples_in_support(self):
        prior = PriorSpec.for_model(ModelSpec.parse("OQS-OED"))
        draws = prior.sample(np.random.default_rng(0), 500)
        assert np.all(np.isfinite(prior.log_density(draws)))

    @settings(max_examples=50)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_location_independent(self, a1, b1, a2, b2):
        prior = PriorSpec((("a", 0.0, 1.0), ("b", -3.0, 5.0)))
        th1 = [a1, -3.0 + 8 * b1]
        th2 = [a2, -3.0 + 8 * b2]
        assert log_prior(prior, th1) == log_prior(prior, th2)

    def test_defaults_contain_truth(self):
        prior = PriorSpec.for_model(ModelSpec.parse("OQS-OED"))
        t = TruthConfig()
        theta = {"c": t.c, "k5_0": 4, "k5_2": -5, "k5_4": 1, "log_sigma_A": math.log(0.1), "F0": 1, "tau": t.tau,
                 "alpha": 0.2, "omega": 2, "log_sigma_B": math.log(0.1)}
        assert np.isfinite(log_prior(prior, theta))


class TestModelSpec:
    def test_parse_roundtrip(self):
        m = ModelSpec.parse("OCS-SED")
        assert m.id == "OCS-SED" and m.physics == "AB"
        assert m.parameter_names == ("c", "k3_0", "k3_2", "log_sigma_A", "F0", "tau", "log_sigma_B")

    def test_components(self):
        m = ModelSpec.parse("OQS-OLD")
        assert m.component("A").id == "OQS" and m.component("B").id == "OLD"

    def test_unknown(self):
        with pytest.raises(DomainError):
            ModelSpec.parse("OXS")

    def test_cardinality(self):
        assert len(coupled_models(["OLS", "OCS", "OQS"], ["SED", "OED"])) == 6


class TestLikelihood:
    def test_exact_match(self):
        d = Dataset("A", [1.0], [1.0])
        assert log_likelihood([1.0], d, 0.1) == pytest.approx(1.3836466, abs=1e-7)

    def test_two_identical(self):
        single = log_likelihood([1.2], Dataset("A", [1.0], [1.5]), 0.2)
        double = log_likelihood([1.2, 1.2], Dataset("A", [1.0, 2.0], [1.5, 1.5]), 0.2)
        assert double == 2 * single

    def test_non_positive_prediction(self):
        assert log_likelihood([0.0, 1.0], Dataset("B", [0, 1], [1.0, 1.0]), 0.1) == -math.inf

    def test_sigma_beyond_residual_scale_decreases(self):
        d = Dataset("A", [1.0, 2.0], [1.1, 0.9])
        vals = [log_likelihood([1.0, 1.0], d, s) for s in (0.2, 0.5, 1.0)]
        assert vals[0] > vals[1] > vals[2]

    def test_sigma_maximizer_is_rms(self):
        rng = np.random.default_rng(4)
        pred = rng.uniform(0.5, 2.0, 12)
        d = Dataset("A", np.arange(12.0), pred * np.exp(0.3 * rng.standard_normal(12)))
        rms = math.sqrt(np.mean(np.log(d.values / pred) ** 2))
        grid = np.linspace(0.05, 1.0, 19001)
        scan = grid[np.argmax([log_likelihood(pred, d, s) for s in grid])]
        assert scan == pytest.approx(rms, abs=1e-4)

    @settings(max_examples=40)
    @given(st.permutations(list(range(6))))
    def test_joint_permutation(self, perm):
        pred = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
        vals = np.array([0.6, 0.9, 1.7, 2.1, 2.2, 3.3])
        base = log_likelihood(pred, Dataset("A", np.arange(6.0), vals), 0.15)
        perm = np.array(perm)
        assert log_likelihood(pred[perm], Dataset("A", np.arange(6.0), vals[perm]), 0.15) == pytest.approx(base, rel=1e-14)


class TestSynthetic:
    def test_zero_noise_is_truth(self):
        t = TruthConfig()
        d = generate_synthetic_data(t, "B", B_TIMES[:10], seed=1, sigma=0.0)
        np.testing.assert_array_equal(d.values, truth_observable(t, "B", B_TIMES[:10]))

    def test_deterministic(self):
        t = TruthConfig()
        a = generate_synthetic_data(t, "A", np.linspace(0.5, 5, 10), seed=3)
        b = generate_synthetic_data(t, "A", np.linspace(0.5, 5, 10), seed=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_noise_law(self):
        t = TruthConfig()
        times = np.linspace(0.0, 1.0, 100_000)
        d = generate_synthetic_data(t, "B", times, seed=11)
        resid = np.log(d.values / truth_observable(t, "B", times))
        assert abs(resid.std() - 0.1) < 0.002
        assert abs(resid.mean()) < 0.005

    def test_rejects_non_positive_truth(self):
        t = TruthConfig()
        with pytest.raises(DomainError, match="t="):
            generate_synthetic_data(t, "A", [0.0, 1.0], seed=0)

    def test_csv_roundtrip(self, tmp_path):
        d = generate_synthetic_data(TruthConfig(), "B", B_TIMES, seed=5)
        d.to_csv(tmp_path / "b.csv")
        back = Dataset.from_csv(tmp_path / "b.csv")
        np.testing.assert_array_equal(back.values, d.values)
        np.testing.assert_array_equal(back.times, d.times)
        assert back.physics == "B" and back.seed == 5

    def test_dataset_validation(self):
        with pytest.raises(DomainError):
            Dataset("A", [1.0, 0.5], [1.0, 1.0])
        with pytest.raises(DomainError):
            Dataset("A", [1.0, 2.0], [1.0, 0.0])


class TestForward:
    def test_truth_parameters_reproduce_truth(self):
        t = TruthConfig(free_ic=OscillatorState(0.5, 0.0))
        times = np.linspace(0.5, 5, 10)
        theta = np.array([[0.1, 4.0, -5.0, 1.0, math.log(0.1)]])
        pred = predict_observable(ModelSpec.parse("OQS"), theta, times, t.free_ic)
        np.testing.assert_allclose(pred[0], truth_observable(t, "A", times), rtol=1e-9, atol=1e-14)

    def test_physics_mismatch(self):
        d = generate_synthetic_data(TruthConfig(), "B", B_TIMES, seed=0)
        with pytest.raises(SchemaError):
            make_log_likelihood(ModelSpec.parse("OLS"), d)

    def test_forcing_likelihood_peaks_near_truth(self):
        d = generate_synthetic_data(TruthConfig(), "B", B_TIMES, seed=0)
        ll = make_log_likelihood(ModelSpec.parse("OED"), d)
        good = ll(np.array([[1.0, 2 * math.pi, 0.2, 2.0, math.log(0.1)]]))
        bad = ll(np.array([[1.0, 2 * math.pi, 0.2, 3.0, math.log(0.1)]]))
        assert good[0] > bad[0]
