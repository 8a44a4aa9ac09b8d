import numpy as np
import pytest
from sklearn.base import clone

from constants import TOY_PSI_VAR_INB
from voi.bayes import FlatGenerator
from voi.core import FocalSubset, PsaResult, derive_stream
from voi.evppi import ConditionalInb, evppi, fit_conditional_inb
from voi.exceptions import DegenerateWeights, VarianceInflation
from voi.mm import (
    MmConfig,
    MomentMatchingEVSI,
    average_posterior_variance,
    evsi_from_rescaled,
    evsi_moment_matching,
    moment_match,
    nested_posterior_variance,
    rescale_inb,
    select_quantile_rows,
)
from voi.models import ToyModel, toy_generator
from voi.psa import simulate_psa

PAPER_PI1 = [0.26, 0.27, 0.30, 0.37, 0.47, 0.50, 0.51, 0.53, 0.59, 0.76]


def column_psa(*cols):
    X = np.column_stack(cols).astype(float)
    return PsaResult(X, np.zeros(X.shape[0]), tuple(f"c{i}" for i in range(X.shape[1])))


@pytest.fixture(scope="module")
def toy_setup():
    model = ToyModel()
    focal = FocalSubset.from_names(["pi1"], model.parameter_names)
    psa = simulate_psa(model, 10_000, seed=0)
    return model, focal, psa, fit_conditional_inb(psa, focal)


class TestQuantileRows:
    def test_thousand_rows_three_quantiles(self):
        values = np.random.default_rng(0).permutation(np.arange(1.0, 1001.0))
        rows = select_quantile_rows(column_psa(values), FocalSubset((0,), 1), 3)
        assert rows[:, 0].tolist() == [250.0, 500.0, 750.0]

    def test_ordered_pi1_vector(self):
        shuffled = np.random.default_rng(1).permutation(PAPER_PI1)
        rows = select_quantile_rows(column_psa(shuffled), FocalSubset((0,), 1), 3)
        assert rows[:, 0] == pytest.approx([0.285, 0.47, 0.52], abs=1e-12)

    def test_q_equal_s_is_monotone(self):
        values = np.random.default_rng(2).normal(size=40)
        rows = select_quantile_rows(column_psa(values), FocalSubset((0,), 1), 40)
        assert np.all(np.diff(rows[:, 0]) >= 0)
        assert rows[0, 0] >= values.min() and rows[-1, 0] <= values.max()

    def test_columns_sorted_independently(self):
        a = np.arange(1.0, 11.0)
        rows = select_quantile_rows(column_psa(a, a[::-1] * 10), FocalSubset((0, 1), 2), 3)
        assert rows[:, 1].tolist() == (rows[:, 0] * 10).tolist()

    def test_needs_enough_rows(self):
        with pytest.raises(ValueError):
            select_quantile_rows(column_psa(np.arange(3.0)), FocalSubset((0,), 1), 4)


class TestNestedVariance:
    def test_flat_study_gives_prior_variance(self, toy_setup):
        model, focal, *_ = toy_setup
        R = 20_000
        s2 = nested_posterior_variance(model, focal, FlatGenerator(["pi1"]), [0.4], R, derive_stream(1))
        var = model.prior_var_inb
        assert abs(s2 - var) < 3 * var * np.sqrt(2 / (R - 1))

    def test_huge_trial_leaves_psi_variance(self, toy_setup):
        model, focal, *_ = toy_setup
        R = 20_000
        s2 = nested_posterior_variance(model, focal, toy_generator(100_000, model), [0.4], R,
                                       derive_stream(2))
        # posterior sd of pi1 is about 0.0015, adding ~0.02 to the variance
        assert abs(s2 - TOY_PSI_VAR_INB) < 3 * TOY_PSI_VAR_INB * np.sqrt(2 / (R - 1))

    def test_r_must_be_two(self, toy_setup):
        model, focal, *_ = toy_setup
        with pytest.raises(ValueError):
            nested_posterior_variance(model, focal, toy_generator(20), [0.4], 1, derive_stream(0))


@pytest.mark.parametrize("values,expected", [([406.0] * 3, 406.0), ([300.0, 500.0], 400.0)])
def test_average_posterior_variance(values, expected):
    assert average_posterior_variance(values) == expected


class TestRescale:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.cinb = ConditionalInb.from_values(rng.normal(-4.5, 20.0, 500), FocalSubset((0,), 1))
        self.mu = float(np.mean(self.cinb.values))
        self.s2theta = 722.0

    def test_zero_information(self):
        star = rescale_inb(self.cinb, self.mu, self.s2theta, self.s2theta)
        assert np.all(star == self.mu)
        assert evsi_from_rescaled(star, self.mu) == 0.0

    def test_perfect_information(self):
        s2X = self.s2theta - self.cinb.sigma2_phi
        star = rescale_inb(self.cinb, self.mu, self.s2theta, s2X)
        assert np.allclose(star, self.cinb.values, rtol=0, atol=1e-12)
        assert evsi_from_rescaled(star, self.mu) == pytest.approx(evppi(self.cinb, self.mu), abs=1e-12)

    def test_display_formula(self):
        inb_phi = np.array([-30.0, -4.5, 12.0, 40.0])
        star = moment_match(inb_phi, -4.5, 391.0, 722.0, 406.0)
        expected = ((inb_phi - (-4.5)) / np.sqrt(391.0)) * np.sqrt(722.0 - 406.0) + (-4.5)
        assert np.array_equal(star, expected)

    def test_inflation(self):
        with pytest.raises(VarianceInflation):
            rescale_inb(self.cinb, self.mu, self.s2theta, self.s2theta + 1, clamp=False)
        star = rescale_inb(self.cinb, self.mu, self.s2theta, self.s2theta + 1, clamp=True)
        assert np.all(star == self.mu)

    @pytest.mark.parametrize("s2X", [0.0, 100.0, 400.0, 700.0])
    def test_variance_identity(self, s2X):
        star = rescale_inb(self.cinb, self.mu, self.s2theta, s2X)
        assert np.var(star, ddof=1) == pytest.approx(self.s2theta - s2X, rel=1e-9)
        assert np.mean(star) == pytest.approx(self.mu, rel=1e-12)

    def test_monotone_in_information_and_bounded_by_evppi(self):
        bound = evppi(self.cinb, self.mu)
        floor = self.s2theta - self.cinb.sigma2_phi
        grid = np.linspace(self.s2theta, 0.0, 60)
        values = [evsi_from_rescaled(rescale_inb(self.cinb, self.mu, self.s2theta, s), self.mu)
                  for s in grid]
        assert np.all(np.diff(values) >= -1e-12)
        assert all(v <= bound + 1e-12 for v, s in zip(values, grid) if s >= floor)

    def test_sigma2_phi_must_be_positive(self):
        with pytest.raises(ValueError):
            moment_match([1.0, 1.0], 1.0, 0.0, 2.0, 1.0)


class TestEstimator:
    def test_runs_with_full_provenance(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        est = evsi_moment_matching(model, psa, cinb, toy_generator(20, model), MmConfig(Q=40, R=500, seed=3))
        assert est.method == "moment_matching" and est.value >= 0
        assert (est.S, est.Q, est.R, est.seed) == (10_000, 40, 500, 3)
        assert est.bundle.Q == 40 and est.warnings == ()

    def test_small_q_warning(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        est = evsi_moment_matching(model, psa, cinb, toy_generator(20, model), MmConfig(Q=10, R=200))
        assert any(w.startswith("Q<30") for w in est.warnings)

    def test_flat_study_is_worth_nothing(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        values = [evsi_moment_matching(model, psa, cinb, FlatGenerator(["pi1"]),
                                       MmConfig(Q=30, R=2000, seed=s)).value for s in range(5)]
        assert max(values) < 1e-6

    def test_thread_count_does_not_matter(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        gen = toy_generator(20, model)
        cfg = MmConfig(Q=50, R=1000, seed=9)
        one = evsi_moment_matching(model, psa, cinb, gen, cfg, threads=1)
        many = evsi_moment_matching(model, psa, cinb, gen, cfg, threads=6)
        assert one.value == many.value and one.bundle == many.bundle

    def test_permutation_invariance(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        gen = toy_generator(20, model)
        cfg = MmConfig(Q=30, R=500, seed=1)
        perm = np.random.default_rng(5).permutation(psa.S)
        psa_p = PsaResult(psa.params[perm], psa.inb[perm], psa.names)
        cinb_p = ConditionalInb.from_values(cinb.values[perm], focal)
        a = evsi_moment_matching(model, psa, cinb, gen, cfg)
        b = evsi_moment_matching(model, psa_p, cinb_p, gen, cfg)
        assert a.bundle.sigma2_q == b.bundle.sigma2_q
        assert b.value == pytest.approx(a.value, rel=1e-9)
        assert average_posterior_variance(a.bundle.sigma2_q[::-1]) == a.bundle.sigma2_X

    def test_clamping_reported(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        gen = FlatGenerator(["pi1"])
        warned = clamped = None
        for seed in range(20):
            est = evsi_moment_matching(model, psa, cinb, gen, MmConfig(Q=30, R=200, seed=seed))
            if any(w.startswith("variance clamped") for w in est.warnings):
                warned, clamped = seed, est
                break
        assert clamped is not None and clamped.value == 0.0
        with pytest.raises(VarianceInflation) as err:
            evsi_moment_matching(model, psa, cinb, gen, MmConfig(Q=30, R=200, seed=warned,
                                                                 clamp_variance=False))
        assert err.value.stage == "rescale"

    def test_degenerate_weights_carry_q(self, toy_setup):
        model, focal, psa, cinb = toy_setup

        class Impossible(FlatGenerator):
            def log_likelihood(self, phi, dataset):
                return np.full(np.atleast_2d(phi).shape[0], -np.inf)

        with pytest.raises(DegenerateWeights) as err:
            evsi_moment_matching(model, psa, cinb, Impossible(["pi1"]), MmConfig(Q=5, R=20), threads=1)
        assert err.value.q == 0 and err.value.stage == "nested posterior"

    def test_low_ess_warning(self, toy_setup):
        model, focal, psa, cinb = toy_setup

        class Sharp(FlatGenerator):
            def log_likelihood(self, phi, dataset):
                p = np.atleast_2d(phi)[:, 0]
                return -1e10 * (p - 0.4) ** 2

        est = evsi_moment_matching(model, psa, cinb, Sharp(["pi1"]), MmConfig(Q=2, R=1000))
        assert any(w.startswith("low ESS") for w in est.warnings)

    def test_focal_must_match_generator(self, toy_setup):
        model, _, psa, _ = toy_setup
        focal = FocalSubset.from_names(["pi2"], model.parameter_names)
        cinb = fit_conditional_inb(psa, focal)
        with pytest.raises(ValueError):
            evsi_moment_matching(model, psa, cinb, toy_generator(20, model))


class TestSklearnInterface:
    def test_fit(self, toy_setup):
        model, focal, psa, cinb = toy_setup
        est = MomentMatchingEVSI(model=model, generator=toy_generator(20, model), Q=30, R=500, seed=2)
        est.fit(psa.params, psa.inb)
        assert est.evsi_ == est.estimate_.value
        assert est.n_features_in_ == 3
        assert np.var(est.inb_star_, ddof=1) == pytest.approx(
            est.bundle_.sigma2_theta - est.bundle_.sigma2_X, rel=1e-9)
        assert est.evsi_ <= est.evppi_
        again = clone(est).fit(psa.params)
        assert again.evsi_ == est.evsi_

    def test_needs_model(self):
        with pytest.raises(ValueError):
            MomentMatchingEVSI().fit(np.ones((20, 3)))
