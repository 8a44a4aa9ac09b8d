import pytest
from scipy import special

from constants import ORACLE_RTOL, TOY_EVPPI, TOY_EVSI, TOY_EVSI_N20
from voi.bayes import FlatGenerator
from voi.core import FocalSubset
from voi.models import ToyModel, toy_generator
from voi.oracle import evsi_nested_mc, toy_evppi_analytic, toy_evsi_analytic


def closed_form_evppi(model=ToyModel()):
    """E[max(0, w p - c)] for p ~ Beta(a, b), written with regularised incomplete betas."""
    a, b = model.pi1_prior
    a2, b2 = model.pi2_prior
    c = model.wtp * a2 / (a2 + b2) + model.delta_mean
    t = c / model.wtp
    upper_mean = a / (a + b) * special.betaincc(a + 1, b, t)
    return model.wtp * upper_mean - c * special.betaincc(a, b, t) - max(0.0, model.prior_mean_inb)


@pytest.mark.parametrize("n", sorted(TOY_EVSI))
def test_frozen_values(n):
    assert toy_evsi_analytic(n) == pytest.approx(TOY_EVSI[n], rel=ORACLE_RTOL, abs=1e-15)


def test_n20_constant():
    assert toy_evsi_analytic(20) == pytest.approx(TOY_EVSI_N20, rel=ORACLE_RTOL)


def test_nondecreasing_in_n():
    ns = [0, 1, 2, 5, 10, 20, 50, 100, 1000]
    values = [toy_evsi_analytic(n) for n in ns]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_no_study_is_worth_nothing():
    assert toy_evsi_analytic(0) == 0.0
    with pytest.raises(ValueError):
        toy_evsi_analytic(-1)


def test_evppi_quadrature_matches_closed_form():
    assert toy_evppi_analytic() == pytest.approx(closed_form_evppi(), rel=1e-10)
    assert toy_evppi_analytic() == pytest.approx(TOY_EVPPI, rel=1e-10)


def test_large_trial_limit_at_ten_thousand():
    # the gap closes like ~16/n, so at n = 1e4 it is about 1.6e-3
    assert abs(toy_evsi_analytic(10_000) - toy_evppi_analytic()) <= 1e-3


def test_large_trial_limit_at_hundred_thousand():
    gap = toy_evppi_analytic() - toy_evsi_analytic(100_000)
    assert 0 <= gap <= 1e-3


def test_other_priors():
    model = ToyModel(wtp=50.0, pi1_prior=(2.0, 2.0), delta_mean=-5.0)
    assert model.prior_mean_inb > 0
    assert toy_evppi_analytic(model) == pytest.approx(closed_form_evppi(model), rel=1e-10)
    assert 0 <= toy_evsi_analytic(30, model) <= toy_evppi_analytic(model)


class TestNested:
    def test_agrees_with_exact_value(self, toy, toy_gen, toy_focal):
        est = evsi_nested_mc(toy, toy_gen, toy_focal, 1000, 500, seed=4)
        assert est.method == "nested_mc" and est.standard_error > 0
        assert abs(est.value - TOY_EVSI_N20) < 3 * est.standard_error

    def test_flat_study(self, toy, toy_focal):
        est = evsi_nested_mc(toy, FlatGenerator(["pi1"]), toy_focal, 300, 200, seed=0)
        assert est.value <= 3 * est.standard_error + 1e-12

    def test_empty_trial(self, toy, toy_focal):
        est = evsi_nested_mc(toy, toy_generator(0, toy), toy_focal, 500, 200, seed=1)
        assert est.value >= 0
        assert est.value <= 3 * est.standard_error + 1e-12

    def test_thread_count_does_not_matter(self, toy, toy_gen, toy_focal):
        a = evsi_nested_mc(toy, toy_gen, toy_focal, 400, 100, seed=7, threads=1)
        b = evsi_nested_mc(toy, toy_gen, toy_focal, 400, 100, seed=7, threads=4)
        assert a == b

    def test_negative_estimate_clipped_with_warning(self, toy_focal):
        # adopting is optimal a priori, and the study carries no information
        model = ToyModel(delta_mean=-40.0)
        for seed in range(20):
            est = evsi_nested_mc(model, FlatGenerator(["pi1"]), toy_focal, 200, 50, seed=seed)
            if est.warnings:
                break
        assert est.value == 0.0 and "clipped" in est.warnings[0]

    def test_needs_two_draws(self, toy, toy_gen, toy_focal):
        with pytest.raises(ValueError):
            evsi_nested_mc(toy, toy_gen, toy_focal, 1, 100)
        with pytest.raises(ValueError):
            evsi_nested_mc(toy, toy_gen, FocalSubset((0,), 3), 100, 1)
