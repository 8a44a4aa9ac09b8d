"""Reference EVSI values: full nested Monte Carlo, and exact results for the toy model."""

from __future__ import annotations

import numpy as np
from scipy import integrate, special, stats

from .bayes import DataGenerator, focal_posterior, posterior_inb_samples
from .core import (
    STREAM_OUTER,
    EvsiEstimate,
    FocalSubset,
    ParameterVector,
    derive_stream,
    ordered_mean,
    ordered_sum,
    parallel_map,
)
from .exceptions import DegenerateWeights, VoiError, with_context
from .models.toy import ToyModel
from .psa import EconomicModel, simulate_psa

__all__ = ["evsi_nested_mc", "toy_evsi_analytic", "toy_evppi_analytic"]


def evsi_nested_mc(model: EconomicModel, gen: DataGenerator, focal: FocalSubset, S: int, R: int,
                   seed: int = 0, threads: int | None = None) -> EvsiEstimate:
    """Gold-standard two-level Monte Carlo EVSI.

    For each of ``S`` prior draws one dataset is simulated and the posterior
    mean INB is estimated from ``R`` posterior draws.  The prior-decision
    term reuses the same ``S`` draws (paired), which cancels much of its
    noise.  The standard error of the paired difference is attached; a
    slightly negative raw estimate is reported as zero with a warning.
    """
    S, R = int(S), int(R)
    if S < 2 or R < 2:
        raise ValueError("S and R must both be >= 2")
    psa = simulate_psa(model, S, seed, threads=threads)
    gen.check_focal(focal, psa.names)
    phis = psa.focal_columns(focal)

    def outer(s):
        rng = derive_stream(seed, (STREAM_OUTER, s))
        try:
            dataset = gen.simulate(ParameterVector(phis[s], gen.focal_names), rng)
            posterior = focal_posterior(model, focal, gen, dataset, R, rng)
            return ordered_mean(posterior_inb_samples(model, focal, posterior, rng))
        except DegenerateWeights as exc:
            raise with_context(DegenerateWeights(str(exc)), "outer loop", s, label="s") from exc
        except VoiError as exc:
            raise with_context(exc, "outer loop", s, label="s")

    post_means = np.array(parallel_map(outer, range(S), threads))
    prior_mean = ordered_mean(psa.inb)
    gains = np.maximum(0.0, post_means)
    raw = ordered_mean(gains) - max(0.0, prior_mean)
    # paired terms: when the prior decision is to adopt, max(0, mean) is linear in the draws
    terms = gains - psa.inb if prior_mean > 0 else gains
    se = float(np.std(terms, ddof=1) / np.sqrt(S))
    warnings = []
    if raw < 0:
        warnings.append(f"negative estimate {raw:.6g} clipped to zero (Monte Carlo noise)")
    return EvsiEstimate(value=max(0.0, raw), method="nested_mc", S=S, R=R, seed=int(seed),
                        warnings=tuple(warnings), standard_error=se)


def toy_evsi_analytic(n: int, model: ToyModel | None = None) -> float:
    """Exact EVSI of the binomial trial of size ``n`` on the toy model.

    With a Beta prior on the cure probability the number of responders is
    Beta-Binomial, and the posterior mean INB is linear in it, so the
    preposterior expectation is a finite sum over ``x = 0..n``.
    """
    model = model or ToyModel()
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    a, b = model.pi1_prior
    a2, b2 = model.pi2_prior
    x = np.arange(n + 1, dtype=float)
    log_pmf = (special.gammaln(n + 1) - special.gammaln(x + 1) - special.gammaln(n - x + 1)
               + special.betaln(x + a, n - x + b) - special.betaln(a, b))
    post_inb = model.wtp * ((a + x) / (a + b + n) - a2 / (a2 + b2)) - model.delta_mean
    terms = np.exp(log_pmf) * np.maximum(0.0, post_inb)
    return max(0.0, ordered_sum(terms) - max(0.0, model.prior_mean_inb))


def toy_evppi_analytic(model: ToyModel | None = None) -> float:
    """Value of learning pi1 exactly: the large-trial limit of :func:`toy_evsi_analytic`."""
    model = model or ToyModel()
    a, b = model.pi1_prior
    a2, b2 = model.pi2_prior
    offset = model.wtp * a2 / (a2 + b2) + model.delta_mean
    threshold = offset / model.wtp

    def integrand(p):
        return max(0.0, model.wtp * p - offset) * stats.beta.pdf(p, a, b)

    lo = min(max(threshold, 0.0), 1.0)
    value, _ = integrate.quad(integrand, lo, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return max(0.0, value - max(0.0, model.prior_mean_inb))
