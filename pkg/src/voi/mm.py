"""Moment-matching EVSI estimator.

Only ``Q`` posterior updates are needed.  The focal columns of the PSA are
split at evenly spaced quantiles, one future dataset is simulated at each
split point, and the posterior INB variance is estimated for each dataset.
Their mean is the expected posterior variance.  The conditional INB values
are then rescaled so that their variance equals the expected variance
reduction, and the rescaled values give the EVSI.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .bayes import DataGenerator, PosteriorDraws, focal_posterior, posterior_inb_samples
from .core import (
    STREAM_NESTED,
    EvsiEstimate,
    FocalSubset,
    ParameterVector,
    PsaResult,
    VarianceBundle,
    derive_stream,
    ordered_mean,
    parallel_map,
)
from .evppi import ConditionalInb, RegressionConfig, evppi, fit_conditional_inb
from .exceptions import DegenerateWeights, VarianceInflation, VoiError, with_context
from .psa import EconomicModel, evaluate_inb, inb_moments

__all__ = [
    "MIN_RECOMMENDED_Q",
    "MmConfig",
    "select_quantile_rows",
    "nested_posterior_variance",
    "average_posterior_variance",
    "moment_match",
    "rescale_inb",
    "evsi_from_rescaled",
    "evsi_moment_matching",
    "MomentMatchingEVSI",
]

logger = logging.getLogger(__name__)

MIN_RECOMMENDED_Q = 30


@dataclass(frozen=True)
class MmConfig:
    Q: int = 50
    R: int = 5000
    clamp_variance: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.Q) < 2:
            raise ValueError("Q must be >= 2")
        if int(self.R) < 2:
            raise ValueError("R must be >= 2")


def select_quantile_rows(psa: PsaResult, focal: FocalSubset, Q: int) -> np.ndarray:
    """Focal values at the ``q / (Q + 1)`` quantiles, ``q = 1..Q``.

    Each focal column is sorted on its own.  Row ``q`` takes element
    ``i = q * S / (Q + 1)`` (1-based) of every sorted column; a fractional
    ``i`` averages elements ``floor(i)`` and ``ceil(i)``.
    """
    Q = int(Q)
    S = psa.S
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if S < Q:
        raise ValueError(f"need S >= Q, got S={S}, Q={Q}")
    cols = np.sort(psa.focal_columns(focal), axis=0)
    out = np.empty((Q, cols.shape[1]))
    for q in range(1, Q + 1):
        lo, rem = divmod(q * S, Q + 1)
        hi = lo if rem == 0 else lo + 1
        lo, hi = max(lo, 1), max(hi, 1)
        out[q - 1] = (cols[lo - 1] + cols[hi - 1]) / 2.0 if lo != hi else cols[lo - 1]
    return out


def _nested_sample(model: EconomicModel, focal: FocalSubset, gen: DataGenerator,
                   phi_q, R: int, rng: np.random.Generator) -> tuple[float, PosteriorDraws]:
    phi = ParameterVector(np.ravel(phi_q), gen.focal_names)
    dataset = gen.simulate(phi, rng)
    posterior = focal_posterior(model, focal, gen, dataset, R, rng)
    inb = posterior_inb_samples(model, focal, posterior, rng)
    return float(np.var(inb, ddof=1)), posterior


def nested_posterior_variance(model: EconomicModel, focal: FocalSubset, gen: DataGenerator,
                              phi_q, R: int, rng: np.random.Generator) -> float:
    """Posterior INB variance after one dataset simulated at ``phi_q``.

    The focal posterior is conjugate when the generator supports it and SIR
    otherwise; ``R`` posterior INB draws give the unbiased variance.
    """
    if int(R) < 2:
        raise ValueError("R must be >= 2")
    return _nested_sample(model, focal, gen, phi_q, int(R), rng)[0]


def average_posterior_variance(sigma2_q) -> float:
    sigma2_q = np.asarray(sigma2_q, dtype=float)
    if sigma2_q.size < 1:
        raise ValueError("need at least one posterior variance")
    return ordered_mean(sigma2_q)


def moment_match(inb_phi, mu_theta: float, sigma2_phi: float, sigma2_theta: float,
                 sigma2_X: float, clamp: bool = True) -> np.ndarray:
    """Rescale ``inb_phi`` around ``mu_theta`` to variance ``sigma2_theta - sigma2_X``."""
    if not sigma2_phi > 0:
        raise ValueError("sigma2_phi must be positive")
    inb_phi = np.asarray(inb_phi, dtype=float)
    radicand = sigma2_theta - sigma2_X
    if radicand < 0:
        if not clamp:
            raise VarianceInflation(
                f"average posterior variance {sigma2_X:.6g} exceeds prior INB variance "
                f"{sigma2_theta:.6g}; the study value is below Monte Carlo resolution")
        radicand = 0.0
    return ((inb_phi - mu_theta) / np.sqrt(sigma2_phi)) * np.sqrt(radicand) + mu_theta


def rescale_inb(cinb: ConditionalInb, mu_theta: float, sigma2_theta: float, sigma2_X: float,
                clamp: bool = True) -> np.ndarray:
    return moment_match(cinb.values, mu_theta, cinb.sigma2_phi, sigma2_theta, sigma2_X, clamp)


def evsi_from_rescaled(inb_star, mu_theta: float) -> float:
    gain = ordered_mean(np.maximum(0.0, np.asarray(inb_star, dtype=float))) - max(0.0, mu_theta)
    return max(0.0, gain)


def evsi_moment_matching(model: EconomicModel, psa: PsaResult, cinb: ConditionalInb,
                         gen: DataGenerator, config: MmConfig | None = None,
                         threads: int | None = None) -> EvsiEstimate:
    """EVSI by moment matching.

    The ``Q`` nested posterior computations run on independent streams
    ``(seed, (STREAM_NESTED, q))`` and are gathered in ``q`` order, so the
    result is identical for any thread count.
    """
    config = config or MmConfig()
    focal = cinb.focal
    if cinb.S != psa.S:
        raise ValueError("conditional INB was not fitted on this PSA")
    gen.check_focal(focal, psa.names)
    Q, R = int(config.Q), int(config.R)
    warnings = []
    if Q < MIN_RECOMMENDED_Q:
        warnings.append(f"Q<30: Q={Q} is below the recommended minimum of "
                        f"{MIN_RECOMMENDED_Q} nested samples")

    mu_theta, sigma2_theta = inb_moments(psa)
    phis = select_quantile_rows(psa, focal, Q)

    def task(q):
        rng = derive_stream(config.seed, (STREAM_NESTED, q))
        try:
            return _nested_sample(model, focal, gen, phis[q], R, rng)
        except DegenerateWeights as exc:
            raise with_context(DegenerateWeights(str(exc), q=q), "nested posterior", q) from exc
        except VoiError as exc:
            raise with_context(exc, "nested posterior", q)

    results = parallel_map(task, range(Q), threads)
    sigma2_q = [s for s, _ in results]
    for q, (_, post) in enumerate(results):
        if post.low_ess:
            warnings.append(f"low ESS: q={q} effective sample size {post.ess:.1f} "
                            f"is below 1% of R={R}")

    sigma2_X = average_posterior_variance(sigma2_q)
    try:
        inb_star = rescale_inb(cinb, mu_theta, sigma2_theta, sigma2_X, clamp=config.clamp_variance)
    except VarianceInflation as exc:
        raise with_context(exc, "rescale")
    if sigma2_X > sigma2_theta:
        warnings.append(f"variance clamped: sigma2_X={sigma2_X:.6g} exceeds "
                        f"sigma2_theta={sigma2_theta:.6g}; estimate set to zero")
    value = evsi_from_rescaled(inb_star, mu_theta)
    bundle = VarianceBundle(mu_theta, sigma2_theta, cinb.sigma2_phi, tuple(sigma2_q), sigma2_X)
    for w in warnings:
        logger.info(w)
    return EvsiEstimate(value=value, method="moment_matching", S=psa.S, Q=Q, R=R,
                        seed=int(config.seed), bundle=bundle, warnings=tuple(warnings))


class MomentMatchingEVSI(BaseEstimator):
    """Moment-matching EVSI with a scikit-learn style interface.

    ``fit`` takes the PSA parameter matrix (and, optionally, its INB values)
    and estimates the EVSI of the study described by ``generator``.

    Parameters
    ----------
    model : EconomicModel
    generator : DataGenerator
    Q : int, default=50
        Number of nested datasets.  A rough guide is the total posterior
        simulation budget divided by ``R``.
    R : int, default=5000
        Posterior INB draws per dataset.
    clamp_variance : bool, default=True
        Report zero instead of raising when the average posterior variance
        exceeds the prior variance.
    seed : int, default=0
    regression : RegressionConfig or None
        Smoother used for the conditional INB.
    threads : int or None
        Workers for the nested computations (0 or None: automatic).

    Attributes
    ----------
    evsi_ : float
    estimate_ : EvsiEstimate
    bundle_ : VarianceBundle
    conditional_inb_ : ConditionalInb
    inb_star_ : ndarray of shape (S,)
    evppi_ : float
    """

    def __init__(self, model=None, generator=None, Q=50, R=5000, clamp_variance=True,
                 seed=0, regression=None, threads=None):
        self.model = model
        self.generator = generator
        self.Q = Q
        self.R = R
        self.clamp_variance = clamp_variance
        self.seed = seed
        self.regression = regression
        self.threads = threads

    def fit(self, X, y=None):
        if self.model is None or self.generator is None:
            raise ValueError("model and generator are required")
        X = check_array(X)
        inb = evaluate_inb(self.model, X) if y is None else check_array(y, ensure_2d=False)
        psa = PsaResult(X, inb, self.model.parameter_names)
        focal = FocalSubset.from_names(self.generator.focal_names, psa.names)
        self.conditional_inb_ = fit_conditional_inb(psa, focal, self.regression or RegressionConfig())
        config = MmConfig(Q=self.Q, R=self.R, clamp_variance=self.clamp_variance, seed=self.seed)
        self.estimate_ = evsi_moment_matching(self.model, psa, self.conditional_inb_,
                                              self.generator, config, threads=self.threads)
        self.bundle_ = self.estimate_.bundle
        self.evsi_ = self.estimate_.value
        self.inb_star_ = rescale_inb(self.conditional_inb_, self.bundle_.mu_theta,
                                     self.bundle_.sigma2_theta, self.bundle_.sigma2_X)
        self.evppi_ = evppi(self.conditional_inb_, self.bundle_.mu_theta)
        self.n_features_in_ = X.shape[1]
        return self
