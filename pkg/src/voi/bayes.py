"""Posterior updating of the focal parameters given one simulated dataset.

Built-in generators declare conjugacy and update in closed form; anything
else goes through sampling-importance-resampling (SIR) over a pool of prior
draws.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import FocalSubset, FutureDataset, ParameterVector
from .exceptions import DegenerateWeights, InvalidCount, UnsupportedDependence
from .psa import EconomicModel, evaluate_inb

__all__ = [
    "DataGenerator",
    "FlatGenerator",
    "PosteriorDraws",
    "ESS_WARNING_FRACTION",
    "beta_binomial_update",
    "dirichlet_multinomial_update",
    "sir_posterior",
    "focal_posterior",
    "posterior_inb_samples",
]

ESS_WARNING_FRACTION = 0.01
SIR_POOL_FACTOR = 10


class DataGenerator(abc.ABC):
    """Sampling distribution of a future study given the focal parameters.

    ``focal_names`` lists the model inputs the data depend on, in the column
    order used by :meth:`simulate` and :meth:`log_likelihood`.
    """

    focal_names: tuple[str, ...] = ()
    design: Mapping = {}
    #: Set by generators that implement :meth:`conjugate_posterior`.
    conjugate: bool = False

    @abc.abstractmethod
    def simulate(self, phi: ParameterVector, rng: np.random.Generator) -> FutureDataset:
        """Draw one dataset given the focal values ``phi``."""

    @abc.abstractmethod
    def log_likelihood(self, phi, dataset: FutureDataset):
        """Log-likelihood of ``dataset``.

        ``phi`` may be a :class:`ParameterVector` (returns a float) or a
        ``(m, k)`` array of focal rows (returns an array of length ``m``).
        """

    def conjugate_posterior(self, dataset: FutureDataset, R: int,
                            rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form posterior")

    def check_focal(self, focal: FocalSubset, names: Sequence[str]) -> None:
        got = focal.names(names)
        if tuple(got) != tuple(self.focal_names):
            raise ValueError(f"generator expects focal parameters {self.focal_names}, got {got}")


class FlatGenerator(DataGenerator):
    """A study that carries no information: constant likelihood, empty data."""

    def __init__(self, focal_names: Sequence[str]):
        self.focal_names = tuple(focal_names)
        self.design = {"n": 0}

    def simulate(self, phi, rng):
        return FutureDataset({}, dict(self.design))

    def log_likelihood(self, phi, dataset):
        if isinstance(phi, ParameterVector):
            return 0.0
        return np.zeros(np.atleast_2d(phi).shape[0])


@dataclass(frozen=True)
class PosteriorDraws:
    """``R`` posterior draws of the focal parameters (columns in focal order)."""

    params: np.ndarray
    ess: float | None = None
    low_ess: bool = False

    def __post_init__(self):
        params = np.array(self.params, dtype=float)
        if params.ndim == 1:
            params = params[:, None]
        if params.shape[0] < 2:
            raise ValueError("need at least two posterior draws")
        if not np.all(np.isfinite(params)):
            raise ValueError("posterior draws must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def R(self) -> int:
        return self.params.shape[0]


def beta_binomial_update(alpha: float, beta: float, n: int, x: int) -> tuple[float, float]:
    """Beta(alpha, beta) prior, x successes out of n: posterior hyperparameters."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("Beta hyperparameters must be positive")
    if n < 0 or x < 0 or x > n:
        raise InvalidCount(f"need 0 <= x <= n, got x={x}, n={n}")
    return alpha + x, beta + n - x


def dirichlet_multinomial_update(alpha, counts) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    counts = np.asarray(counts)
    if alpha.ndim != 1 or alpha.shape != counts.shape or alpha.size < 2:
        raise InvalidCount("alpha and counts must be equal-length vectors of length >= 2")
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet hyperparameters must be positive")
    if np.any(counts < 0):
        raise InvalidCount("counts must be non-negative")
    return alpha + counts


def sir_posterior(prior_draws, gen: DataGenerator, dataset: FutureDataset, R: int,
                  rng: np.random.Generator) -> PosteriorDraws:
    """Resample ``R`` prior rows with probability proportional to their likelihood.

    Pools of at least ``10 * R`` prior draws are recommended.  The effective
    sample size of the importance weights is reported; when it falls below
    one percent of ``R`` the result is flagged ``low_ess``.
    """
    prior_draws = np.asarray(prior_draws, dtype=float)
    if prior_draws.ndim == 1:
        prior_draws = prior_draws[:, None]
    logw = np.asarray(gen.log_likelihood(prior_draws, dataset), dtype=float)
    if logw.shape != (prior_draws.shape[0],):
        raise ValueError("log_likelihood must return one value per prior row")
    logw = np.where(np.isnan(logw), -np.inf, logw)
    if not np.any(np.isfinite(logw)) or np.any(logw == np.inf):
        raise DegenerateWeights("all importance weights are zero or non-finite")
    w = np.exp(logw - np.max(logw))
    total = w.sum()
    p = w / total
    ess = float(total**2 / np.sum(w**2))
    idx = rng.choice(prior_draws.shape[0], size=int(R), replace=True, p=p)
    return PosteriorDraws(prior_draws[idx], ess=ess, low_ess=ess < ESS_WARNING_FRACTION * R)


def focal_posterior(model: EconomicModel, focal: FocalSubset, gen: DataGenerator,
                    dataset: FutureDataset, R: int, rng: np.random.Generator) -> PosteriorDraws:
    """Closed-form update when the generator offers one, otherwise SIR on fresh prior draws."""
    if gen.conjugate:
        return PosteriorDraws(gen.conjugate_posterior(dataset, R, rng))
    pool = model.sample_prior(rng, SIR_POOL_FACTOR * R)[:, list(focal.indices)]
    return sir_posterior(pool, gen, dataset, R, rng)


def posterior_inb_samples(model: EconomicModel, focal: FocalSubset, posterior: PosteriorDraws,
                          rng: np.random.Generator) -> np.ndarray:
    """INB for each posterior focal draw, with non-focal inputs drawn from their prior.

    Because the priors are independent, the data leave the non-focal
    parameters at their prior, so pairing each posterior focal draw with a
    fresh prior draw of the rest samples the joint posterior.
    """
    if not model.independent_priors:
        raise UnsupportedDependence("posterior INB needs focal and non-focal priors to be independent")
    if posterior.params.shape[1] != len(focal):
        raise ValueError("posterior draws do not match the focal subset")
    params = np.array(model.sample_prior(rng, posterior.R), dtype=float)
    params[:, list(focal.indices)] = posterior.params
    return evaluate_inb(model, params)
