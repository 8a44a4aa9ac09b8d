"""Two-treatment cure-probability model with a single-arm binomial trial."""

from __future__ import annotations

import numpy as np
from scipy import stats

from ..bayes import DataGenerator, beta_binomial_update
from ..core import FutureDataset, ParameterVector
from ..exceptions import InvalidCount
from ..psa import EconomicModel

__all__ = ["ToyModel", "ToyGenerator", "toy_inb", "toy_generator"]


class ToyModel(EconomicModel):
    """INB = wtp * (pi1 - pi2) - delta.

    pi1 ~ Beta(3, 4), pi2 ~ Beta(4, 3) and the incremental cost
    delta ~ Normal(mean 3, variance 20).
    """

    parameter_names = ("pi1", "pi2", "delta")

    def __init__(self, wtp=100.0, pi1_prior=(3.0, 4.0), pi2_prior=(4.0, 3.0),
                 delta_mean=3.0, delta_var=20.0):
        self.wtp = float(wtp)
        self.pi1_prior = tuple(map(float, pi1_prior))
        self.pi2_prior = tuple(map(float, pi2_prior))
        self.delta_mean = float(delta_mean)
        self.delta_var = float(delta_var)

    def sample_prior(self, rng, size):
        out = np.empty((int(size), 3))
        out[:, 0] = rng.beta(*self.pi1_prior, size=size)
        out[:, 1] = rng.beta(*self.pi2_prior, size=size)
        out[:, 2] = rng.normal(self.delta_mean, np.sqrt(self.delta_var), size=size)
        return out

    def inb_array(self, params):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        return self.wtp * (params[:, 0] - params[:, 1]) - params[:, 2]

    # closed-form prior moments, used by tests and the analytic oracle
    @property
    def prior_mean_inb(self) -> float:
        a1, b1 = self.pi1_prior
        a2, b2 = self.pi2_prior
        return self.wtp * (a1 / (a1 + b1) - a2 / (a2 + b2)) - self.delta_mean

    @staticmethod
    def _beta_var(a, b):
        return a * b / ((a + b) ** 2 * (a + b + 1))

    @property
    def prior_var_inb(self) -> float:
        return (self.wtp**2 * (self._beta_var(*self.pi1_prior) + self._beta_var(*self.pi2_prior))
                + self.delta_var)

    @property
    def psi_var_inb(self) -> float:
        """INB variance contributed by pi2 and delta alone."""
        return self.wtp**2 * self._beta_var(*self.pi2_prior) + self.delta_var


_DEFAULT = ToyModel()


def toy_inb(pv: ParameterVector) -> float:
    return _DEFAULT.wtp * (pv["pi1"] - pv["pi2"]) - pv["delta"]


class ToyGenerator(DataGenerator):
    """X ~ Binomial(n, pi1): responders among n patients given treatment 1."""

    focal_names = ("pi1",)
    conjugate = True

    def __init__(self, n: int, model: ToyModel | None = None):
        if int(n) < 0:
            raise ValueError("n must be >= 0")
        self.n = int(n)
        self.model = model or ToyModel()
        self.design = {"n": self.n}

    def simulate(self, phi, rng):
        p = float(phi["pi1"]) if isinstance(phi, ParameterVector) else float(np.ravel(phi)[0])
        x = int(rng.binomial(self.n, min(max(p, 0.0), 1.0)))
        return FutureDataset({"x": x}, dict(self.design))

    def _x(self, dataset):
        x = int(dataset.outcomes["x"])
        if not 0 <= x <= self.n:
            raise InvalidCount(f"x={x} outside [0, {self.n}]")
        return x

    def log_likelihood(self, phi, dataset):
        x = self._x(dataset)
        if isinstance(phi, ParameterVector):
            return float(stats.binom.logpmf(x, self.n, phi["pi1"]))
        p = np.atleast_2d(np.asarray(phi, dtype=float))[:, 0]
        return stats.binom.logpmf(x, self.n, p)

    def posterior_hyperparameters(self, dataset) -> tuple[float, float]:
        return beta_binomial_update(*self.model.pi1_prior, self.n, self._x(dataset))

    def conjugate_posterior(self, dataset, R, rng):
        a, b = self.posterior_hyperparameters(dataset)
        return rng.beta(a, b, size=int(R))[:, None]


def toy_generator(n: int = 20, model: ToyModel | None = None) -> ToyGenerator:
    return ToyGenerator(n, model)
