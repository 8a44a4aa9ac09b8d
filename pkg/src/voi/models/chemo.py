"""Chemotherapy side-effect model: a four-state Markov cohort per treatment arm.

The arms differ only in the probability of side effects.  A patient with
side effects enters home care and moves weekly between home care, hospital,
recovered and dead (the last two absorbing); everybody else stays well for
the whole horizon.  The hyperparameters live in ``chemo_params.json``.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources

import numpy as np
from scipy import special, stats

from ..bayes import DataGenerator, beta_binomial_update, dirichlet_multinomial_update
from ..core import FutureDataset, ParameterVector
from ..exceptions import InvalidCount, ModelEvaluation
from ..psa import EconomicModel

__all__ = ["ChemoModel", "ChemoTrialGenerator", "chemo_inb", "chemo_generator",
           "load_chemo_params", "STATES"]

STATES = ("home_care", "hospital", "recovered", "dead")
_ROW_TOL = 1e-12


def load_chemo_params() -> dict:
    text = resources.files(__package__).joinpath("chemo_params.json").read_text(encoding="utf-8")
    return json.loads(text)


def _row_names(row):
    short = ("home", "hosp", "rec", "dead")
    return tuple(f"tr_{row}_{s}" for s in short)


class ChemoModel(EconomicModel):
    parameter_names = (
        "p_se_soc", "p_se_new",
        *_row_names("home"), *_row_names("hosp"),
        "c_home", "c_hosp", "u_home", "u_hosp",
    )

    def __init__(self, params: dict | None = None):
        self.config = params if params is not None else load_chemo_params()
        cfg = self.config
        self.wtp = float(cfg["wtp"])
        self.cycles = int(cfg["cycles"])
        self.cycle_length = float(cfg["cycle_length_years"])
        self.u_recovered = float(cfg["utility_recovered"])
        self.priors = cfg["priors"]

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def sample_prior(self, rng, size):
        pr = self.priors
        size = int(size)
        cols = [
            rng.beta(pr["p_se_soc"]["a"], pr["p_se_soc"]["b"], size=size)[:, None],
            rng.beta(pr["p_se_new"]["a"], pr["p_se_new"]["b"], size=size)[:, None],
            rng.dirichlet(pr["tr_home"]["alpha"], size=size),
            rng.dirichlet(pr["tr_hosp"]["alpha"], size=size),
            rng.gamma(pr["c_home"]["shape"], pr["c_home"]["scale"], size=size)[:, None],
            rng.gamma(pr["c_hosp"]["shape"], pr["c_hosp"]["scale"], size=size)[:, None],
            rng.beta(pr["u_home"]["a"], pr["u_home"]["b"], size=size)[:, None],
            rng.beta(pr["u_hosp"]["a"], pr["u_hosp"]["b"], size=size)[:, None],
        ]
        return np.hstack(cols)

    def transition_matrices(self, params) -> np.ndarray:
        params = np.atleast_2d(np.asarray(params, dtype=float))
        n = params.shape[0]
        P = np.zeros((n, 4, 4))
        P[:, 0, :] = params[:, 2:6]
        P[:, 1, :] = params[:, 6:10]
        P[:, 2, 2] = 1.0
        P[:, 3, 3] = 1.0
        rows = P[:, :2, :]
        bad = (np.any(rows < 0, axis=(1, 2))
               | np.any(np.abs(rows.sum(axis=2) - 1.0) > _ROW_TOL, axis=1))
        if bad.any():
            raise ModelEvaluation("transition row is not a probability vector",
                                  row=int(np.flatnonzero(bad)[0]))
        return P

    def cohort_trace(self, params) -> np.ndarray:
        """State occupancy of the side-effect cohort, shape ``(n, cycles + 1, 4)``."""
        P = self.transition_matrices(params)
        trace = np.zeros((P.shape[0], self.cycles + 1, 4))
        trace[:, 0, 0] = 1.0
        for t in range(self.cycles):
            trace[:, t + 1] = np.einsum("ni,nij->nj", trace[:, t], P)
        return trace

    def side_effect_burden(self, params):
        """Per-patient (QALY loss, cost) of having side effects, over the horizon."""
        params = np.atleast_2d(np.asarray(params, dtype=float))
        occupancy = self.cohort_trace(params)[:, :self.cycles, :]
        n = params.shape[0]
        util = np.column_stack([params[:, 12], params[:, 13],
                                np.full(n, self.u_recovered), np.zeros(n)])
        cost = np.column_stack([params[:, 10], params[:, 11], np.zeros(n), np.zeros(n)])
        qaly_se = np.einsum("ntk,nk->n", occupancy, util) * self.cycle_length
        qaly_well = self.cycles * self.u_recovered * self.cycle_length
        cost_se = np.einsum("ntk,nk->n", occupancy, cost)
        return qaly_well - qaly_se, cost_se

    def inb_array(self, params):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        qaly_loss, cost = self.side_effect_burden(params)
        # new arm minus standard of care; only the side-effect rate differs
        fewer = params[:, 0] - params[:, 1]
        return self.wtp * fewer * qaly_loss + fewer * cost


def chemo_inb(pv: ParameterVector, model: ChemoModel | None = None) -> float:
    return (model or ChemoModel()).inb(pv)


class ChemoTrialGenerator(DataGenerator):
    """Two-arm trial of ``n_per_arm`` patients each.

    Outcomes are the side-effect count in each arm, then the one-week
    transitions out of home care of every patient with side effects, then
    the one-week transitions of those who went to hospital.  Transition
    rows are renormalised before use, since per-column quantiles of a
    Dirichlet row need not sum to one.
    """

    conjugate = True

    def __init__(self, n_per_arm: int = 150, model: ChemoModel | None = None):
        if int(n_per_arm) < 0:
            raise ValueError("n_per_arm must be >= 0")
        self.n_per_arm = int(n_per_arm)
        self.model = model or ChemoModel()
        self.focal_names = self.model.parameter_names[:10]
        self.design = {"n_per_arm": self.n_per_arm}

    @staticmethod
    def _split(phi):
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        home = phi[:, 2:6] / phi[:, 2:6].sum(axis=1, keepdims=True)
        hosp = phi[:, 6:10] / phi[:, 6:10].sum(axis=1, keepdims=True)
        return phi[:, 0], phi[:, 1], home, hosp

    def simulate(self, phi, rng):
        values = phi.values if isinstance(phi, ParameterVector) else np.ravel(phi)
        p_soc, p_new, home, hosp = self._split(values[:10])
        n = self.n_per_arm
        x_soc = int(rng.binomial(n, p_soc[0]))
        x_new = int(rng.binomial(n, p_new[0]))
        from_home = rng.multinomial(x_soc + x_new, home[0])
        from_hosp = rng.multinomial(int(from_home[1]), hosp[0])
        return FutureDataset(
            {"x_soc": x_soc, "x_new": x_new,
             "from_home": tuple(int(c) for c in from_home),
             "from_hosp": tuple(int(c) for c in from_hosp)},
            dict(self.design),
        )

    def _counts(self, dataset):
        o = dataset.outcomes
        x_soc, x_new = int(o["x_soc"]), int(o["x_new"])
        from_home = np.asarray(o["from_home"], dtype=int)
        from_hosp = np.asarray(o["from_hosp"], dtype=int)
        n = self.n_per_arm
        if not (0 <= x_soc <= n and 0 <= x_new <= n):
            raise InvalidCount("side-effect counts outside [0, n_per_arm]")
        if from_home.shape != (4,) or from_hosp.shape != (4,):
            raise InvalidCount("transition rows must have four counts")
        if np.any(from_home < 0) or np.any(from_hosp < 0):
            raise InvalidCount("negative transition count")
        if from_home.sum() != x_soc + x_new or from_hosp.sum() != from_home[1]:
            raise InvalidCount("transition counts do not match the at-risk patients")
        return x_soc, x_new, from_home, from_hosp

    def log_likelihood(self, phi, dataset):
        x_soc, x_new, from_home, from_hosp = self._counts(dataset)
        scalar = isinstance(phi, ParameterVector)
        values = phi.values[None, :10] if scalar else np.atleast_2d(np.asarray(phi, dtype=float))
        p_soc, p_new, home, hosp = self._split(values)
        n = self.n_per_arm
        ll = stats.binom.logpmf(x_soc, n, p_soc) + stats.binom.logpmf(x_new, n, p_new)
        for counts, probs in ((from_home, home), (from_hosp, hosp)):
            ll = ll + (special.gammaln(counts.sum() + 1) - special.gammaln(counts + 1).sum()
                       + special.xlogy(counts, probs).sum(axis=1))
        return float(ll[0]) if scalar else ll

    def conjugate_posterior(self, dataset, R, rng):
        x_soc, x_new, from_home, from_hosp = self._counts(dataset)
        pr = self.model.priors
        n = self.n_per_arm
        R = int(R)
        a_soc = beta_binomial_update(pr["p_se_soc"]["a"], pr["p_se_soc"]["b"], n, x_soc)
        a_new = beta_binomial_update(pr["p_se_new"]["a"], pr["p_se_new"]["b"], n, x_new)
        return np.hstack([
            rng.beta(*a_soc, size=R)[:, None],
            rng.beta(*a_new, size=R)[:, None],
            rng.dirichlet(dirichlet_multinomial_update(pr["tr_home"]["alpha"], from_home), size=R),
            rng.dirichlet(dirichlet_multinomial_update(pr["tr_hosp"]["alpha"], from_hosp), size=R),
        ])


def chemo_generator(n_per_arm: int = 150, model: ChemoModel | None = None) -> ChemoTrialGenerator:
    return ChemoTrialGenerator(n_per_arm, model)
