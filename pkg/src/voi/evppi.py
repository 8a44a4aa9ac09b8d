"""Conditional INB given the focal parameters, by additive spline regression.

The INB of each PSA row is regressed on the focal columns; the fitted values
estimate ``E[INB | phi]`` with the non-focal inputs averaged out.  The same
fitted values give the partial perfect-information value (EVPPI).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import FocalSubset, PsaResult, ordered_mean
from .exceptions import DegenerateFocal, FocalDimension

__all__ = [
    "RegressionConfig",
    "ConditionalInb",
    "AdditiveSplineRegressor",
    "cr_spline_basis",
    "fit_conditional_inb",
    "evppi",
]


def _cr_matrices(knots):
    """Map from knot values to knot second derivatives, and the wiggliness penalty."""
    k = knots.size
    h = np.diff(knots)
    if k < 3:
        return np.zeros((k, k)), np.zeros((k, k))
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < k - 3:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    BinvD = np.linalg.solve(B, D)
    F = np.vstack([np.zeros(k), BinvD, np.zeros(k)])
    S = D.T @ BinvD
    return F, (S + S.T) / 2.0


def cr_spline_basis(x, knots):
    """Natural cubic regression spline basis, parameterised by values at the knots.

    Returns the ``(n, k)`` design matrix and the ``(k, k)`` penalty matrix for
    the integrated squared second derivative.  Outside the knot range the
    spline continues linearly.
    """
    x = np.asarray(x, dtype=float).ravel()
    knots = np.asarray(knots, dtype=float)
    k = knots.size
    F, S = _cr_matrices(knots)
    h = np.diff(knots)
    X = np.zeros((x.size, k))
    eye = np.eye(k)

    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, k - 2)
    inside = (x >= knots[0]) & (x <= knots[-1])
    xi = x[inside]
    ji = j[inside]
    hj = h[ji]
    u = knots[ji + 1] - xi
    v = xi - knots[ji]
    am, ap = u / hj, v / hj
    cm = (u**3 / hj - hj * u) / 6.0
    cp = (v**3 / hj - hj * v) / 6.0
    X[inside] = (am[:, None] * eye[ji] + ap[:, None] * eye[ji + 1]
                 + cm[:, None] * F[ji] + cp[:, None] * F[ji + 1])

    lo = x < knots[0]
    if lo.any():
        slope = (eye[1] - eye[0]) / h[0] - h[0] / 6.0 * F[1]
        X[lo] = eye[0] + (x[lo] - knots[0])[:, None] * slope
    hi = x > knots[-1]
    if hi.any():
        slope = (eye[k - 1] - eye[k - 2]) / h[-1] + h[-1] / 6.0 * F[k - 2]
        X[hi] = eye[k - 1] + (x[hi] - knots[-1])[:, None] * slope
    return X, S


class AdditiveSplineRegressor(RegressorMixin, BaseEstimator):
    """Additive penalised regression: one cubic regression spline per column.

    Each term is constrained to sum to zero over the training data, so the
    intercept equals the response mean and fitted values preserve it.  A
    single smoothing parameter, shared by all terms after scaling each penalty
    to its design block, is picked by generalised cross-validation over a
    fixed log-spaced grid.

    Parameters
    ----------
    n_knots : int, default=10
        Knots per term, placed at evenly spaced quantiles of the column.
    n_lambdas : int, default=20
        Size of the smoothing-parameter grid.
    lambda_range : tuple of float, default=(1e-8, 1e4)
        End points of the grid.
    max_terms : int, default=4
        Refuse inputs with more columns than this.

    Attributes
    ----------
    intercept_ : float
    coef_ : ndarray
        Coefficients of the constrained basis, all terms stacked.
    lambda_ : float
        Selected smoothing parameter.
    gcv_scores_ : ndarray of shape (n_lambdas,)
    edf_ : float
        Effective degrees of freedom at ``lambda_`` (intercept included).
    """

    def __init__(self, n_knots=10, n_lambdas=20, lambda_range=(1e-8, 1e4), max_terms=4):
        self.n_knots = n_knots
        self.n_lambdas = n_lambdas
        self.lambda_range = lambda_range
        self.max_terms = max_terms

    def _term_design(self, X):
        blocks = []
        for col, (knots, Z, centre) in enumerate(self.terms_):
            B, _ = cr_spline_basis(X[:, col], knots)
            blocks.append(B @ Z - centre)
        return np.hstack(blocks) if blocks else np.zeros((X.shape[0], 0))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        n, m = X.shape
        if m > self.max_terms:
            raise FocalDimension(f"{m} focal columns exceed the cap of {self.max_terms} additive terms")
        if self.n_knots < 2:
            raise ValueError("n_knots must be >= 2")

        self.terms_ = []
        penalties = []
        for col in range(m):
            x = X[:, col]
            if np.ptp(x) == 0:
                raise DegenerateFocal(f"focal column {col} is constant")
            knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, self.n_knots)))
            B, S = cr_spline_basis(x, knots)
            # sum-to-zero constraint: Z spans the null space of the column sums
            q, _ = np.linalg.qr(B.sum(axis=0)[:, None], mode="complete")
            Z = q[:, 1:]
            BZ = B @ Z
            centre = BZ.mean(axis=0)
            BZ = BZ - centre
            SZ = Z.T @ S @ Z
            snorm = np.linalg.norm(SZ)
            if snorm > 0:
                SZ = SZ * (np.linalg.norm(BZ.T @ BZ) / snorm)
            self.terms_.append((knots, Z, centre))
            penalties.append(SZ)

        Xt = self._term_design(X)
        p = Xt.shape[1]
        S = np.zeros((p, p))
        pos = 0
        for SZ in penalties:
            d = SZ.shape[0]
            S[pos:pos + d, pos:pos + d] = SZ
            pos += d

        self.intercept_ = float(np.mean(y))
        yc = y - self.intercept_
        XtX = Xt.T @ Xt
        Xty = Xt.T @ yc
        lambdas = np.geomspace(self.lambda_range[0], self.lambda_range[1], self.n_lambdas)
        scores = np.empty(lambdas.size)
        fits = []
        for i, lam in enumerate(lambdas):
            M = XtX + lam * S
            coef = np.linalg.lstsq(M, Xty, rcond=1e-12)[0]
            edf = 1.0 + float(np.trace(np.linalg.lstsq(M, XtX, rcond=1e-12)[0]))
            rss = float(np.sum((yc - Xt @ coef) ** 2))
            scores[i] = n * rss / max(n - edf, 1.0) ** 2
            fits.append((coef, edf))
        best = int(np.argmin(scores))
        self.coef_, self.edf_ = fits[best]
        self.lambda_ = float(lambdas[best])
        self.gcv_scores_ = scores
        self.n_features_in_ = m
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return self.intercept_ + self._term_design(X) @ self.coef_


@dataclass(frozen=True)
class RegressionConfig:
    n_knots: int = 10
    n_lambdas: int = 20
    max_terms: int = 4

    def regressor(self) -> AdditiveSplineRegressor:
        return AdditiveSplineRegressor(n_knots=self.n_knots, n_lambdas=self.n_lambdas,
                                       max_terms=self.max_terms)


@dataclass(frozen=True)
class ConditionalInb:
    """Fitted ``E[INB | phi]`` for every PSA row, and its sample variance."""

    values: np.ndarray
    focal: FocalSubset
    sigma2_phi: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values, focal: FocalSubset) -> "ConditionalInb":
        values = np.asarray(values, dtype=float)
        return cls(values, focal, float(np.var(values, ddof=1)))

    @property
    def S(self) -> int:
        return self.values.size


def fit_conditional_inb(psa: PsaResult, focal: FocalSubset,
                        config: RegressionConfig | None = None) -> ConditionalInb:
    """Regress the PSA INB on the focal columns; return fitted values per row."""
    config = config or RegressionConfig()
    if focal.n_params != len(psa.names):
        raise ValueError("focal subset does not match the PSA's parameters")
    if len(focal) > config.max_terms:
        raise FocalDimension(f"{len(focal)} focal columns exceed the cap of {config.max_terms}")
    if psa.S < 10 * len(focal):
        raise ValueError(f"need S >= {10 * len(focal)} for {len(focal)} focal columns")
    reg = config.regressor().fit(psa.focal_columns(focal), psa.inb)
    return ConditionalInb.from_values(reg.predict(psa.focal_columns(focal)), focal)


def evppi(cinb: ConditionalInb, mu_theta: float) -> float:
    """Mean of ``max(0, INB_phi)`` minus ``max(0, mu_theta)``, floored at zero."""
    gain = ordered_mean(np.maximum(0.0, cinb.values)) - max(0.0, float(mu_theta))
    return max(0.0, gain)
