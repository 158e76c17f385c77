"""Conjugate Gaussian linear model under Zellner's g-prior.

Prior: ``beta | sigma2 ~ N(0, g sigma2 (Xc'Xc)^-1)`` on the slopes of the
centred design ``Xc``, and ``p(beta0, sigma2) = 1 / sigma2``. The evidence is
then available in closed form::

    log m(y) = lgamma((n-1)/2) - (n-1)/2 log(pi SST) - 1/2 log n
               + (n-1-p)/2 log(1+g) - (n-1)/2 log(1 + g (1-R2))
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .fp_basis import K, DesignMatrix


class SingularModelError(ValueError):
    """The design is rank deficient (or too large for the sample)."""


class DegenerateDataError(ValueError):
    """Responses carry no variation to explain."""


def default_g(n: int) -> float:
    """Unit-information g with a floor at ``K**2 = 256``."""
    if n < 3:
        raise ValueError("need n >= 3")
    return float(max(n, K * K))


@dataclass(frozen=True)
class GaussianFit:
    log_marginal: float
    r_squared: float
    p_active: int
    coef_shrunk_mean: np.ndarray
    # upper-triangular L with (Xc'Xc)^-1 = L L'
    coef_scale: np.ndarray
    intercept_mean: float
    sigma2_shape: float
    sigma2_rate: float
    g: float
    n: int
    column_means: np.ndarray
    column_scales: np.ndarray
    terms: tuple[int, ...]

    @property
    def shrinkage(self) -> float:
        return self.g / (1.0 + self.g)


def null_log_marginal(n: int, sst: float) -> float:
    return math.lgamma((n - 1) / 2) - (n - 1) / 2 * math.log(math.pi * sst) - 0.5 * math.log(n)


def fit_gaussian(y, X: DesignMatrix, g: float) -> GaussianFit:
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.columns.shape
    if y.size != n:
        raise ValueError(f"response length {y.size} does not match design rows {n}")
    if g <= 0:
        raise ValueError("g must be positive")
    if not X.rank_ok:
        raise SingularModelError(f"design for terms {X.terms} is rank deficient (rcond={X.rcond:.3g})")
    if n < p + 2:
        raise SingularModelError(f"need n >= p + 2 observations (n={n}, p={p})")

    ybar = float(y.mean())
    yc = y - ybar
    sst = float(yc @ yc)
    if p > 0 and sst == 0.0:
        raise DegenerateDataError("responses are constant")
    # constant responses under the null model: treat as an infinitesimal spread
    sst = max(sst, np.finfo(float).tiny)

    means = X.columns.mean(axis=0)
    if p == 0:
        beta = np.empty(0)
        L = np.empty((0, 0))
        rss = sst
    else:
        Xc = X.columns - means
        Q, R = np.linalg.qr(Xc)
        qty = Q.T @ yc
        resid = yc - Q @ qty
        rss = float(resid @ resid)
        beta = solve_triangular(R, qty)
        L = solve_triangular(R, np.eye(p))
    one_minus_r2 = min(max(rss / sst, 0.0), 1.0)
    r2 = 1.0 - one_minus_r2

    log_bf = (n - 1 - p) / 2 * math.log1p(g) - (n - 1) / 2 * math.log1p(g * one_minus_r2)
    shrink = g / (1.0 + g)
    rate = sst * (1.0 + g * one_minus_r2) / (2.0 * (1.0 + g))
    return GaussianFit(
        log_marginal=null_log_marginal(n, sst) + log_bf,
        r_squared=r2,
        p_active=p,
        coef_shrunk_mean=shrink * beta,
        coef_scale=L,
        intercept_mean=ybar,
        sigma2_shape=(n - 1) / 2,
        sigma2_rate=rate,
        g=float(g),
        n=n,
        column_means=means,
        column_scales=X.column_scales,
        terms=X.terms,
    )


def log_bayes_factor_vs_null(n: int, p: int, r_squared: float, g: float) -> float:
    return (n - 1 - p) / 2 * math.log1p(g) - (n - 1) / 2 * math.log1p(g * (1 - r_squared))


def _centered(fit: GaussianFit, X_new: DesignMatrix) -> np.ndarray:
    if X_new.p != fit.p_active:
        raise ValueError(f"design has {X_new.p} columns, model has {fit.p_active}")
    return X_new.columns - fit.column_means


def posterior_mean_eta(fit: GaussianFit, X_new: DesignMatrix) -> np.ndarray:
    Xc = _centered(fit, X_new)
    return fit.intercept_mean + Xc @ fit.coef_shrunk_mean


def predictive_eta_moments(fit: GaussianFit, X_new: DesignMatrix):
    """Student-t location, scale and degrees of freedom of ``eta(x)`` per row."""
    Xc = _centered(fit, X_new)
    mean = fit.intercept_mean + Xc @ fit.coef_shrunk_mean
    v = np.full(Xc.shape[0], 1.0 / fit.n)
    if fit.p_active:
        v = v + fit.shrinkage * np.sum((Xc @ fit.coef_scale) ** 2, axis=1)
    scale = np.sqrt(fit.sigma2_rate / fit.sigma2_shape * v)
    return mean, scale, 2.0 * fit.sigma2_shape


def sample_eta(fit: GaussianFit, X_new: DesignMatrix, size: int, rng: np.random.Generator) -> np.ndarray:
    """Joint posterior draws of ``eta`` at the rows of ``X_new``, shape ``(size, rows)``."""
    Xc = _centered(fit, X_new)
    sigma2 = fit.sigma2_rate / rng.gamma(fit.sigma2_shape, 1.0, size=size)
    sd = np.sqrt(sigma2)
    b0 = fit.intercept_mean + sd * rng.standard_normal(size) / math.sqrt(fit.n)
    eta = np.repeat(b0[:, None], Xc.shape[0], axis=1)
    if fit.p_active:
        z = rng.standard_normal((size, fit.p_active))
        beta = fit.coef_shrunk_mean + math.sqrt(fit.shrinkage) * sd[:, None] * (z @ fit.coef_scale.T)
        eta += beta @ Xc.T
    return eta


def log_marginal_batch(y, columns: np.ndarray, g: float) -> np.ndarray:
    """Closed-form log evidence for a stack of full-rank designs ``(models, n, p)``.

    Same QR path as :func:`fit_gaussian`, vectorised over models.
    """
    y = np.asarray(y, dtype=float).ravel()
    m, n, p = columns.shape
    yc = y - y.mean()
    sst = float(yc @ yc)
    if p > 0 and sst == 0.0:
        return np.full(m, -np.inf)
    sst = max(sst, np.finfo(float).tiny)
    if p == 0:
        return np.full(m, null_log_marginal(n, sst))
    Xc = columns - columns.mean(axis=1, keepdims=True)
    Q, _ = np.linalg.qr(Xc)
    qty = np.einsum("mnp,n->mp", Q, yc)
    resid = yc[None, :] - np.einsum("mnp,mp->mn", Q, qty)
    one_minus_r2 = np.clip(np.einsum("mn,mn->m", resid, resid) / sst, 0.0, 1.0)
    log_bf = (n - 1 - p) / 2 * math.log1p(g) - (n - 1) / 2 * np.log1p(g * one_minus_r2)
    return null_log_marginal(n, sst) + log_bf
