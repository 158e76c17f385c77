"""Model-averaged dose-response curves and the posterior of the optimal dose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import glm_laplace, linear_model
from .data import DoseResponseData
from .fp_basis import K, ModelIndex, build_design

QUANTILE_LEVELS = (0.025, 0.5, 0.975)
ESTIMATORS = ("pmedian", "pmean", "hpm")
DEFAULT_DRAWS = 4000


@dataclass(frozen=True)
class DoseGrid:
    x_min: float = 0.4
    x_max: float = 30.0
    points: int = 512

    def __post_init__(self):
        if self.points < 1:
            raise ValueError("grid needs at least one point")
        if not 0 < self.x_min <= self.x_max:
            raise ValueError("grid bounds must satisfy 0 < x_min <= x_max")
        if self.points > 1 and self.x_min == self.x_max:
            raise ValueError("a multi-point grid needs x_min < x_max")

    @property
    def values(self) -> np.ndarray:
        if self.points == 1:
            return np.array([self.x_min])
        return np.linspace(self.x_min, self.x_max, self.points)

    @property
    def step(self) -> float:
        return 0.0 if self.points == 1 else (self.x_max - self.x_min) / (self.points - 1)


def optimum_from_curve(curve, grid: DoseGrid) -> float:
    """Dose at the first grid index attaining the curve maximum."""
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (grid.points,):
        raise ValueError(f"curve has shape {curve.shape}, grid has {grid.points} points")
    return float(grid.values[int(np.argmax(curve))])


@dataclass(frozen=True)
class CurveDraws:
    """Posterior draws of the linear predictor on a grid."""

    eta: np.ndarray  # (draws, grid.points)
    model_codes: np.ndarray  # model sampled for each draw
    grid: DoseGrid
    family: str

    def response(self) -> np.ndarray:
        return expit(self.eta) if self.family == "bernoulli" else self.eta


@dataclass(frozen=True)
class CurveSummary:
    grid: DoseGrid
    mean: np.ndarray
    quantiles: dict[float, np.ndarray]
    family: str = "gaussian"
    scale: str = "linear-predictor"

    @property
    def median(self) -> np.ndarray:
        return self.quantiles[0.5]


@dataclass(frozen=True)
class OptimumPosterior:
    samples: np.ndarray
    point: float
    cri_low: float
    cri_high: float
    estimator: str = "pmedian"


def _model_fits(ensemble, data: DoseResponseData, codes, scorer=None):
    from .model_search import ModelScorer

    if scorer is None:
        scorer = ModelScorer(data, g=ensemble.g, max_terms=K)
    fits = {}
    for c in codes:
        fit = scorer.fit(int(c))
        if fit is None:
            raise ValueError(f"model {ModelIndex(int(c))} cannot be fitted on these data")
        fits[int(c)] = fit
    return fits


def _grid_design(fit, grid: DoseGrid):
    return build_design(grid.values, ModelIndex.from_terms(fit.terms), column_scales=fit.column_scales)


def _sample(fit, X, size, rng):
    if isinstance(fit, linear_model.GaussianFit):
        return linear_model.sample_eta(fit, X, size, rng)
    return glm_laplace.sample_eta(fit, X, size, rng)


def posterior_curve_draws(
    ensemble,
    data: DoseResponseData,
    grid: DoseGrid,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    scorer=None,
) -> CurveDraws:
    """Mixture draws: a model by its pmp, then ``eta`` from that model's posterior."""
    if draws < 1:
        raise ValueError("draws must be positive")
    if ensemble.family != data.family:
        raise ValueError("ensemble and data belong to different families")
    rng = np.random.default_rng(seed)
    codes = np.array([e.model.code for e in ensemble.entries], dtype=np.int64)
    pmp = np.array([e.pmp for e in ensemble.entries])
    picked = codes[rng.choice(codes.size, size=draws, p=pmp / pmp.sum())]
    used = np.unique(picked)
    fits = _model_fits(ensemble, data, used, scorer)
    eta = np.empty((draws, grid.points))
    for c in used:
        rows = np.flatnonzero(picked == c)
        fit = fits[int(c)]
        eta[rows] = _sample(fit, _grid_design(fit, grid), rows.size, rng)
    return CurveDraws(eta, picked, grid, data.family)


def curve_summary(draws, grid: DoseGrid | None = None, family: str | None = None,
                  scale: str = "linear-predictor") -> CurveSummary:
    """Pointwise mean and 2.5/50/97.5% quantiles of a draw matrix."""
    if isinstance(draws, CurveDraws):
        grid = grid or draws.grid
        family = family or draws.family
        mat = draws.response() if scale == "response" else draws.eta
    else:
        mat = np.asarray(draws, dtype=float)
    if mat.ndim != 2:
        raise ValueError("expected a (draws, points) matrix")
    if grid is None:
        raise ValueError("grid required for a raw draw matrix")
    q = np.quantile(mat, QUANTILE_LEVELS, axis=0)
    return CurveSummary(grid, mat.mean(axis=0), dict(zip(QUANTILE_LEVELS, q)), family or "gaussian", scale)


def model_mean_curve(fit, grid: DoseGrid) -> np.ndarray:
    X = _grid_design(fit, grid)
    if isinstance(fit, linear_model.GaussianFit):
        return linear_model.posterior_mean_eta(fit, X)
    return glm_laplace.map_eta(fit, X)


def hpm_curve(ensemble, data: DoseResponseData, grid: DoseGrid, scorer=None) -> np.ndarray:
    """Posterior mean of ``eta`` under the highest posterior mass model alone."""
    from .model_search import hpm

    best = hpm(ensemble)
    return model_mean_curve(_model_fits(ensemble, data, [best.code], scorer)[best.code], grid)


def optimum_posterior(draws, grid: DoseGrid | None = None, estimator: str = "pmedian",
                      curve=None) -> OptimumPosterior:
    """Per-draw argmax doses plus a point estimate from the chosen curve.

    ``estimator='hpm'`` needs the HPM mean curve passed as ``curve``.
    """
    if isinstance(draws, CurveDraws):
        grid = grid or draws.grid
        mat = draws.eta
    else:
        mat = np.asarray(draws, dtype=float)
    if grid is None:
        raise ValueError("grid required for a raw draw matrix")
    samples = grid.values[np.argmax(mat, axis=1)]
    if estimator == "pmedian":
        point_curve = np.median(mat, axis=0)
    elif estimator == "pmean":
        point_curve = mat.mean(axis=0)
    elif estimator == "hpm":
        if curve is None:
            raise ValueError("estimator 'hpm' needs the HPM curve")
        point_curve = curve
    else:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    lo, hi = np.quantile(samples, [0.025, 0.975])
    return OptimumPosterior(samples, optimum_from_curve(point_curve, grid), float(lo), float(hi), estimator)


@dataclass(frozen=True)
class BfpResult:
    ensemble: object
    draws: CurveDraws
    hpm_curve: np.ndarray

    def summary(self, scale: str = "linear-predictor") -> CurveSummary:
        return curve_summary(self.draws, scale=scale)

    def optimum(self, estimator: str = "pmedian") -> OptimumPosterior:
        return optimum_posterior(self.draws, estimator=estimator, curve=self.hpm_curve)


def fit_bfp(
    data: DoseResponseData,
    grid: DoseGrid | None = None,
    search: str = "mjmcmc",
    g: float | str | None = None,
    iterations: int | None = None,
    seed: int = 0,
    draws: int = DEFAULT_DRAWS,
    max_terms: int | None = None,
) -> BfpResult:
    """Search the model space, then draw model-averaged curves on ``grid``.

    ``g='eb'`` selects g by empirical Bayes over the null and single-term models.
    """
    from .model_search import DEFAULT_ITERATIONS, ModelScorer, empirical_bayes_g, enumerate_models, mjmcmc

    grid = grid or DoseGrid()
    if g == "eb":
        g = empirical_bayes_g(data, max_terms=max_terms)
    scorer = ModelScorer(data, g=g, max_terms=max_terms)
    if search == "enumerate":
        ens = enumerate_models(data, scorer=scorer)
    elif search == "mjmcmc":
        ens = mjmcmc(data, iterations=iterations or DEFAULT_ITERATIONS, seed=seed, scorer=scorer)
    else:
        raise ValueError(f"unknown search mode {search!r}")
    cd = posterior_curve_draws(ens, data, grid, draws=draws, seed=seed, scorer=scorer)
    return BfpResult(ens, cd, hpm_curve(ens, data, grid, scorer=scorer))
