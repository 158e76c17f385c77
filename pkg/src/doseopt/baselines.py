"""Reference curve estimators: RBF Gaussian process and local linear LOESS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .bma import DoseGrid
from .data import DoseResponseData

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class GpConfig:
    """Hyperparameter grids for the RBF Gaussian process.

    ``noise_grid`` holds noise-to-signal variance ratios ``sigma_n**2 / s**2``
    so the signal variance ``s**2`` can be profiled out in closed form.
    ``lengthscale_grid=None`` uses 12 log-spaced values over
    ``[0.1, 2] * range(doses)``.
    """

    lengthscale_grid: tuple[float, ...] | None = None
    noise_grid: tuple[float, ...] = tuple(float(v) for v in np.geomspace(1e-4, 1e2, 8))
    signal_variance: float | str = "profile"

    def __post_init__(self):
        if self.lengthscale_grid is not None and (
            len(self.lengthscale_grid) == 0 or min(self.lengthscale_grid) <= 0
        ):
            raise ValueError("lengthscale grid must be non-empty and positive")
        if len(self.noise_grid) == 0 or min(self.noise_grid) <= 0:
            raise ValueError("noise grid must be non-empty and positive")
        if self.signal_variance != "profile" and not float(self.signal_variance) > 0:
            raise ValueError("signal variance must be positive or 'profile'")

    def lengthscales(self, x: np.ndarray) -> np.ndarray:
        if self.lengthscale_grid is not None:
            return np.asarray(self.lengthscale_grid, dtype=float)
        span = float(np.ptp(x)) or 1.0
        return np.geomspace(0.1 * span, 2.0 * span, 12)


@dataclass(frozen=True)
class LoessConfig:
    span: float = 0.75
    degree: int = 1

    def __post_init__(self):
        if not 0 < self.span <= 1:
            raise ValueError("span must lie in (0, 1]")
        if self.degree != 1:
            raise ValueError("only local linear fitting (degree 1) is supported")


class GpNumericalError(np.linalg.LinAlgError):
    pass


def _rbf(a: np.ndarray, b: np.ndarray, lengthscale: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return np.exp(-0.5 * (d / lengthscale) ** 2)


def _chol(A: np.ndarray) -> np.ndarray:
    for jitter in JITTERS:
        try:
            return cholesky(A + jitter * np.eye(A.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise GpNumericalError("kernel matrix is not positive definite even with jitter 1e-4")


def gp_select(x: np.ndarray, yc: np.ndarray, cfg: GpConfig):
    """Grid-search (lengthscale, noise ratio, s2) by log marginal likelihood."""
    n = x.size
    best = None
    for ell in cfg.lengthscales(x):
        R = _rbf(x, x, ell)
        for lam in cfg.noise_grid:
            L = _chol(R + lam * np.eye(n))
            alpha = cho_solve((L, True), yc)
            quad = float(yc @ alpha)
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            if cfg.signal_variance == "profile":
                s2 = quad / n
                if s2 <= 0:
                    return ell, lam, 0.0, L, alpha
                lml = -0.5 * n * (math.log(2 * math.pi * s2) + 1.0) - 0.5 * logdet
            else:
                s2 = float(cfg.signal_variance)
                lml = -0.5 * quad / s2 - 0.5 * (logdet + n * math.log(s2)) - 0.5 * n * math.log(2 * math.pi)
            if best is None or lml > best[0]:
                best = (lml, ell, lam, s2, L, alpha)
    _, ell, lam, s2, L, alpha = best
    return ell, lam, s2, L, alpha


def gp_fit_predict(data: DoseResponseData, grid: DoseGrid, cfg: GpConfig | None = None) -> np.ndarray:
    """Posterior mean of an RBF Gaussian process on the grid.

    Responses are centred at their sample mean; binary responses are
    treated as real numbers.
    """
    cfg = cfg or GpConfig()
    x, y = data.doses, data.responses
    mean = float(y.mean())
    yc = y - mean
    if not np.any(yc):
        return np.full(grid.points, mean)
    ell, _, s2, _, alpha = gp_select(x, yc, cfg)
    if s2 == 0:
        return np.full(grid.points, mean)
    return mean + _rbf(grid.values, x, ell) @ alpha


def tricube(u):
    u = np.clip(np.abs(np.asarray(u, dtype=float)), 0.0, 1.0)
    return (1.0 - u**3) ** 3


def loess_fit_predict(data: DoseResponseData, grid: DoseGrid, cfg: LoessConfig | None = None) -> np.ndarray:
    """Local linear regression with tricube weights over the nearest
    ``ceil(span * n)`` doses; windows with a single distinct dose fall back to
    the weighted mean."""
    cfg = cfg or LoessConfig()
    x, y = data.doses, data.responses
    n = x.size
    q = math.ceil(cfg.span * n - 1e-12)
    if n < 5 or q < cfg.degree + 2:
        raise ValueError(f"LOESS needs n >= 5 and span*n >= {cfg.degree + 2} (n={n}, q={q})")
    x0 = grid.values
    d = np.abs(x[None, :] - x0[:, None])
    dmax = np.partition(d, q - 1, axis=1)[:, q - 1]
    w = tricube(d / np.where(dmax > 0, dmax, 1.0)[:, None])
    w[dmax == 0] = d[dmax == 0] == 0
    # all window doses tied at the edge distance: weight them equally
    empty = w.sum(axis=1) == 0
    w[empty] = (d[empty] <= dmax[empty, None]).astype(float)
    dx = x[None, :] - x0[:, None]
    s0 = w.sum(axis=1)
    s1 = (w * dx).sum(axis=1)
    s2 = (w * dx**2).sum(axis=1)
    t0 = w @ y
    t1 = (w * dx) @ y
    det = s0 * s2 - s1**2
    ok = det > 1e-12 * np.maximum(s0 * s2, np.finfo(float).tiny)
    out = t0 / s0
    out[ok] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
    return out
