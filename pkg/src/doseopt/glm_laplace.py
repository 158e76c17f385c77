"""Bernoulli (logit link) g-prior model with a Laplace-approximated evidence.

Slopes of the centred design get ``N(0, g (Xc'Xc)^-1)``; the intercept is
flat. Observations sharing a design row may be pooled into binomial counts
(``trials``), which leaves likelihood, prior and evidence unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit

from .fp_basis import DesignMatrix
from .linear_model import SingularModelError

LOG_2PI = math.log(2 * math.pi)
# near the optimum a Newton step changes the objective by less than its
# evaluation noise (cancellation between O(n |eta|) terms); steps within this
# relative slack still count as ascent
ROUNDING_SLACK = 1e-11


def _slack(val):
    return ROUNDING_SLACK * np.maximum(1.0, np.abs(val))


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    neg_hess: np.ndarray
    converged: bool
    iterations: int
    trace: list[float] = field(default_factory=list)


def newton_maximize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-8,
    max_halvings: int = 30,
) -> NewtonResult:
    """Damped Newton ascent with step halving.

    ``fun`` returns ``(value, gradient, negative Hessian)``. The objective
    never decreases between accepted iterates, up to a few ulps of rounding.
    Converged means ``max|grad| < tol``, or, for ill-conditioned problems
    where that is out of reach, a Newton decrement below rounding level.
    """
    x = np.asarray(x0, dtype=float).copy()
    val, grad, H = fun(x)
    trace = [val]
    it = 0
    while it < max_iter:
        if np.max(np.abs(grad), initial=0.0) < tol:
            return NewtonResult(x, val, grad, H, True, it, trace)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        # Newton decrement: the objective is within rounding of its maximum
        if abs(grad @ step) <= _slack(val):
            return NewtonResult(x, val, grad, H, True, it, trace)
        it += 1
        t = 1.0
        for _ in range(max_halvings):
            x_new = x + t * step
            val_new, grad_new, H_new = fun(x_new)
            if np.isfinite(val_new) and val_new >= val - _slack(val):
                break
            t *= 0.5
        else:
            break
        x, val, grad, H = x_new, val_new, grad_new, H_new
        trace.append(val)
    done = np.max(np.abs(grad), initial=0.0) < tol
    if not done:
        try:
            done = bool(abs(grad @ np.linalg.solve(H, grad)) <= _slack(val))
        except np.linalg.LinAlgError:
            pass
    return NewtonResult(x, val, grad, H, bool(done), it, trace)


def laplace_log_evidence(log_joint_at_mode: float, neg_hess: np.ndarray) -> float:
    """``log p(y, theta*) + d/2 log(2 pi) - 1/2 log det(-H)``."""
    d = neg_hess.shape[0]
    sign, logdet = np.linalg.slogdet(neg_hess)
    if sign <= 0:
        raise np.linalg.LinAlgError("negative Hessian is not positive definite")
    return log_joint_at_mode + 0.5 * d * LOG_2PI - 0.5 * logdet


@dataclass(frozen=True)
class LogisticFit:
    coef_map: np.ndarray  # [intercept, slopes] in the centred basis
    hessian_factor: np.ndarray  # lower Cholesky factor of -H at the MAP
    converged: bool
    iterations: int
    boundary: bool
    log_joint: float
    log_marginal_laplace: float
    g: float
    p_active: int
    column_means: np.ndarray
    column_scales: np.ndarray
    terms: tuple[int, ...]
    trace: tuple[float, ...] = ()


def _prepare(y, X: DesignMatrix, trials):
    y = np.asarray(y, dtype=float).ravel()
    n_rows, p = X.columns.shape
    if y.size != n_rows:
        raise ValueError(f"response length {y.size} does not match design rows {n_rows}")
    if trials is None:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("responses must be binary")
        m = np.ones(n_rows)
    else:
        m = np.asarray(trials, dtype=float).ravel()
        if m.shape != y.shape or np.any(m <= 0) or np.any(y < 0) or np.any(y > m):
            raise ValueError("invalid trial counts")
    return y, m


def fit_logistic_map(y, X: DesignMatrix, g: float, trials=None, max_iter: int = 100) -> LogisticFit:
    """MAP of the g-prior logistic model by damped Newton iterations.

    With ``trials`` given, ``y`` holds success counts per design row.
    """
    y, m = _prepare(y, X, trials)
    n_obs = m.sum()
    p = X.p
    if not X.rank_ok:
        raise SingularModelError(f"design for terms {X.terms} is rank deficient (rcond={X.rcond:.3g})")
    if n_obs < p + 2:
        raise SingularModelError(f"need n >= p + 2 observations (n={n_obs:g}, p={p})")
    if g <= 0:
        raise ValueError("g must be positive")

    means = (m @ X.columns) / n_obs if p else np.empty(0)
    Xc = X.columns - means
    Xa = np.column_stack([np.ones(Xc.shape[0]), Xc])
    gram = (Xc * m[:, None]).T @ Xc
    prior_prec = gram / g
    if p:
        _, logdet_gram = np.linalg.slogdet(gram)
    else:
        logdet_gram = 0.0
    log_prior_const = -0.5 * p * (LOG_2PI + math.log(g)) + 0.5 * logdet_gram

    def objective(beta):
        eta = Xa @ beta
        loglik = float(y @ eta + m @ log_expit(-eta))  # s*eta - m*log(1+e^eta)
        mu = expit(eta)
        slopes = beta[1:]
        pen = prior_prec @ slopes
        val = loglik - 0.5 * float(slopes @ pen) + log_prior_const
        grad = Xa.T @ (y - m * mu)
        grad[1:] -= pen
        w = m * mu * (1.0 - mu)
        H = (Xa * w[:, None]).T @ Xa
        H[1:, 1:] += prior_prec
        return val, grad, H

    ybar = min(max(y.sum() / n_obs, 0.5 / n_obs), 1 - 0.5 / n_obs)
    x0 = np.zeros(p + 1)
    x0[0] = math.log(ybar / (1 - ybar))
    res = newton_maximize(objective, x0, max_iter=max_iter)

    mu = expit(Xa @ res.x)
    boundary = bool(np.any(mu > 1 - 1e-8) or np.any(mu < 1e-8))
    converged = res.converged and not boundary
    factor = np.full((p + 1, p + 1), np.nan)
    lml = math.nan
    if converged:
        try:
            factor = np.linalg.cholesky(res.neg_hess)
            lml = res.value + 0.5 * (p + 1) * LOG_2PI - float(np.sum(np.log(np.diag(factor))))
        except np.linalg.LinAlgError:
            converged = False
    return LogisticFit(
        coef_map=res.x,
        hessian_factor=factor,
        converged=converged,
        iterations=res.iterations,
        boundary=boundary,
        log_joint=res.value,
        log_marginal_laplace=lml,
        g=float(g),
        p_active=p,
        column_means=means,
        column_scales=X.column_scales,
        terms=X.terms,
        trace=tuple(res.trace),
    )


def log_marginal_laplace(fit: LogisticFit, X: DesignMatrix | None = None, g: float | None = None) -> float:
    """Laplace log evidence of a converged fit.

    ``X`` and ``g`` are accepted for interface symmetry and validated
    against the fit.
    """
    if X is not None and X.terms != fit.terms:
        raise ValueError("design does not belong to this fit")
    if g is not None and g != fit.g:
        raise ValueError("g differs from the value used for fitting")
    if not fit.converged:
        raise NonConvergenceError(
            f"logistic fit for terms {fit.terms} did not converge", fit.iterations
        )
    return fit.log_marginal_laplace


def _centered(fit: LogisticFit, X_new: DesignMatrix) -> np.ndarray:
    if X_new.p != fit.p_active:
        raise ValueError(f"design has {X_new.p} columns, model has {fit.p_active}")
    return X_new.columns - fit.column_means


def map_eta(fit: LogisticFit, X_new: DesignMatrix) -> np.ndarray:
    Xc = _centered(fit, X_new)
    return fit.coef_map[0] + Xc @ fit.coef_map[1:]


def sample_eta(fit: LogisticFit, X_new: DesignMatrix, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of ``eta`` from the Gaussian Laplace approximation at the MAP."""
    if not fit.converged:
        raise NonConvergenceError("cannot sample from a non-converged fit", fit.iterations)
    Xa = np.column_stack([np.ones(X_new.n), _centered(fit, X_new)])
    z = rng.standard_normal((size, fit.p_active + 1))
    # -H = L L'  =>  cov = L^-T L^-1, draw = map + L^-T z
    coefs = fit.coef_map + np.linalg.solve(fit.hessian_factor.T, z.T).T
    return coefs @ Xa.T


def _solve_stack(H: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve each ``H[m] x = b[m]``; singular systems give NaN rows."""
    try:
        return np.linalg.solve(H, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(b.shape, np.nan)
        for i in range(H.shape[0]):
            try:
                out[i] = np.linalg.solve(H[i], b[i])
            except np.linalg.LinAlgError:
                pass
        return out


def log_marginal_laplace_batch(successes, columns: np.ndarray, g: float, trials,
                               max_iter: int = 100, tol: float = 1e-8, max_halvings: int = 30) -> np.ndarray:
    """Laplace log evidence for a stack of designs ``(models, rows, p)``.

    Runs the damped Newton scheme of :func:`fit_logistic_map` on every model
    at once; models that fail to converge (or hit the 0/1 boundary) get
    ``-inf``.
    """
    y = np.asarray(successes, dtype=float).ravel()
    mcount = np.asarray(trials, dtype=float).ravel()
    M, J, p = columns.shape
    d = p + 1
    n_obs = mcount.sum()
    means = np.einsum("j,mjp->mp", mcount, columns) / n_obs
    Xc = columns - means[:, None, :]
    Xa = np.concatenate([np.ones((M, J, 1)), Xc], axis=2)
    gram = np.einsum("mjp,j,mjq->mpq", Xc, mcount, Xc)
    P = np.zeros((M, d, d))
    P[:, 1:, 1:] = gram / g
    if p:
        _, logdet_gram = np.linalg.slogdet(gram)
    else:
        logdet_gram = np.zeros(M)
    const = -0.5 * p * (LOG_2PI + math.log(g)) + 0.5 * logdet_gram

    def evaluate(B, idx):
        X = Xa[idx]
        eta = np.einsum("mjd,md->mj", X, B)
        pen = np.einsum("mde,me->md", P[idx], B)
        val = eta @ y + log_expit(-eta) @ mcount - 0.5 * np.einsum("md,md->m", B, pen) + const[idx]
        mu = expit(eta)
        grad = np.einsum("mjd,mj->md", X, y - mcount * mu) - pen
        w = mcount * mu * (1.0 - mu)
        H = np.einsum("mjd,mj,mje->mde", X, w, X) + P[idx]
        return val, grad, H, mu

    ybar = min(max(y.sum() / n_obs, 0.5 / n_obs), 1 - 0.5 / n_obs)
    B = np.zeros((M, d))
    B[:, 0] = math.log(ybar / (1 - ybar))
    all_idx = np.arange(M)
    val, grad, H, mu = evaluate(B, all_idx)
    failed = np.zeros(M, dtype=bool)
    conv_dec = np.zeros(M, dtype=bool)
    it = 0
    while True:
        conv = (np.max(np.abs(grad), axis=1) < tol) | conv_dec
        active = np.flatnonzero(~conv & ~failed)
        if active.size == 0:
            break
        if it == max_iter:
            failed[active] = True
            break
        it += 1
        step = _solve_stack(H[active], grad[active])
        bad = ~np.all(np.isfinite(step), axis=1)
        failed[active[bad]] = True
        dec = np.einsum("md,md->m", grad[active], step)
        flat = ~bad & (np.abs(dec) <= _slack(val[active]))
        conv_dec[active[flat]] = True
        keep = ~bad & ~flat
        active, step = active[keep], step[keep]
        if active.size == 0:
            continue
        t = np.ones(active.size)
        pending = np.ones(active.size, dtype=bool)
        for _h in range(max_halvings):
            sel = np.flatnonzero(pending)
            idx = active[sel]
            Bn = B[idx] + t[sel, None] * step[sel]
            vn, gn, Hn, mun = evaluate(Bn, idx)
            ok = np.isfinite(vn) & (vn >= val[idx] - _slack(val[idx]))
            acc = idx[ok]
            B[acc], val[acc], grad[acc], H[acc], mu[acc] = Bn[ok], vn[ok], gn[ok], Hn[ok], mun[ok]
            pending[sel[ok]] = False
            t[sel[~ok]] *= 0.5
            if not pending.any():
                break
        failed[active[pending]] = True
    boundary = np.any(mu > 1 - 1e-8, axis=1) | np.any(mu < 1e-8, axis=1)
    sign, logdet = np.linalg.slogdet(H)
    ok = ~failed & ~boundary & (sign > 0)
    out = np.full(M, -np.inf)
    out[ok] = val[ok] + 0.5 * d * LOG_2PI - 0.5 * logdet[ok]
    return out
