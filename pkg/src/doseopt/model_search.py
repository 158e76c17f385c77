"""Model space exploration: exhaustive enumeration and mode-jumping MCMC.

Posterior model probabilities are always exact scores renormalised over the
set of models that were scored, never visit frequencies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import DoseResponseData
from .fp_basis import (K, RCOND_THRESHOLD, DesignMatrix, ModelIndex, basis_matrix, crossprod_rcond,
                       crossprod_rcond_batch, terms_of)
from .glm_laplace import LogisticFit, fit_logistic_map, log_marginal_laplace_batch
from .linear_model import (DegenerateDataError, GaussianFit, SingularModelError, default_g, fit_gaussian,
                           log_marginal_batch)

LOG_PRIOR_UNIFORM = K * math.log(0.5)

MOVE_PROBS = (0.6, 0.2, 0.2)
JUMP_SIZES = (4, 8)
DEFAULT_ITERATIONS = 20000


class InfeasibleModelSpaceError(RuntimeError):
    """No model in the requested space could be scored."""


def model_log_prior(gamma: ModelIndex | int, valid: bool = True) -> float:
    """Independent Bernoulli(1/2) inclusion prior; ``-inf`` for invalid models."""
    return LOG_PRIOR_UNIFORM if valid else -math.inf


def default_max_terms(data: DoseResponseData) -> int:
    return max(0, min(K, data.distinct_doses - 2))


BATCH_SIZE = 2048


def codes_up_to(max_terms: int):
    """All model codes with at most ``max_terms`` transforms, by size then lexicographically."""
    for size in range(max_terms + 1):
        for combo in itertools.combinations(range(1, K + 1), size):
            yield ModelIndex.from_terms(combo).code


class ModelScorer:
    """Scores and caches models of one dataset.

    Bernoulli data are pooled by distinct dose into binomial counts.
    ``prefetch`` evaluates many models in vectorised batches up front;
    only models later requested through :meth:`log_evidence` count as
    scored (``scored_codes``).
    """

    def __init__(
        self,
        data: DoseResponseData,
        g: float | None = None,
        max_terms: int | None = None,
        rcond_threshold: float = RCOND_THRESHOLD,
    ):
        self.data = data
        self.family = data.family
        self.g = float(default_g(data.n) if g is None else g)
        self.max_terms = default_max_terms(data) if max_terms is None else int(max_terms)
        if not 0 <= self.max_terms <= K:
            raise ValueError(f"max_terms must be in 0..{K}")
        self.rcond_threshold = rcond_threshold
        raw = basis_matrix(data.doses)
        scales = np.sqrt(np.mean(raw**2, axis=0))
        scales[scales == 0] = 1.0
        self._scales = scales
        self._scaled = raw / scales
        if self.family == "bernoulli":
            _, first, inverse, counts = np.unique(
                data.doses, return_index=True, return_inverse=True, return_counts=True
            )
            self._rows = first
            self._trials = counts.astype(float)
            self._y = np.bincount(inverse.ravel(), weights=data.responses)
        else:
            self._rows = np.arange(data.n)
            self._trials = None
            self._y = data.responses
        self._pooled = self._scaled[self._rows]
        self._cache: dict[int, tuple[float, GaussianFit | LogisticFit | None]] = {}
        self._table: dict[int, float] = {}

    def __len__(self) -> int:
        return len(self._cache)

    @property
    def scored_codes(self):
        return self._cache.keys()

    def design(self, code: int) -> DesignMatrix:
        terms = terms_of(code)
        idx = [k - 1 for k in terms]
        cols = self._pooled[:, idx]
        if not terms:
            rc = 1.0
        elif self._trials is None:
            rc = crossprod_rcond(cols)
        else:
            # pooled rows: conditioning of the count-weighted cross-product
            rc = crossprod_rcond(cols * np.sqrt(self._trials)[:, None], weights=np.sqrt(self._trials))
        return DesignMatrix(cols, self._scales[idx], terms, rc >= self.rcond_threshold, rc)

    def _evaluate(self, code: int):
        if code.bit_count() > self.max_terms:
            return -math.inf, None
        X = self.design(code)
        if not X.rank_ok:
            return -math.inf, None
        try:
            if self.family == "gaussian":
                fit = fit_gaussian(self._y, X, self.g)
                return fit.log_marginal, fit
            fit = fit_logistic_map(self._y, X, self.g, trials=self._trials)
        except (SingularModelError, DegenerateDataError):
            return -math.inf, None
        if not fit.converged:
            return -math.inf, None
        return fit.log_marginal_laplace, fit

    def prefetch(self, codes=None) -> None:
        """Batch-evaluate ``codes`` (default: every model within ``max_terms``)."""
        codes = list(codes_up_to(self.max_terms) if codes is None else codes)
        by_size: dict[int, list[int]] = {}
        for c in codes:
            if c not in self._table and c not in self._cache:
                by_size.setdefault(c.bit_count(), []).append(c)
        for size, group in sorted(by_size.items()):
            if size > self.max_terms:
                self._table.update(dict.fromkeys(group, -math.inf))
                continue
            for start in range(0, len(group), BATCH_SIZE):
                chunk = group[start:start + BATCH_SIZE]
                self._table.update(zip(chunk, self._batch_evidence(chunk, size)))

    def _batch_evidence(self, codes: list[int], size: int) -> np.ndarray:
        idx = np.array([[k - 1 for k in terms_of(c)] for c in codes], dtype=np.intp).reshape(len(codes), size)
        cols = np.moveaxis(self._pooled[:, idx], 0, 1)  # (models, rows, size)
        if self._trials is None:
            rc = crossprod_rcond_batch(cols)
        else:
            w = np.sqrt(self._trials)
            rc = crossprod_rcond_batch(cols * w[None, :, None], weights=w)
        ok = rc >= self.rcond_threshold
        if size == 0:
            ok[:] = True
        out = np.full(len(codes), -np.inf)
        n_obs = self.data.n
        if not ok.any() or n_obs < size + 2:
            return out
        if self.family == "gaussian":
            out[ok] = log_marginal_batch(self._y, cols[ok], self.g)
        else:
            out[ok] = log_marginal_laplace_batch(self._y, cols[ok], self.g, self._trials)
        return out

    def log_evidence(self, code: int) -> float:
        hit = self._cache.get(code)
        if hit is None:
            if code in self._table:
                hit = (self._table[code], None)
            else:
                hit = self._evaluate(code)
            self._cache[code] = hit
        return hit[0]

    def score(self, code: int) -> float:
        """Unnormalised log posterior: log evidence plus log prior."""
        ev = self.log_evidence(code)
        return ev + LOG_PRIOR_UNIFORM if ev > -math.inf else -math.inf

    def fit(self, code: int):
        """Full fit object of a valid model, or ``None`` for an invalid one."""
        ev = self.log_evidence(code)
        hit = self._cache[code]
        if hit[1] is None and ev > -math.inf:
            hit = (ev, self._evaluate(code)[1])
            self._cache[code] = hit
        return hit[1]


def fit_model(data: DoseResponseData, gamma: ModelIndex, g: float):
    """Fit one model on ``data`` (fresh scorer, no model-size cap)."""
    return ModelScorer(data, g=g, max_terms=K).fit(gamma.code)


@dataclass(frozen=True)
class EnsembleEntry:
    model: ModelIndex
    log_evidence: float
    log_prior: float
    pmp: float


@dataclass(frozen=True)
class PosteriorEnsemble:
    entries: tuple[EnsembleEntry, ...]
    family: str
    visited_count: int
    search_mode: str
    seed: int | None
    g: float
    max_terms: int = K
    extra: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def pmp_dict(self) -> dict[int, float]:
        return {e.model.code: e.pmp for e in self.entries}


def _ensemble_from_scores(
    scores: dict[int, float], family, visited, mode, seed, g, max_terms
) -> PosteriorEnsemble:
    valid = {c: ev for c, ev in scores.items() if ev > -math.inf}
    if not valid:
        raise InfeasibleModelSpaceError("no valid model could be scored")
    codes = np.fromiter(valid.keys(), dtype=np.int64, count=len(valid))
    logpost = np.fromiter(valid.values(), dtype=float, count=len(valid)) + LOG_PRIOR_UNIFORM
    w = np.exp(logpost - logsumexp(logpost))
    w /= w.sum()
    order = np.lexsort((codes, -w))
    entries = tuple(
        EnsembleEntry(ModelIndex(int(codes[i])), float(logpost[i] - LOG_PRIOR_UNIFORM), LOG_PRIOR_UNIFORM, float(w[i]))
        for i in order
    )
    return PosteriorEnsemble(entries, family, visited, mode, seed, g, max_terms)


def enumerate_models(
    data: DoseResponseData,
    g: float | None = None,
    max_terms: int | None = None,
    scorer: ModelScorer | None = None,
) -> PosteriorEnsemble:
    """Score every model with at most ``max_terms`` transforms."""
    if scorer is None:
        scorer = ModelScorer(data, g=g, max_terms=max_terms)
    mt = scorer.max_terms
    if data.n < mt + 2:
        raise ValueError(f"need n >= max_terms + 2 (n={data.n}, max_terms={mt})")
    codes = list(codes_up_to(mt))
    scorer.prefetch(codes)
    scores = {c: scorer.log_evidence(c) for c in codes}
    scanned = len(codes)
    return _ensemble_from_scores(scores, data.family, scanned, "enumerate", None, scorer.g, mt)


def acceptance_probability(score_from: float, score_to: float) -> float:
    """Metropolis–Hastings acceptance for a symmetric proposal."""
    if score_to == -math.inf:
        return 0.0
    if score_from == -math.inf:
        return 1.0
    d = score_to - score_from
    return 1.0 if d >= 0 else math.exp(d)


def _flip_mask(rng: np.random.Generator, count: int) -> int:
    mask = 0
    for b in rng.choice(K, size=count, replace=False):
        mask |= 1 << int(b)
    return mask


def hill_climb(code: int, scorer: ModelScorer, rng: np.random.Generator, max_steps: int = 2 * K) -> int:
    """Best-improvement single-bit ascent on the model score.

    Invalid models compare by size, so a climb started beyond the rank
    ceiling walks back towards smaller models.
    """

    def key(c):
        return (scorer.score(c), -c.bit_count())

    current, best = code, key(code)
    for _ in range(max_steps):
        order = rng.permutation(K)
        cand, cand_key = None, best
        for b in order:
            c = current ^ (1 << int(b))
            kc = key(c)
            if kc > cand_key:
                cand, cand_key = c, kc
        if cand is None:
            break
        current, best = cand, cand_key
    return current


def propose(code: int, move: int, rng: np.random.Generator, scorer: ModelScorer | None = None,
            jump_sizes: tuple[int, int] = JUMP_SIZES) -> int:
    """Draw a proposal of the given move type (0: one flip, 1: two flips, 2: mode jump)."""
    if move == 0:
        return code ^ _flip_mask(rng, 1)
    if move == 1:
        return code ^ _flip_mask(rng, 2)
    lo, hi = jump_sizes
    jumped = code ^ _flip_mask(rng, int(rng.integers(lo, hi + 1)))
    if scorer is not None:
        jumped = hill_climb(jumped, scorer, rng)
    return jumped ^ _flip_mask(rng, 1)


def mjmcmc(
    data: DoseResponseData,
    g: float | None = None,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    max_terms: int | None = None,
    move_probs: tuple[float, float, float] = MOVE_PROBS,
    jump_sizes: tuple[int, int] = JUMP_SIZES,
    scorer: ModelScorer | None = None,
    prefetch: bool = True,
) -> PosteriorEnsemble:
    """Mode-jumping Metropolis–Hastings over inclusion vectors.

    Starts at the null model. Every model scored along the way, including
    those touched by the local climbs of mode jumps, enters the ensemble.
    ``prefetch`` batch-computes evidences up front for speed; it does not
    change which models enter the ensemble.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    probs = np.asarray(move_probs, dtype=float)
    if probs.shape != (3,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
        raise ValueError("move_probs must be three non-negative weights summing to 1")
    if scorer is None:
        scorer = ModelScorer(data, g=g, max_terms=max_terms)
    if prefetch:
        scorer.prefetch()
    rng = np.random.default_rng(seed)
    cum = np.cumsum(probs)
    moves = np.searchsorted(cum, rng.random(iterations) * cum[-1], side="right")
    u_accept = rng.random(iterations)

    state = 0
    current = scorer.score(state)
    accepted = 0
    for it in range(iterations):
        cand = propose(state, int(min(moves[it], 2)), rng, scorer, jump_sizes)
        s = scorer.score(cand)
        if u_accept[it] < acceptance_probability(current, s):
            state, current = cand, s
            accepted += 1
    scores = {c: scorer.log_evidence(c) for c in scorer.scored_codes}
    ens = _ensemble_from_scores(scores, data.family, len(scores), "mjmcmc", seed, scorer.g, scorer.max_terms)
    ens.extra["acceptance_rate"] = accepted / iterations
    ens.extra["final_state"] = state
    return ens


def merge_ensembles(*ensembles: PosteriorEnsemble) -> PosteriorEnsemble:
    """Union of ensembles built on the same data and g, renormalised."""
    if not ensembles:
        raise ValueError("nothing to merge")
    first = ensembles[0]
    scores: dict[int, float] = {}
    for ens in ensembles:
        if ens.family != first.family or ens.g != first.g:
            raise ValueError("ensembles differ in family or g")
        for e in ens.entries:
            scores[e.model.code] = e.log_evidence
    return _ensemble_from_scores(scores, first.family, len(scores), first.search_mode, first.seed,
                                 first.g, first.max_terms)


def hpm(ensemble: PosteriorEnsemble) -> ModelIndex:
    """Highest posterior mass model; ties go to the lexicographically smallest."""
    if not ensemble.entries:
        raise ValueError("empty ensemble")
    best = max(e.pmp for e in ensemble.entries)
    return min(e.model for e in ensemble.entries if e.pmp == best)


def total_variation(a: PosteriorEnsemble, b: PosteriorEnsemble) -> float:
    pa, pb = a.pmp_dict(), b.pmp_dict()
    return 0.5 * sum(abs(pa.get(c, 0.0) - pb.get(c, 0.0)) for c in set(pa) | set(pb))


EB_G_GRID = tuple(float(v) for v in np.geomspace(1.0, 1e8, 33))


def empirical_bayes_g(data: DoseResponseData, grid=EB_G_GRID, max_terms: int | None = None) -> float:
    """g maximising the total evidence of the null and single-transform models."""
    best_g, best_total = None, -math.inf
    singletons = [0] + [1 << (K - k) for k in range(1, K + 1)]
    for g in grid:
        scorer = ModelScorer(data, g=g, max_terms=max_terms)
        ev = np.array([scorer.log_evidence(c) for c in singletons])
        total = logsumexp(ev[np.isfinite(ev)]) if np.any(np.isfinite(ev)) else -math.inf
        if total > best_total:
            best_g, best_total = g, total
    if best_g is None:
        raise InfeasibleModelSpaceError("no valid model for any g on the grid")
    return best_g


def search(
    data: DoseResponseData,
    mode: str = "mjmcmc",
    g: float | None = None,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    max_terms: int | None = None,
) -> PosteriorEnsemble:
    if mode == "enumerate":
        return enumerate_models(data, g=g, max_terms=max_terms)
    if mode == "mjmcmc":
        return mjmcmc(data, g=g, iterations=iterations, seed=seed, max_terms=max_terms)
    raise ValueError(f"unknown search mode {mode!r}")
