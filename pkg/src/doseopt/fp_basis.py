"""Fractional polynomial basis: the 16 fixed transforms and design matrices.

Transforms 1..8 are ``x**p`` for ``p`` in :data:`POWERS` (``p = 0`` meaning
``log(x)``); transforms 9..16 multiply the same powers by ``log(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

POWERS: tuple[float, ...] = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)
K = 2 * len(POWERS)
RCOND_THRESHOLD = 1e-10


class DoseDomainError(ValueError):
    """Raised when a dose is not strictly positive."""


def _power_name(p: float) -> str:
    return "x" if p == 1 else f"x^{p:g}"


def transform_name(k: int) -> str:
    """Human readable label for transform ``k`` (1-based)."""
    p = POWERS[(k - 1) % len(POWERS)]
    if k <= len(POWERS):
        return "log(x)" if p == 0 else _power_name(p)
    if p == 0:
        return "log(x)^2"
    return f"{_power_name(p)}*log(x)"


TRANSFORM_NAMES: tuple[str, ...] = tuple(transform_name(k) for k in range(1, K + 1))


def _check_positive(x: np.ndarray) -> None:
    if np.any(~(x > 0)):
        bad = x[~(x > 0)]
        raise DoseDomainError(
            f"doses must be strictly positive (got {bad.ravel()[0]!r}); "
            "shift the doses by a positive constant before fitting"
        )


def transform(x, k: int):
    """Evaluate fractional polynomial transform ``k`` (1..16) at dose(s) ``x``."""
    if not 1 <= k <= K:
        raise ValueError(f"transform index must be in 1..{K}, got {k}")
    arr = np.asarray(x, dtype=float)
    _check_positive(arr)
    p = POWERS[(k - 1) % len(POWERS)]
    base = np.log(arr) if p == 0 else arr**p
    out = base if k <= len(POWERS) else base * np.log(arr)
    return float(out) if out.ndim == 0 else out


def basis_matrix(doses) -> np.ndarray:
    """All 16 raw transforms as an ``(n, 16)`` array."""
    x = np.asarray(doses, dtype=float).ravel()
    _check_positive(x)
    logx = np.log(x)
    cols = np.empty((x.size, K))
    for j, p in enumerate(POWERS):
        base = logx if p == 0 else x**p
        cols[:, j] = base
        cols[:, j + len(POWERS)] = base * logx
    return cols


@dataclass(frozen=True, order=True)
class ModelIndex:
    """Inclusion vector over the 16 transforms.

    ``gamma_k`` is stored in bit ``16 - k`` of ``code``, so integer order on
    ``code`` coincides with lexicographic order on ``(gamma_1, ..., gamma_16)``.
    """

    code: int = 0

    def __post_init__(self):
        if not 0 <= self.code < (1 << K):
            raise ValueError(f"model code out of range: {self.code}")

    @classmethod
    def from_terms(cls, terms: Iterable[int]) -> "ModelIndex":
        code = 0
        for k in terms:
            if not 1 <= k <= K:
                raise ValueError(f"transform index must be in 1..{K}, got {k}")
            code |= 1 << (K - k)
        return cls(code)

    @classmethod
    def from_bits(cls, bits: Sequence[int | bool]) -> "ModelIndex":
        if len(bits) != K:
            raise ValueError(f"expected {K} inclusion flags, got {len(bits)}")
        return cls.from_terms(k for k, b in enumerate(bits, start=1) if b)

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.code >> (K - k)) & 1 for k in range(1, K + 1))

    @property
    def terms(self) -> tuple[int, ...]:
        return terms_of(self.code)

    @property
    def size(self) -> int:
        return self.code.bit_count()

    def flip(self, k: int) -> "ModelIndex":
        return ModelIndex(self.code ^ (1 << (K - k)))

    def names(self) -> list[str]:
        return [TRANSFORM_NAMES[k - 1] for k in self.terms]

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


_TERMS_CACHE: dict[int, tuple[int, ...]] = {}


def terms_of(code: int) -> tuple[int, ...]:
    """Ascending 1-based transform indices set in ``code``."""
    t = _TERMS_CACHE.get(code)
    if t is None:
        t = tuple(k for k in range(1, K + 1) if (code >> (K - k)) & 1)
        _TERMS_CACHE[code] = t
    return t


@dataclass(frozen=True)
class DesignMatrix:
    """Scaled fractional polynomial columns for one model (no intercept column).

    ``columns[:, j]`` is transform ``terms[j]`` of the doses divided by
    ``column_scales[j]``.
    """

    columns: np.ndarray
    column_scales: np.ndarray
    terms: tuple[int, ...]
    rank_ok: bool
    rcond: float

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]

    @property
    def model(self) -> ModelIndex:
        return ModelIndex.from_terms(self.terms)


def crossprod_rcond(columns: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Reciprocal condition number of ``[1, X]^T [1, X]``.

    The intercept is part of every model, so it is part of the check.
    ``weights`` (already applied to ``columns``) multiply the intercept too.
    """
    n = columns.shape[0]
    if columns.shape[1] == 0:
        return 1.0
    ones = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    aug = np.column_stack([ones, columns])
    s = np.linalg.svd(aug, compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float((s[-1] / s[0]) ** 2) if aug.shape[1] <= n else 0.0


def build_design(
    doses,
    gamma: ModelIndex,
    column_scales: np.ndarray | None = None,
    rcond_threshold: float = RCOND_THRESHOLD,
) -> DesignMatrix:
    """Design matrix of the transforms active in ``gamma``.

    Columns are scaled to unit root-mean-square over ``doses`` unless
    ``column_scales`` is given (use the training scales when building a
    prediction design on new doses).
    """
    x = np.asarray(doses, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one dose")
    terms = gamma.terms
    if not terms:
        return DesignMatrix(np.empty((x.size, 0)), np.empty(0), (), True, 1.0)
    raw = np.column_stack([transform(x, k) for k in terms])
    if column_scales is None:
        scales = np.sqrt(np.mean(raw**2, axis=0))
        scales[scales == 0] = 1.0
    else:
        scales = np.asarray(column_scales, dtype=float)
        if scales.shape != (len(terms),):
            raise ValueError("column_scales does not match the model size")
    cols = raw / scales
    rc = crossprod_rcond(cols)
    return DesignMatrix(cols, scales, terms, rc >= rcond_threshold, rc)


def design_like(train: DesignMatrix, doses) -> DesignMatrix:
    """Prediction design on new ``doses`` reusing the training column scales."""
    return build_design(doses, train.model, column_scales=train.column_scales)


def crossprod_rcond_batch(columns: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """:func:`crossprod_rcond` over a stack of designs shaped ``(models, n, p)``."""
    m, n, p = columns.shape
    if p == 0:
        return np.ones(m)
    if p + 1 > n:
        return np.zeros(m)
    ones = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    aug = np.concatenate([np.broadcast_to(ones[None, :, None], (m, n, 1)), columns], axis=2)
    s = np.linalg.svd(aug, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = (s[:, -1] / s[:, 0]) ** 2
    return np.where(s[:, 0] > 0, rc, 0.0)
