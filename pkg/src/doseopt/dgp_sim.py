"""Simulation scenarios: the eight true dose-response curves and noise models."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bma import DoseGrid, optimum_from_curve
from .data import DoseResponseData

SCENARIOS = ("a", "b", "c", "d")
SIGMA_GRID = (0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_DOSES = (0.4, 1.0, 2.5, 5.0, 10.0, 20.0, 30.0)
DEFAULT_REPLICATES = {"gaussian": 8, "bernoulli": 60}
BENCHMARK_REPLICATES = 5


def _gaussian_eta(scenario: str, x: np.ndarray) -> np.ndarray:
    if scenario == "a":
        return 0.8 + 1.4 * (1 - np.exp(-0.25 * x)) - 0.0015 * (x - 35) ** 2 / 50
    if scenario == "b":
        return 1.0 + 1.2 * (x / 20) * np.exp(-0.05 * (x - 20)) - 0.001 * x
    if scenario == "c":
        return (1.0 + 0.25 * np.sqrt(x) - 0.25 * np.exp(-((x - 10) ** 2) / 30)
                + 0.25 * np.exp(-((x - 25) ** 2) / 80) - 0.03 * np.maximum(0, x - 40))
    return 0.7 + 1.3 * (1 - np.exp(-0.15 * x)) - 0.002 * (x - 40) ** 2 / 100


def _bernoulli_eta(scenario: str, x: np.ndarray) -> np.ndarray:
    if scenario == "a":
        return -2 + 3 * (1 - np.exp(-0.2 * x)) - 0.05 * (x / 50) ** 2
    if scenario == "b":
        return -1.5 + 4 * (x / 30) * np.exp(-0.05 * (x - 25)) - 0.03 * (x / 50) ** 2
    if scenario == "c":
        return (-1 + 0.4 * np.sqrt(x) - 0.5 * np.exp(-((x - 10) ** 2) / 25)
                + 0.6 * np.exp(-((x - 25) ** 2) / 80) - 0.03 * np.maximum(0, x - 40))
    return -1 + 2.5 * (1 - np.exp(-0.08 * x)) - 0.04 * (x / 50) ** 2


def _check(scenario: str, family: str) -> None:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if family not in DEFAULT_REPLICATES:
        raise ValueError(f"unknown family {family!r}")


def eta_true(scenario: str, family: str, x):
    """True linear predictor of a scenario at dose(s) ``x``."""
    _check(scenario, family)
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("doses must be strictly positive")
    out = (_gaussian_eta if family == "gaussian" else _bernoulli_eta)(scenario, arr)
    return float(out) if out.ndim == 0 else out


def true_optimum(scenario: str, family: str, grid: DoseGrid) -> float:
    return optimum_from_curve(eta_true(scenario, family, grid.values), grid)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    family: str
    sigma: float
    design: tuple[tuple[float, int], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        _check(self.scenario, self.family)
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.design is None:
            reps = DEFAULT_REPLICATES[self.family]
            object.__setattr__(self, "design", tuple((d, reps) for d in DEFAULT_DOSES))
        for dose, reps in self.design:
            if dose <= 0 or reps < 1:
                raise ValueError("design needs positive doses and at least one replicate each")

    def doses(self) -> np.ndarray:
        return np.concatenate([np.full(int(r), float(d)) for d, r in self.design])


def draw_responses(eta, family: str, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy responses around a linear predictor.

    Gaussian: ``eta + sigma * z``. Bernoulli: success probability
    ``expit(eta + 0.1 * sigma * z)``.
    """
    eta = np.asarray(eta, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if family == "gaussian":
        return eta + sigma * rng.standard_normal(eta.shape)
    if family == "bernoulli":
        latent = eta + 0.1 * sigma * rng.standard_normal(eta.shape)
        return (rng.random(eta.shape) < expit(latent)).astype(float)
    raise ValueError(f"unknown family {family!r}")


def simulate(spec: ScenarioSpec) -> DoseResponseData:
    """Draw one dataset; doses depend only on the design, responses on the seed."""
    x = spec.doses()
    eta = eta_true(spec.scenario, spec.family, x)
    y = draw_responses(eta, spec.family, spec.sigma, np.random.default_rng(spec.seed))
    return DoseResponseData(x, y, spec.family)


def cell_seed(master_seed: int, scenario: str, family: str, sigma: float, replicate: int) -> int:
    """64-bit seed for one benchmark cell from blake2b over its coordinates."""
    key = f"{int(master_seed)}|{scenario}|{family}|{int(round(sigma * 10))}|{int(replicate)}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
