from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("gaussian", "bernoulli")


@dataclass(frozen=True)
class DoseResponseData:
    """Paired doses and responses tagged with a response family."""

    doses: np.ndarray
    responses: np.ndarray
    family: str = "gaussian"

    def __post_init__(self):
        doses = np.asarray(self.doses, dtype=float).ravel()
        responses = np.asarray(self.responses, dtype=float).ravel()
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if doses.shape != responses.shape:
            raise ValueError(
                f"doses and responses differ in length ({doses.size} vs {responses.size})"
            )
        if doses.size == 0:
            raise ValueError("empty dataset")
        if np.any(~(doses > 0)):
            raise ValueError("doses must be strictly positive")
        if not np.all(np.isfinite(responses)):
            raise ValueError("responses must be finite")
        if self.family == "bernoulli" and not np.all((responses == 0) | (responses == 1)):
            raise ValueError("bernoulli responses must be 0 or 1")
        object.__setattr__(self, "doses", doses)
        object.__setattr__(self, "responses", responses)

    @property
    def n(self) -> int:
        return self.doses.size

    @property
    def distinct_doses(self) -> int:
        return np.unique(self.doses).size
