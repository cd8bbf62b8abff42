from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time grid and states, ``states[i]`` being the solution at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray
    method: str = ""
    dt: float | None = None
    corrections: int | None = None
    nodes: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or y.ndim != 2 or y.shape[0] != t.shape[0]:
            raise ValidationError(
                f"times {t.shape} and states {y.shape} do not describe a trajectory")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", y)

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]
