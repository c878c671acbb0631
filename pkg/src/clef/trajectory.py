"""Trajectory containers shared by the generators, models, and evaluators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClefError
from .timeenc import Timestamp


@dataclass
class Trajectory:
    """Multivariate sequence with per-step timestamps and condition tokens."""

    id: str
    timestamps: list[Timestamp]
    values: np.ndarray  # [L, V]
    conditions: list[list[str]]
    cf_of: str | None = None
    divergence: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ClefError(f"trajectory {self.id}: values must be a 2-D [L, V] matrix")
        L = self.values.shape[0]
        if len(self.timestamps) != L or len(self.conditions) != L:
            raise ClefError(f"trajectory {self.id}: timestamps/conditions/values lengths differ")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise ClefError(f"trajectory {self.id}: timestamps not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ClefError(f"trajectory {self.id}: non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]

    def prefix(self, end: int) -> "Trajectory":
        """Copy of the first `end` steps."""
        if not 1 <= end <= self.length:
            raise ClefError(f"prefix length {end} out of range for length {self.length}")
        return Trajectory(
            id=self.id,
            timestamps=list(self.timestamps[:end]),
            values=self.values[:end].copy(),
            conditions=[list(c) for c in self.conditions[:end]],
        )

    def copy(self) -> "Trajectory":
        return Trajectory(
            id=self.id,
            timestamps=list(self.timestamps),
            values=self.values.copy(),
            conditions=[list(c) for c in self.conditions],
            cf_of=self.cf_of,
            divergence=self.divergence,
        )


@dataclass
class CounterfactualPair:
    """Original plus counterfactual trajectory sharing a prefix up to step D."""

    original: Trajectory
    counterfactual: Trajectory
    divergence: int

    def __post_init__(self):
        D = self.divergence
        if not 1 <= D < self.original.length or D >= self.counterfactual.length:
            raise ClefError("divergence step out of range for the pair")
        if not np.array_equal(self.original.values[:D], self.counterfactual.values[:D]):
            raise ClefError("counterfactual prefix values differ from the original")
        if self.original.conditions[:D] != self.counterfactual.conditions[:D]:
            raise ClefError("counterfactual prefix conditions differ from the original")
        if self.original.conditions[D] == self.counterfactual.conditions[D]:
            raise ClefError("counterfactual condition at the divergence step must differ")
