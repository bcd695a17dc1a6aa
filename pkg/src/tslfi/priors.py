"""Uniform box priors over parameter vectors.

Parameter points are plain 1-D float64 arrays throughout the package;
batches are (n, d) arrays.  Boxes are open: boundary points count as
outside (measure zero, but it pins down every support test).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoxPrior:
    """Uniform distribution on an open axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError(
                f"bounds must be equal-length vectors, got {lower.shape} and {upper.shape}"
            )
        if not np.all(lower < upper):
            raise ValueError(f"need lower < upper per dimension, got {lower} / {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self):
        return self.lower.size

    @property
    def widths(self):
        return self.upper - self.lower

    @property
    def volume(self):
        return float(np.prod(self.widths))

    def sample(self, count, rng):
        """(count, d) points uniform on the box."""
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def contains(self, theta):
        """Strict interior test; theta is (d,) or (n, d)."""
        theta = np.asarray(theta, dtype=np.float64)
        return np.all((theta > self.lower) & (theta < self.upper), axis=-1)

    def logpdf(self, theta):
        """-log(volume) inside the open box, -inf outside."""
        inside = self.contains(theta)
        return np.where(inside, -np.log(self.volume), -np.inf)

    def to_unit(self, theta):
        """Affine map of the box onto the unit square."""
        return (np.asarray(theta, dtype=np.float64) - self.lower) / self.widths

    def from_unit(self, unit):
        return self.lower + np.asarray(unit, dtype=np.float64) * self.widths
