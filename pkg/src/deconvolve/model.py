"""Core data containers: contaminated samples, evaluation grids and estimates."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidInputError

HOMOSCEDASTIC_TOL = 1e-12


def _frozen_array(values, name):
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ContaminatedSample:
    """Observations ``y`` with per-observation error standard deviations ``sigma``.

    Each ``y[j]`` is modelled as ``x[j] + sigma[j] * z[j]`` with ``z[j]``
    standard normal. Both arrays are copied and made read-only.
    """

    y: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        y = _frozen_array(self.y, "y")
        sigma = _frozen_array(self.sigma, "sigma")
        if y.size == 0:
            raise InvalidInputError("sample must contain at least one observation")
        if y.shape != sigma.shape:
            raise InvalidInputError(
                f"y and sigma lengths differ ({y.size} != {sigma.size})"
            )
        if np.any(sigma <= 0):
            bad = int(np.flatnonzero(sigma <= 0)[0])
            raise InvalidInputError(
                f"sigma must be > 0 (sigma[{bad}] = {sigma[bad]!r})"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def homoscedastic(cls, y, sigma: float) -> "ContaminatedSample":
        y = np.asarray(y, dtype=float).reshape(-1)
        return cls(y, np.full(y.shape, float(sigma)))

    @property
    def n(self) -> int:
        return int(self.y.size)

    def shifted(self, delta: float) -> "ContaminatedSample":
        return ContaminatedSample(self.y + delta, self.sigma)

    def __len__(self):
        return self.n


def harmonic_mean_sigma(sample: ContaminatedSample) -> float:
    """Harmonic mean ``n / sum(1 / sigma_j)`` of the error SDs."""
    return float(sample.n / np.sum(1.0 / sample.sigma))


def mean_sigma(sample: ContaminatedSample) -> float:
    return float(np.mean(sample.sigma))


def is_homoscedastic(sample: ContaminatedSample, tol: float = HOMOSCEDASTIC_TOL) -> bool:
    if tol < 0:
        raise InvalidInputError("tol must be >= 0")
    return bool(np.ptp(sample.sigma) <= tol)


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    """Strictly increasing abscissae at which a density estimate is evaluated."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self.points, "grid points")
        if pts.size < 2:
            raise InvalidInputError("evaluation grid needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("evaluation grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, num: int) -> "EvaluationGrid":
        return cls(np.linspace(lo, hi, int(num)))

    @classmethod
    def padded(cls, sample: ContaminatedSample, num: int = 512) -> "EvaluationGrid":
        """Equally spaced grid covering the data plus ``4 * (sd(y) + max sigma)``.

        The padding keeps the tails of deconvolved estimates inside the grid,
        so trapezoid integrals over it lose negligible mass.
        """
        sd = float(np.std(sample.y, ddof=1)) if sample.n > 1 else 0.0
        pad = 4.0 * (sd + float(np.max(sample.sigma)))
        return cls.linspace(float(sample.y.min()) - pad, float(sample.y.max()) + pad, num)

    def __len__(self):
        return int(self.points.size)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Density values on a grid, with optional pointwise variance and band.

    ``band`` is a ``(lower, upper)`` pair of arrays. ``clipped`` records
    whether negative values were replaced by zero.
    """

    grid: EvaluationGrid
    values: np.ndarray
    variance: Optional[np.ndarray] = None
    band: Optional[Tuple[np.ndarray, np.ndarray]] = None
    clipped: bool = False
    method: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen_array(self.values, "density values")
        if values.shape != self.grid.points.shape:
            raise InvalidInputError("density values must match the grid length")
        object.__setattr__(self, "values", values)
        if self.variance is not None:
            var = _frozen_array(self.variance, "variance")
            if var.shape != values.shape:
                raise InvalidInputError("variance must match the grid length")
            if np.any(var < 0):
                raise InvalidInputError("variance entries must be >= 0")
            object.__setattr__(self, "variance", var)
        if self.band is not None:
            lo, hi = self.band
            band = (_frozen_array(lo, "band lower"), _frozen_array(hi, "band upper"))
            if band[0].shape != values.shape or band[1].shape != values.shape:
                raise InvalidInputError("band arrays must match the grid length")
            object.__setattr__(self, "band", band)
        if self.clipped and np.any(values < 0):
            raise InvalidInputError("a clipped estimate cannot hold negative values")

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def replace(self, **changes) -> "DensityEstimate":
        return dataclasses.replace(self, **changes)

    def integral(self) -> float:
        """Trapezoid-rule mass of the estimate over its grid."""
        return float(np.trapezoid(self.values, self.grid.points))
