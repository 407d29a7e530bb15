"""SIMEX density deconvolution with the simulation step replaced by its limit.

Adding ``sqrt(lam) * sigma_j * Z`` noise to every observation and smoothing
with a vanishing bandwidth gives, in expectation, the Gaussian mixture

    g(t, lam) = (1/n) sum_j phi((t - y_j) / (sigma_j sqrt(lam))) / (sigma_j sqrt(lam)).

A quadratic in ``lam`` is fitted through ``g`` at the levels ``lam_1 < ... <
lam_s`` and evaluated at ``lam = -1``. The fit-and-evaluate map is linear
and data independent, so the estimate is ``c @ [g(t, lam_1), ..., g(t, lam_s)]``
for a single weight row ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import IllConditionedError, InvalidInputError
from .kernels import SQRT_2PI, gaussian_pdf
from .model import ContaminatedSample, DensityEstimate, EvaluationGrid, harmonic_mean_sigma

# Condition number of the (1, lam, lam^2) design above which weights are not trusted.
MAX_DESIGN_CONDITION = 1e10

# Upper bound on grid points x observations held in memory at once.
_CHUNK_ELEMENTS = 1 << 20


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    """Strictly increasing, strictly positive noise-inflation levels (at least 3)."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).reshape(-1)
        if lam.size < 3:
            raise InvalidInputError("a quadratic extrapolant needs at least 3 lambda levels")
        if not np.all(np.isfinite(lam)):
            raise InvalidInputError("lambda levels must be finite")
        if lam[0] <= 0:
            raise InvalidInputError("the smallest lambda level must be > 0")
        if np.any(np.diff(lam) <= 0):
            raise InvalidInputError("lambda levels must be strictly increasing")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def s(self) -> int:
        return int(self.lambdas.size)

    def __len__(self):
        return self.s


@dataclass(frozen=True, eq=False)
class ExtrapolationPlan:
    """Extrapolation weights ``c`` and covariance kernel ``Sigma`` for one grid.

    ``Sigma[l, m] = 1 / sqrt(lam_l + lam_m)``; the asymptotic variance of the
    estimate is proportional to ``c @ Sigma @ c``.
    """

    grid: LambdaGrid
    weights: np.ndarray
    sigma_matrix: np.ndarray

    @property
    def variance_factor(self) -> float:
        return float(self.weights @ self.sigma_matrix @ self.weights)


def build_plan(grid: LambdaGrid) -> ExtrapolationPlan:
    """Compose the least-squares quadratic fit with evaluation at ``lam = -1``.

    With ``P = [1, lam, lam^2]`` and ``P = QR``, the weight row is
    ``(1, -1, 1) R^{-1} Q^T``, identical to ``(1, -1, 1) (P^T P)^{-1} P^T``
    without forming the normal matrix.
    """
    lam = grid.lambdas
    design = np.vander(lam, 3, increasing=True)
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > MAX_DESIGN_CONDITION:
        raise IllConditionedError(
            f"lambda design is numerically singular (condition number {cond:.3g}); "
            "spread the lambda levels further apart or lower lambda_1"
        )
    q, r = np.linalg.qr(design)
    weights = np.linalg.solve(r.T, np.array([1.0, -1.0, 1.0])) @ q.T
    sigma_matrix = 1.0 / np.sqrt(lam[:, None] + lam[None, :])
    weights.setflags(write=False)
    sigma_matrix.setflags(write=False)
    return ExtrapolationPlan(grid, weights, sigma_matrix)


def _chunks(num_points, n):
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, num_points, step):
        yield slice(start, min(start + step, num_points))


def _pseudo_density_rows(t, sample, lambdas):
    """``g(t, lam)`` for every lambda; shape ``(len(lambdas), len(t))``."""
    t = np.asarray(t, dtype=float).reshape(-1)
    inv_sigma = 1.0 / sample.sigma
    out = np.empty((lambdas.size, t.size))
    for sl in _chunks(t.size, sample.n):
        half_u2 = (t[sl, None] - sample.y[None, :]) * inv_sigma[None, :]
        np.square(half_u2, out=half_u2)
        half_u2 *= -0.5
        buf = np.empty_like(half_u2)
        for i, lam in enumerate(lambdas):
            np.multiply(half_u2, 1.0 / lam, out=buf)
            np.exp(buf, out=buf)
            out[i, sl] = (buf @ inv_sigma) / math.sqrt(lam)
    return out / (sample.n * SQRT_2PI)


def pseudo_density(t, lam: float, sample: ContaminatedSample):
    """Noise-inflated pseudo-density ``g(t, lam)``, a Gaussian mixture in ``t``."""
    if not lam > 0:
        raise InvalidInputError("lambda must be > 0")
    t_arr = np.asarray(t, dtype=float)
    out = _pseudo_density_rows(t_arr, sample, np.array([float(lam)]))[0]
    return out.reshape(t_arr.shape) if t_arr.ndim else float(out[0])


def simex_values(t, sample: ContaminatedSample, plan: ExtrapolationPlan) -> np.ndarray:
    """Raw SIMEX values ``c @ g(t, Lambda)`` at arbitrary points."""
    t = np.asarray(t, dtype=float).reshape(-1)
    lambdas = plan.grid.lambdas
    inv_sigma = 1.0 / sample.sigma
    coef = plan.weights / np.sqrt(lambdas)
    out = np.zeros(t.size)
    for sl in _chunks(t.size, sample.n):
        half_u2 = (t[sl, None] - sample.y[None, :]) * inv_sigma[None, :]
        np.square(half_u2, out=half_u2)
        half_u2 *= -0.5
        buf = np.empty_like(half_u2)
        for c_l, lam in zip(coef, lambdas):
            np.multiply(half_u2, 1.0 / lam, out=buf)
            np.exp(buf, out=buf)
            out[sl] += c_l * (buf @ inv_sigma)
    return out / (sample.n * SQRT_2PI)


def simex_estimate(
    sample: ContaminatedSample, grid: LambdaGrid, eval: EvaluationGrid
) -> DensityEstimate:
    """SIMEX density estimate on ``eval``; values may dip below zero in sparse regions.

    Raises
    ------
    IllConditionedError
        If ``grid`` gives a numerically singular extrapolation design.
    """
    plan = build_plan(grid)
    values = simex_values(eval.points, sample, plan)
    return DensityEstimate(
        eval,
        values,
        method="simex",
        info={"lambdas": grid.lambdas.tolist(), "variance_factor": plan.variance_factor},
    )


def simex_variance(estimate_values, sample: ContaminatedSample, plan: ExtrapolationPlan):
    """Plug-in asymptotic variance ``f+ * c Sigma c / (n sqrt(2 pi) sigma_H)``.

    Negative density values are floored at zero first, so the variance is
    zero wherever the estimate is.
    """
    f = np.maximum(np.asarray(estimate_values, dtype=float), 0.0)
    scale = plan.variance_factor / (sample.n * SQRT_2PI * harmonic_mean_sigma(sample))
    return f * scale


def simex_confidence_band(est: DensityEstimate, level: float = 0.95) -> DensityEstimate:
    """Pointwise normal-approximation band ``f +/- z * sd``, lower limit floored at 0."""
    if est.variance is None:
        raise InvalidInputError("a confidence band needs an estimate that carries variance")
    if not 0.0 < level < 1.0:
        raise InvalidInputError("confidence level must lie in (0, 1)")
    z = stats.norm.ppf(0.5 * (1.0 + level))
    half = z * np.sqrt(est.variance)
    lower = np.maximum(est.values - half, 0.0)
    upper = est.values + half
    info = dict(est.info, level=level)
    return est.replace(band=(lower, upper), info=info)


def clip_nonnegative(est: DensityEstimate) -> DensityEstimate:
    if est.clipped:
        return est
    return est.replace(values=np.maximum(est.values, 0.0), clipped=True)


@dataclass(frozen=True)
class MonteCarloPseudoDensity:
    """Replicate means of simulated pseudo-densities and their standard errors.

    Both arrays have shape ``(s, len(points))``, one row per lambda level.
    """

    mean: np.ndarray
    stderr: np.ndarray


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate; independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def mc_simulation_oracle(
    sample: ContaminatedSample,
    grid: LambdaGrid,
    eval: EvaluationGrid,
    m: int,
    h: float,
    seed: int,
    block: int = 500,
) -> MonteCarloPseudoDensity:
    """Brute-force simulation step: average Gaussian-KDEs of ``m`` noise-inflated copies.

    Replicate ``r`` draws its standard normal noise from its own stream, so
    the result does not depend on ``block``. The same draws are reused for
    every lambda level.
    """
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    if not h > 0:
        raise InvalidInputError("h must be > 0")
    pts = eval.points
    lambdas = grid.lambdas
    total = np.zeros((lambdas.size, pts.size))
    total_sq = np.zeros_like(total)
    for start in range(0, m, block):
        reps = range(start, min(start + block, m))
        z = np.stack([replicate_rng(seed, r).standard_normal(sample.n) for r in reps])
        for i, lam in enumerate(lambdas):
            noisy = sample.y[None, :] + math.sqrt(lam) * sample.sigma[None, :] * z
            kern = gaussian_pdf((pts[None, None, :] - noisy[:, :, None]) / h) / h
            per_rep = kern.mean(axis=1)
            total[i] += per_rep.sum(axis=0)
            total_sq[i] += (per_rep * per_rep).sum(axis=0)
    mean = total / m
    if m > 1:
        var = np.maximum(total_sq - m * mean * mean, 0.0) / (m - 1)
        stderr = np.sqrt(var / m)
    else:
        stderr = np.full_like(mean, np.nan)
    return MonteCarloPseudoDensity(mean, stderr)
