"""Kernel estimators the SIMEX estimator is benchmarked against.

* :func:`naive_kde` smooths the contaminated values and ignores the error.
* :func:`dke_estimate` is the deconvoluting kernel estimator for one common
  Gaussian error SD.
* :func:`adjusted_dke_estimate` replaces the error characteristic function
  by a per-observation pooled version, for heteroscedastic errors.

Deconvoluting estimators are evaluated by direct quadrature at every grid
point: for each point and observation the cosine integral over ``[0, 1]`` is
summed node by node. This is deliberately the textbook definition; no FFT
binning is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .kernels import (
    DEFAULT_QUADRATURE,
    SQRT_2PI,
    QuadratureSpec,
    adjusted_deconv_weights,
    gaussian_deconv_weights,
    phi_K,
)
from .model import (
    ContaminatedSample,
    DensityEstimate,
    EvaluationGrid,
    is_homoscedastic,
    mean_sigma,
)

DEFAULT_C0 = 1.05

# Upper bound on (grid points x observations x nodes) held in memory at once.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class Bandwidth:
    h: float

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise InvalidInputError(f"bandwidth must be finite and > 0, got {self.h!r}")

    def __float__(self):
        return float(self.h)


def _h(h) -> float:
    return float(h.h if isinstance(h, Bandwidth) else Bandwidth(float(h)).h)


def gaussian_kde_values(data, h: float, points) -> np.ndarray:
    """Gaussian-kernel density estimate of ``data`` at ``points``."""
    data = np.asarray(data, dtype=float).reshape(-1)
    points = np.asarray(points, dtype=float).reshape(-1)
    out = np.empty(points.size)
    step = max(1, (1 << 20) // data.size)
    for start in range(0, points.size, step):
        u = (points[start : start + step, None] - data[None, :]) / h
        out[start : start + step] = np.exp(-0.5 * u * u).sum(axis=1)
    return out / (data.size * h * SQRT_2PI)


def naive_kde(sample: ContaminatedSample, h, eval: EvaluationGrid) -> DensityEstimate:
    hv = _h(h)
    values = gaussian_kde_values(sample.y, hv, eval.points)
    return DensityEstimate(eval, values, method="naive", info={"bandwidth": hv})


def _direct_sum(y, h, points, t, node_weights):
    """``(1/(n h pi)) sum_j sum_k W[k, j] cos(t_k (x - y_j) / h)`` at each ``x``.

    ``node_weights`` is either shape ``(nodes,)`` (shared by every
    observation) or ``(nodes, n)``.
    """
    n = y.size
    out = np.empty(points.size)
    step = max(1, _CHUNK_ELEMENTS // (n * t.size))
    shared = node_weights.ndim == 1
    for start in range(0, points.size, step):
        z = (points[start : start + step, None] - y[None, :]) / h
        arg = z[:, :, None] * t[None, None, :]
        np.cos(arg, out=arg)
        if shared:
            out[start : start + step] = (arg @ node_weights).sum(axis=1)
        else:
            out[start : start + step] = np.einsum("pjk,kj->p", arg, node_weights)
    return out / (n * h * math.pi)


def _max_abs_z(y, points, h):
    return max(abs(points[-1] - y.min()), abs(y.max() - points[0])) / h


def supersmooth_kde_values(y, h: float, points, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Ordinary kernel estimate with the supersmooth kernel (no deconvolution)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    points = np.asarray(points, dtype=float).reshape(-1)
    t, w = q.rule(_max_abs_z(y, points, h))
    return _direct_sum(y, h, points, t, w * phi_K(t))


def dke_estimate(
    sample: ContaminatedSample,
    h,
    sigma: float,
    eval: EvaluationGrid,
    q: QuadratureSpec = DEFAULT_QUADRATURE,
) -> DensityEstimate:
    """Deconvoluting kernel estimator for a common error SD ``sigma``.

    Raises
    ------
    InvalidInputError
        If ``sample`` is heteroscedastic; use :func:`adjusted_dke_estimate`.
    KernelOverflowError
        If ``sigma / h`` is too large for the kernel to be evaluated.
    """
    if not is_homoscedastic(sample):
        raise InvalidInputError(
            "dke_estimate needs a common error SD; use adjusted_dke_estimate "
            "(method 'adjusted-dke') for heteroscedastic samples"
        )
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    hv = _h(h)
    t, w = q.rule(_max_abs_z(sample.y, eval.points, hv))
    node_weights = w * gaussian_deconv_weights(t, hv, sigma)
    values = _direct_sum(sample.y, hv, eval.points, t, node_weights)
    return DensityEstimate(eval, values, method="dke", info={"bandwidth": hv, "sigma": sigma})


def adjusted_dke_values(y, sigmas, h: float, points, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Adjusted deconvoluting estimate from raw arrays; zero SDs are allowed here."""
    y = np.asarray(y, dtype=float).reshape(-1)
    points = np.asarray(points, dtype=float).reshape(-1)
    t, w = q.rule(_max_abs_z(y, points, h))
    node_weights = w[:, None] * adjusted_deconv_weights(t, h, sigmas)
    return _direct_sum(y, h, points, t, node_weights)


def adjusted_dke_estimate(
    sample: ContaminatedSample,
    h,
    eval: EvaluationGrid,
    q: QuadratureSpec = DEFAULT_QUADRATURE,
) -> DensityEstimate:
    """Deconvoluting estimator with per-observation pooled error characteristic functions."""
    hv = _h(h)
    values = adjusted_dke_values(sample.y, sample.sigma, hv, eval.points, q)
    return DensityEstimate(eval, values, method="adjusted-dke", info={"bandwidth": hv})


def error_scale(sample: ContaminatedSample) -> float:
    """Common error SD when homoscedastic, otherwise the mean error SD."""
    if is_homoscedastic(sample):
        return float(sample.sigma[0])
    return mean_sigma(sample)


def plugin_bandwidth(error_sd: float, n: int, c0: float = DEFAULT_C0) -> float:
    if not c0 > 0:
        raise InvalidInputError("c0 must be > 0")
    if n < 2:
        raise InvalidInputError("the plug-in bandwidth needs n >= 2 (log n must be > 0)")
    return c0 * error_sd / math.sqrt(math.log(n))


def dke_plugin_bandwidth(sample: ContaminatedSample, c0: float = DEFAULT_C0) -> Bandwidth:
    """Plug-in bandwidth ``c0 * sigma_W / sqrt(log n)`` for the deconvoluting estimators."""
    return Bandwidth(plugin_bandwidth(error_scale(sample), sample.n, c0))
