"""Smoothing kernels and deconvoluting kernels for Gaussian measurement error.

The deconvoluting kernels are Fourier inversions of
``phi_K(t) / phi_U(t / h)`` where ``phi_K(t) = (1 - t^2)^3`` on ``[-1, 1]``.
Because both factors are even, the inversion reduces to the real integral

    K*(z) = (1 / pi) * int_0^1 cos(t z) phi_K(t) / phi_U(t / h) dt,

which is evaluated with a fixed quadrature rule on ``[0, 1]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError, KernelOverflowError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Largest exponent accepted before exp() gets close to the float64 limit (~709.8).
MAX_EXPONENT = 700.0

# Below this |x| the closed-form supersmooth kernel cancels catastrophically.
_CLOSED_FORM_MIN_ABS_X = 0.5

GAUSS_LEGENDRE = "gauss-legendre"
SIMPSON = "simpson"


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature rule on ``[0, 1]`` used for the cosine integrals.

    Parameters
    ----------
    nodes : int
        Base number of abscissae. Evaluation raises it when the cosine
        frequency ``|z|`` is too high for the base rule to resolve.
    scheme : {"gauss-legendre", "simpson"}
    abs_tol : float
        Absolute accuracy the rule is expected to reach for kernel values.
    """

    nodes: int = 256
    scheme: str = GAUSS_LEGENDRE
    abs_tol: float = 1e-8

    def __post_init__(self):
        if int(self.nodes) != self.nodes or self.nodes < 16:
            raise InvalidInputError("quadrature needs an integer node count >= 16")
        if self.scheme not in (GAUSS_LEGENDRE, SIMPSON):
            raise InvalidInputError(f"unknown quadrature scheme {self.scheme!r}")
        if not self.abs_tol > 0:
            raise InvalidInputError("abs_tol must be > 0")

    def nodes_for(self, max_abs_z: float) -> int:
        """Node count that resolves ``cos(t z)`` for all ``|z| <= max_abs_z``."""
        if self.scheme == GAUSS_LEGENDRE:
            # Gauss-Legendre with N nodes is accurate up to |z| ~ 2N on [0, 1].
            need = int(math.ceil(0.6 * max_abs_z)) + 16
        else:
            need = int(math.ceil(8.0 * max_abs_z)) + 16
        return max(int(self.nodes), need)

    def rule(self, max_abs_z: float = 0.0):
        """Return read-only ``(nodes, weights)`` on ``[0, 1]``."""
        return _rule(self.scheme, self.nodes_for(max_abs_z))


@functools.lru_cache(maxsize=64)
def _rule(scheme, count):
    if scheme == GAUSS_LEGENDRE:
        x, w = np.polynomial.legendre.leggauss(count)
        t, wt = 0.5 * (x + 1.0), 0.5 * w
    else:
        if count % 2 == 0:
            count += 1
        t = np.linspace(0.0, 1.0, count)
        wt = np.ones(count)
        wt[1:-1:2] = 4.0
        wt[2:-1:2] = 2.0
        wt *= (t[1] - t[0]) / 3.0
    t.setflags(write=False)
    wt.setflags(write=False)
    return t, wt


DEFAULT_QUADRATURE = QuadratureSpec()


def gaussian_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def phi_K(t):
    """Characteristic function ``(1 - t^2)^3`` of the supersmooth kernel, 0 off ``[-1, 1]``."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, (1.0 - t * t) ** 3, 0.0)


def _cosine_transform(z, weights_at_nodes, t):
    """``(1/pi) * sum_k weights_k cos(t_k z)`` for every entry of ``z``."""
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1)
    out = np.cos(np.multiply.outer(flat, t)) @ weights_at_nodes
    return (out / math.pi).reshape(z.shape)


def supersmooth_kernel(x, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Second-order kernel whose Fourier transform is ``phi_K``.

    Uses the closed form for ``|x| >= 0.5`` and the Fourier inversion
    integral (by quadrature) closer to the origin, where the closed form
    loses all precision.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    small = np.abs(x) < _CLOSED_FORM_MIN_ABS_X
    if np.any(small):
        t, w = q.rule(_CLOSED_FORM_MIN_ABS_X)
        out[small] = _cosine_transform(x[small], w * phi_K(t), t)
    big = ~small
    if np.any(big):
        xb = x[big]
        x2 = xb * xb
        out[big] = (48.0 * np.cos(xb) / (math.pi * x2 * x2)) * (1.0 - 15.0 / x2) - (
            144.0 * np.sin(xb) / (math.pi * x2 * x2 * xb)
        ) * (2.0 - 5.0 / x2)
    return out if out.ndim else float(out)


def check_exponent(sigma_max: float, h: float) -> None:
    """Refuse bandwidths where ``exp(sigma^2 / (2 h^2))`` nears overflow."""
    if h <= 0:
        raise InvalidInputError("bandwidth h must be > 0")
    exponent = sigma_max * sigma_max / (2.0 * h * h)
    if exponent > MAX_EXPONENT:
        h_min = sigma_max / math.sqrt(2.0 * MAX_EXPONENT)
        raise KernelOverflowError(
            f"deconvoluting kernel overflows for sigma/h = {sigma_max / h:.4g}; "
            f"use a bandwidth h >= {h_min:.6g}",
            min_bandwidth=h_min,
        )


def gaussian_deconv_weights(t, h: float, sigma: float):
    """``phi_K(t) / phi_U(t / h)`` for ``U ~ N(0, sigma^2)``."""
    check_exponent(sigma, h)
    return phi_K(t) * np.exp(0.5 * (sigma * t / h) ** 2)


def deconv_kernel_gaussian(z, h: float, sigma: float, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Deconvoluting kernel ``K*(z)`` for homoscedastic ``N(0, sigma^2)`` error.

    Raises
    ------
    KernelOverflowError
        If ``sigma / h`` is so large that the integrand overflows.
    """
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    z = np.asarray(z, dtype=float)
    t, w = q.rule(float(np.max(np.abs(z), initial=0.0)))
    out = _cosine_transform(z, w * gaussian_deconv_weights(t, h, sigma), t)
    return out if out.ndim else float(out)


def _sigmas_of(sample):
    sig = getattr(sample, "sigma", sample)
    sig = np.asarray(sig, dtype=float).reshape(-1)
    if sig.size == 0 or np.any(sig < 0):
        raise InvalidInputError("error SDs must be a non-empty array of values >= 0")
    return sig


def psi_Uj(t, j_sigma: float, sample):
    """Pooled error characteristic function used by the adjusted estimator.

    ``psi_j(t) = mean_k exp(-t^2 sigma_k^2) * exp(t^2 sigma_j^2 / 2)``.
    ``sample`` may be a :class:`ContaminatedSample` or an array of error SDs.
    """
    sig = _sigmas_of(sample)
    t = np.asarray(t, dtype=float)
    t2 = t * t
    pooled = np.mean(np.exp(-np.multiply.outer(t2, sig * sig)), axis=-1)
    return pooled * np.exp(0.5 * t2 * j_sigma * j_sigma)


def _log_inverse_psi(u, j_sigmas, sigmas):
    """``-log psi_j(u)`` with shape ``(len(u), len(j_sigmas))``, computed without overflow."""
    u2 = np.asarray(u, dtype=float) ** 2
    log_pooled = logsumexp(-np.multiply.outer(u2, sigmas * sigmas), axis=1) - math.log(
        sigmas.size
    )
    return -0.5 * np.multiply.outer(u2, j_sigmas * j_sigmas) - log_pooled[:, None]


def _check_log_weights(log_w, h, sigmas, j_min):
    if np.max(log_w) > MAX_EXPONENT:
        # The pooled term is at least exp(-u^2 sigma_min^2) / n and |u| <= 1 / h.
        coef = max(float(sigmas.min()) ** 2 - 0.5 * j_min**2, 0.0)
        h_min = math.sqrt(coef / (MAX_EXPONENT - math.log(sigmas.size)))
        raise KernelOverflowError(
            f"adjusted deconvoluting kernel overflows at h = {h:.6g}; "
            f"use a bandwidth h >= {h_min:.6g}",
            min_bandwidth=h_min,
        )


def adjusted_deconv_weights(t, h: float, sigmas):
    """``phi_K(t) / psi_j(t / h)`` for every observation; shape ``(len(t), n)``."""
    sig = _sigmas_of(sigmas)
    if h <= 0:
        raise InvalidInputError("bandwidth h must be > 0")
    t = np.asarray(t, dtype=float)
    log_w = _log_inverse_psi(t / h, sig, sig)
    _check_log_weights(log_w, h, sig, float(sig.min()))
    return phi_K(t)[:, None] * np.exp(log_w)


def adjusted_deconv_kernel(
    z, h: float, j_sigma: float, sample, q: QuadratureSpec = DEFAULT_QUADRATURE
):
    """Heteroscedastic-adjusted deconvoluting kernel for the observation with SD ``j_sigma``."""
    sig = _sigmas_of(sample)
    if h <= 0:
        raise InvalidInputError("bandwidth h must be > 0")
    z = np.asarray(z, dtype=float)
    t, w = q.rule(float(np.max(np.abs(z), initial=0.0)))
    log_w = _log_inverse_psi(t / h, np.array([float(j_sigma)]), sig)[:, 0]
    _check_log_weights(log_w, h, sig, float(j_sigma))
    out = _cosine_transform(z, w * phi_K(t) * np.exp(log_w), t)
    return out if out.ndim else float(out)
