import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import interpolate

from deconvolve.errors import IllConditionedError, InvalidInputError
from deconvolve.model import ContaminatedSample, EvaluationGrid, harmonic_mean_sigma
from deconvolve.simex import (
    LambdaGrid,
    build_plan,
    clip_nonnegative,
    pseudo_density,
    simex_confidence_band,
    simex_estimate,
    simex_values,
    simex_variance,
)

lambda_grids = st.builds(
    lambda l1, steps: np.cumsum(np.concatenate([[l1], steps])),
    st.floats(0.01, 5.0),
    st.lists(st.floats(0.05, 2.0), min_size=2, max_size=60).map(np.array),
)


def random_sample(rng, n=40, hetero=True):
    y = rng.normal(size=n)
    sig = rng.uniform(0.2, 0.5, n) if hetero else np.full(n, 0.3)
    return ContaminatedSample(y, sig)


def test_lambda_grid_validation():
    with pytest.raises(InvalidInputError):
        LambdaGrid([1.0, 2.0])
    with pytest.raises(InvalidInputError):
        LambdaGrid([0.0, 1.0, 2.0])
    with pytest.raises(InvalidInputError):
        LambdaGrid([1.0, 3.0, 2.0])
    assert LambdaGrid([1.0, 2.0, 3.0]).s == 3


def test_three_point_weights_are_lagrange():
    np.testing.assert_allclose(build_plan(LambdaGrid([1.0, 2.0, 3.0])).weights, [6.0, -8.0, 3.0], atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(lambda_grids)
def test_weights_reproduce_quadratics_at_minus_one(lams):
    c = build_plan(LambdaGrid(lams)).weights
    assert abs(c.sum() - 1.0) < 1e-8
    assert abs(c @ lams + 1.0) < 1e-8 * max(1.0, np.abs(lams).max())
    assert abs(c @ lams**2 - 1.0) < 1e-8 * max(1.0, lams.max() ** 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.05, 3.0), st.floats(0.05, 3.0))
def test_s3_weights_match_lagrange_basis(l1, d1, d2):
    lams = np.array([l1, l1 + d1, l1 + d1 + d2])
    c = build_plan(LambdaGrid(lams)).weights
    lagrange = [interpolate.lagrange(lams, np.eye(3)[k])(-1.0) for k in range(3)]
    np.testing.assert_allclose(c, lagrange, atol=1e-10 * max(1.0, np.abs(lagrange).max()))


def test_sigma_matrix_and_variance_factor():
    plan = build_plan(LambdaGrid([1.0, 2.0, 3.0]))
    assert plan.sigma_matrix[0, 2] == pytest.approx(0.5)
    c = np.array([6.0, -8.0, 3.0])
    lam = np.array([1.0, 2.0, 3.0])
    expected = c @ (1.0 / np.sqrt(lam[:, None] + lam[None, :])) @ c
    assert plan.variance_factor == pytest.approx(expected)


def test_ill_conditioned_design_is_refused():
    with pytest.raises(IllConditionedError):
        build_plan(LambdaGrid([1.0, 1.0 + 1e-9, 1.0 + 2e-9]))


def test_pseudo_density_is_gaussian_mixture():
    s = ContaminatedSample([0.0, 1.0], [1.0, 2.0])
    t, lam = 0.4, 1.7
    expected = 0.5 * sum(
        math.exp(-0.5 * ((t - y) / (sg * math.sqrt(lam))) ** 2) / (sg * math.sqrt(lam) * math.sqrt(2 * math.pi))
        for y, sg in [(0.0, 1.0), (1.0, 2.0)]
    )
    assert pseudo_density(t, lam, s) == pytest.approx(expected, rel=1e-13)


def test_simex_equals_extrapolated_pseudo_densities():
    # Independent path: evaluate g at each lambda and extrapolate by polynomial fit.
    rng = np.random.default_rng(3)
    s = random_sample(rng)
    lams = np.array([0.5, 1.0, 1.7, 2.5, 3.5])
    t = np.linspace(-3, 3, 9)
    g = np.array([pseudo_density(t, lam, s) for lam in lams])
    fitted = np.polynomial.polynomial.polyfit(lams, g, 2)
    expected = fitted[0] - fitted[1] + fitted[2]
    got = simex_values(t, s, build_plan(LambdaGrid(lams)))
    np.testing.assert_allclose(got, expected, atol=1e-10)


def test_s3_simex_matches_lagrange_combination():
    rng = np.random.default_rng(4)
    s = random_sample(rng)
    t = np.linspace(-2, 2, 7)
    expected = 6 * pseudo_density(t, 1.0, s) - 8 * pseudo_density(t, 2.0, s) + 3 * pseudo_density(t, 3.0, s)
    np.testing.assert_allclose(simex_values(t, s, build_plan(LambdaGrid([1.0, 2.0, 3.0]))), expected, atol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_unit_mass_on_padded_grid(seed):
    rng = np.random.default_rng(100 + seed)
    s = random_sample(rng, n=int(rng.integers(20, 200)), hetero=bool(seed % 2))
    lam1 = float(rng.uniform(0.1, 2.0))
    grid = LambdaGrid(np.linspace(lam1, lam1 + 3, 50))
    est = simex_estimate(s, grid, EvaluationGrid.padded(s, 512))
    assert abs(est.integral() - 1.0) < 1e-4


def test_translation_equivariance():
    rng = np.random.default_rng(5)
    s = random_sample(rng)
    grid = LambdaGrid(np.linspace(0.5, 3.5, 20))
    pts = EvaluationGrid.linspace(-3, 3, 31)
    a = simex_estimate(s, grid, pts).values
    shifted_pts = EvaluationGrid(pts.points + 2.0)
    b = simex_estimate(s.shifted(2.0), grid, shifted_pts).values
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_chunking_does_not_change_values(monkeypatch):
    import deconvolve.simex as mod

    rng = np.random.default_rng(6)
    s = random_sample(rng, n=300)
    plan = build_plan(LambdaGrid(np.linspace(1, 4, 10)))
    t = np.linspace(-3, 3, 257)
    full = simex_values(t, s, plan)
    monkeypatch.setattr(mod, "_CHUNK_ELEMENTS", 1000)
    np.testing.assert_allclose(simex_values(t, s, plan), full, rtol=1e-13, atol=1e-16)


def test_variance_formula_and_floor():
    s = ContaminatedSample([0.0, 1.0, 2.0], [0.5, 1.0, 2.0])
    plan = build_plan(LambdaGrid([1.0, 2.0, 3.0]))
    f = np.array([0.2, -0.1, 0.0])
    var = simex_variance(f, s, plan)
    scale = plan.variance_factor / (3 * math.sqrt(2 * math.pi) * harmonic_mean_sigma(s))
    np.testing.assert_allclose(var, [0.2 * scale, 0.0, 0.0])


def test_band_contains_estimate_and_is_floored():
    rng = np.random.default_rng(7)
    s = random_sample(rng)
    grid = LambdaGrid(np.linspace(1, 4, 50))
    plan = build_plan(grid)
    est = simex_estimate(s, grid, EvaluationGrid.padded(s, 128))
    est = est.replace(variance=simex_variance(est.values, s, plan))
    banded = simex_confidence_band(est, 0.9)
    lo, hi = banded.band
    assert np.all(lo >= 0) and np.all(hi >= est.values)
    assert np.all(lo <= np.maximum(est.values, 0))
    wider = simex_confidence_band(est, 0.99)
    assert np.all(wider.band[1] >= hi)


def test_band_needs_variance_and_valid_level():
    s = ContaminatedSample([0.0, 1.0], [1.0, 1.0])
    est = simex_estimate(s, LambdaGrid([1.0, 2.0, 3.0]), EvaluationGrid.linspace(-1, 1, 5))
    with pytest.raises(InvalidInputError):
        simex_confidence_band(est)
    est = est.replace(variance=np.zeros(5))
    with pytest.raises(InvalidInputError):
        simex_confidence_band(est, 1.0)


def test_clip_is_idempotent():
    rng = np.random.default_rng(8)
    s = random_sample(rng, n=10)
    est = simex_estimate(s, LambdaGrid(np.linspace(0.05, 3.05, 50)), EvaluationGrid.padded(s, 256))
    once = clip_nonnegative(est)
    assert once.clipped and np.all(once.values >= 0)
    assert clip_nonnegative(once) is once
