"""Over-dispersed targets: closed-form gradients, tail behaviour, the
root-diagonal normalising-constant estimate, and the importance-ratio
identities."""

import numpy as np
import pytest
from scipy.integrate import quad

from steinpi.errors import NoExactSampler
from steinpi.grid import GridSampler
from steinpi.kernels import ConstantKernel, LangevinKernel
from steinpi.pi_targets import estimate_c2, make_pi, make_power_tilt
from steinpi.quantise import snis_weights
from steinpi.targets import default_mixture, find_mode, make_gaussian, make_regression_posterior

from _oracles import fd_gradient, rel_err


def _standard_normal_pi():
    target = make_gaussian([0.0])
    mode = find_mode(target, np.array([1.0]))
    kernel = LangevinKernel(target, mode)
    return target, kernel, make_pi(target, kernel)


def test_pi_log_density_standard_normal_closed_form():
    target, _, pi = _standard_normal_pi()
    xs = np.linspace(-4, 4, 17)
    # log pi = log p + log(1 + x^2) / 2 for this kernel
    expected = target.log_density(xs[:, None]) + 0.5 * np.log(1.0 + xs**2)
    np.testing.assert_allclose(pi.log_density(xs[:, None]), expected, rtol=1e-14)
    grads = pi.grad_log_density(xs[:, None])[:, 0]
    np.testing.assert_allclose(grads, -xs + xs / (1.0 + xs**2), rtol=1e-12, atol=1e-14)


def test_pi_gradient_matches_finite_differences(rng):
    target = default_mixture()
    mode = find_mode(target, np.array([0.1]))
    pi = make_pi(target, LangevinKernel(target, mode))
    pts = 3.0 * rng.standard_normal((100, 1))
    worst = max(rel_err(pi.grad_log_density(x), fd_gradient(pi.log_density, x)) for x in pts)
    assert worst < 1e-5


def test_pi_gradient_is_exactly_assembled_from_pieces(rng):
    target, kernel, pi = _standard_normal_pi()
    for x in rng.standard_normal((20, 1)):
        diag = kernel.diag(x)
        expected = target.grad_log_density(x) + 0.5 * diag.grad / diag.value
        np.testing.assert_array_equal(pi.grad_log_density(x), expected)


def test_pi_has_heavier_tails_than_base():
    _, _, pi = _standard_normal_pi()

    def dens(x):
        return np.exp(pi.log_density(np.array([x])))

    norm = quad(dens, -12, 12, limit=200)[0]
    mean = quad(lambda x: x * dens(x), -12, 12, limit=200)[0] / norm
    var = quad(lambda x: (x - mean) ** 2 * dens(x), -12, 12, limit=200)[0] / norm
    assert var > 1.0


def test_pi_with_constant_kernel_is_the_base():
    target = make_gaussian([0.0])
    pi = make_pi(target, ConstantKernel(4.0, dim=1))
    xs = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_array_equal(pi.grad_log_density(xs), target.grad_log_density(xs))


def test_pi_density_ratio_matches_snis_weights(rng):
    target = default_mixture()
    mode = find_mode(target, np.array([0.1]))
    kernel = LangevinKernel(target, mode)
    pi = make_pi(target, kernel)
    pts = rng.standard_normal((50, 1)) * 2.0
    ratios = pi.density_ratio_to_base(pts)
    expected = ratios / ratios.sum()
    got = snis_weights(pts, kernel).weights
    assert np.max(np.abs(got - expected) / expected) < 1e-12


# ----------------------------------------------------------------------
# power tilt
# ----------------------------------------------------------------------


def test_power_tilt_gradient_scales_exactly():
    target = make_gaussian([0.0])
    tilt = make_power_tilt(target, 1.0)
    assert tilt.exponent == 0.5
    x = np.array([1.3])
    np.testing.assert_array_equal(tilt.grad_log_density(x), 0.5 * target.grad_log_density(x))


def test_power_tilt_standard_normal_halves_precision():
    # p^(1/2) for a standard normal is N(0, 2) up to normalisation
    target = make_gaussian([0.0])
    tilt = make_power_tilt(target, 1.0)
    assert tilt.grad_log_density(np.array([1.0]))[0] == pytest.approx(-0.5, rel=1e-15)


def test_power_tilt_large_r_flattens():
    target = make_gaussian(np.zeros(2))
    tilt = make_power_tilt(target, 1e8)
    assert tilt.exponent < 1e-7
    x = np.array([1.0, -2.0])
    ratio = np.linalg.norm(tilt.grad_log_density(x)) / np.linalg.norm(target.grad_log_density(x))
    assert ratio < 1e-7


def test_power_tilt_rejects_nonpositive_r():
    with pytest.raises(ValueError):
        make_power_tilt(make_gaussian([0.0]), 0.0)


# ----------------------------------------------------------------------
# normalising-constant estimate
# ----------------------------------------------------------------------


def test_estimate_c2_standard_normal_vs_quadrature(rng):
    target, kernel, _ = _standard_normal_pi()
    est = estimate_c2(target, kernel, 400_000, rng)

    def integrand(x):
        return np.sqrt(1.0 + x**2) * np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)

    truth = quad(integrand, -12, 12, limit=200)[0]
    assert abs(est.value - truth) <= 3.0 * est.standard_error


def test_estimate_c2_constant_kernel_exact(rng):
    target = make_gaussian([0.0])
    est = estimate_c2(target, ConstantKernel(4.0, dim=1), 1000, rng)
    assert est.value == 2.0
    assert est.standard_error == 0.0


def test_estimate_c2_mixture_stable_across_seeds():
    target = default_mixture()
    mode = find_mode(target, np.array([0.1]))
    kernel = LangevinKernel(target, mode)
    a = estimate_c2(target, kernel, 1_000_000, np.random.default_rng(1))
    b = estimate_c2(target, kernel, 1_000_000, np.random.default_rng(2))
    joint = np.hypot(a.standard_error, b.standard_error)
    assert abs(a.value - b.value) <= 4.0 * joint


def test_estimate_c2_needs_exact_sampler(rng):
    target = make_regression_posterior()
    mode = find_mode(target, np.zeros(2))
    with pytest.raises(NoExactSampler):
        estimate_c2(target, LangevinKernel(target, mode), 100, rng)


# ----------------------------------------------------------------------
# importance-ratio square integrability witness
# ----------------------------------------------------------------------


def test_squared_ratio_bounded_over_growing_samples():
    target, kernel, pi = _standard_normal_pi()
    sampler = GridSampler(pi, [(-12.0, 12.0)], num=24001)
    c2 = estimate_c2(target, kernel, 400_000, np.random.default_rng(5)).value
    estimates = []
    for n in (1_000, 10_000, 100_000):
        x = sampler.sample(n, np.random.default_rng(n))
        estimates.append(c2**2 * np.mean(1.0 / kernel.diag_values(x)))
    bound = c2**2 / kernel.c1_squared()
    assert all(e <= bound * 1.05 for e in estimates)
    assert max(estimates) / min(estimates) < 1.2


# ----------------------------------------------------------------------
# grid sampler plumbing
# ----------------------------------------------------------------------


def test_grid_sampler_matches_moments():
    target = default_mixture()
    sampler = GridSampler(target, [(-10.0, 10.0)], num=20001)
    x = sampler.sample(400_000, np.random.default_rng(0))[:, 0]
    true_var = 0.3 * (9 + 0.64) * 2 + 0.4
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - true_var) / true_var < 0.02


def test_grid_sampler_deterministic():
    target = make_gaussian(np.zeros(2))
    sampler = GridSampler(target, [(-6, 6), (-6, 6)], num=301)
    a = sampler.sample(100, np.random.default_rng(3))
    b = sampler.sample(100, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_grid_sampler_rejects_high_dimensions():
    target = make_gaussian(np.zeros(3))
    with pytest.raises(ValueError):
        GridSampler(target, [(-1, 1)] * 3)
