import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillchain.diffusion import (
    add_noise,
    build_schedule,
    denoise_estimate,
    dsm_loss,
    reverse_step,
)


def test_geometric_schedule_endpoints_and_midpoint():
    sched = build_schedule(128, 1e-3, 10.0, "geometric")
    assert sched.sigma(0) == 1e-3
    assert sched.sigma(128) == 10.0
    assert sched.sigma(64) == pytest.approx(np.sqrt(1e-3 * 10.0), rel=1e-12)
    assert len(sched.sigmas) == 129


def test_linear_schedule_values():
    sched = build_schedule(2, 0.5, 2.0, "linear")
    assert np.allclose(sched.sigmas, [0.5, 1.25, 2.0])


def test_schedule_rejects_bad_configs():
    with pytest.raises(ValueError):
        build_schedule(1, 0.1, 1.0, "geometric")
    with pytest.raises(ValueError):
        build_schedule(8, 1.0, 0.5, "geometric")
    with pytest.raises(ValueError):
        build_schedule(8, -0.1, 0.5, "linear")
    with pytest.raises(ValueError):
        build_schedule(8, 0.1, 0.5, "quadratic")


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(min_value=2, max_value=400),
    smin=st.floats(min_value=1e-6, max_value=0.5),
    ratio=st.floats(min_value=1.01, max_value=1e4),
    kind=st.sampled_from(["geometric", "linear"]),
)
def test_schedule_monotone_for_all_valid_configs(T, smin, ratio, kind):
    smax = smin * ratio
    sched = build_schedule(T, smin, smax, kind)
    assert sched.sigmas.shape == (T + 1,)
    assert np.all(np.diff(sched.sigmas) > 0)
    assert sched.sigma(0) == smin and sched.sigma(T) == smax


def test_add_noise_clean_endpoint_and_determinism():
    sched = build_schedule(64, 1e-4, 5.0, "geometric")
    x0 = np.array([1.0, -2.0, 0.5])
    x = add_noise(x0, 0, sched, np.random.default_rng(0))
    assert np.max(np.abs(x - x0)) < 6 * sched.sigma(0)
    a = add_noise(x0, 30, sched, np.random.default_rng(7))
    b = add_noise(x0, 30, sched, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_add_noise_variance_matches_sigma():
    # Monte-Carlo estimate of the defining Gaussian's variance
    sched = build_schedule(32, 1e-3, 4.0, "geometric")
    rng = np.random.default_rng(1)
    t = 20
    draws = np.stack([add_noise(np.zeros(1), t, sched, rng) for _ in range(100_000)])
    var = draws.var()
    assert abs(var - sched.sigma(t) ** 2) / sched.sigma(t) ** 2 < 0.02


def test_denoise_estimate_zero_eps_and_direction():
    sched = build_schedule(16, 1e-3, 8.0, "geometric")
    x_t = np.array([0.3, -1.2])
    assert np.array_equal(denoise_estimate(x_t, np.zeros(2), 5, sched), x_t)
    eps = np.array([2.0, -1.0])
    x0 = denoise_estimate(x_t, eps, 5, sched)
    diff = x0 - x_t
    assert np.allclose(diff, sched.sigma(5) * eps)
    with pytest.raises(ValueError):
        denoise_estimate(x_t, np.zeros(3), 5, sched)


def test_denoise_estimate_matches_gaussian_posterior_mean():
    # q0 = N(mu, s^2 I): exact eps gives the closed-form posterior mean
    sched = build_schedule(64, 1e-3, 10.0, "geometric")
    mu, s = np.array([1.5, -0.7, 2.0]), 0.8
    rng = np.random.default_rng(2)
    for t in (1, 13, 40, 64):
        sig = sched.sigma(t)
        x_t = rng.normal(size=3) * 3.0
        score = -(x_t - mu) / (s**2 + sig**2)
        x0_hat = denoise_estimate(x_t, sig * score, t, sched)
        expected = (sig**2 * mu + s**2 * x_t) / (s**2 + sig**2)
        assert np.max(np.abs(x0_hat - expected)) < 1e-10


def test_denoise_with_exact_score_contracts_toward_mean():
    sched = build_schedule(32, 1e-3, 6.0, "geometric")
    mu, s = np.array([0.5, 0.5]), 1.2
    rng = np.random.default_rng(3)
    for t in (4, 16, 32):
        sig = sched.sigma(t)
        x_t = mu + rng.normal(size=2) * (s + sig)
        score = -(x_t - mu) / (s**2 + sig**2)
        x0_hat = denoise_estimate(x_t, sig * score, t, sched)
        assert np.linalg.norm(x0_hat - mu) <= np.linalg.norm(x_t - mu) + 1e-12


def test_reverse_step_validation_and_determinism():
    sched = build_schedule(16, 1e-3, 8.0, "geometric")
    x = np.ones(2)
    with pytest.raises(ValueError):
        reverse_step(x, np.zeros(2), 0, sched, np.random.default_rng(0))
    a = reverse_step(x, np.ones(2), 9, sched, np.random.default_rng(5))
    b = reverse_step(x, np.ones(2), 9, sched, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_reverse_step_noop_when_residual_noise_vanishes():
    sched = build_schedule(8, 1e-12, 1.0, "geometric")
    x = np.array([0.4, -0.9])
    out = reverse_step(x, np.zeros(2), 1, sched, np.random.default_rng(0))
    assert np.max(np.abs(out - x)) < 1e-10


def test_full_analytic_rollout_recovers_target_mean():
    # ancestral rollout with exact Gaussian scores, batched over 1e4 chains
    sched = build_schedule(64, 1e-3, 10.0, "geometric")
    mu, s = np.array([0.8, -0.3]), 0.5
    rng = np.random.default_rng(11)
    n = 10_000
    X = sched.sigma_max * rng.standard_normal((n, 2))
    for t in range(sched.T, 0, -1):
        sig = sched.sigma(t)
        eps = sig * (-(X - mu) / (s**2 + sig**2))
        X = reverse_step(X, eps, t, sched, rng)
    assert np.max(np.abs(X.mean(axis=0) - mu)) < 0.05
    assert np.isfinite(X).all()


class _ExactGaussianNet:
    """Duck-typed net returning the optimal DSM predictor for N(mu, s^2 I)."""

    def __init__(self, mu, s, sched):
        self.mu, self.s, self.sched = np.asarray(mu, dtype=float), s, sched

    def eps_and_cache(self, x_t, t, rng):
        sig = self.sched.sigmas[t][:, None]
        post = (sig**2 * self.mu + self.s**2 * x_t) / (self.s**2 + sig**2)
        eps = (post - x_t) / sig
        return eps, np.ones_like(x_t), None

    def grads_from_eps(self, cache, grad_eps):
        return {}


def test_dsm_loss_floor_matches_gaussian_conditional_variance():
    # the irreducible DSM floor is E_t[ d * s^2 / (s^2 + sigma_t^2) ]
    sched = build_schedule(32, 1e-3, 10.0, "geometric")
    mu, s, d = np.array([0.2, -1.0]), 0.7, 2
    rng = np.random.default_rng(4)
    batch = mu + s * rng.standard_normal((20_000, d))
    net = _ExactGaussianNet(mu, s, sched)
    loss, grads = dsm_loss(net, batch, sched, np.random.default_rng(5))
    floor = np.mean([d * s**2 / (s**2 + sched.sigma(t) ** 2) for t in range(1, sched.T + 1)])
    assert grads == {}
    assert loss == pytest.approx(floor, rel=0.05)


def test_dsm_loss_point_mass_floor_is_zero():
    # a point mass makes x_t determine the noise exactly, so the floor is 0
    sched = build_schedule(32, 1e-3, 10.0, "geometric")
    c = np.array([1.3])
    net = _ExactGaussianNet(c, 1e-9, sched)
    loss, _ = dsm_loss(net, np.tile(c, (5000, 1)), sched, np.random.default_rng(6))
    assert 0.0 <= loss < 1e-6


def test_dsm_loss_nonnegative_and_rejects_empty():
    sched = build_schedule(16, 1e-3, 4.0, "geometric")
    net = _ExactGaussianNet(np.zeros(3), 1.0, sched)
    rng = np.random.default_rng(7)
    for _ in range(5):
        loss, _ = dsm_loss(net, rng.normal(size=(64, 3)), sched, rng)
        assert loss >= 0.0
    with pytest.raises(ValueError):
        dsm_loss(net, np.zeros((0, 3)), sched, rng)
