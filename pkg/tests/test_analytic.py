import numpy as np
import pytest

from skillchain.analytic import (
    GaussianDensity,
    GaussianMixture,
    ImproperComposition,
    composed_chain_target,
    gaussian_product_quotient,
    grid_moments,
    noised_score,
)


def rand_gauss(dim, rng, spread=1.0):
    A = rng.normal(size=(dim, dim))
    return GaussianDensity(spread * rng.normal(size=dim), A @ A.T + dim * np.eye(dim))


def test_standard_normal_score():
    g = GaussianDensity(np.zeros(2), np.eye(2))
    assert np.allclose(noised_score(g, np.array([2.0, 0.0]), 0.0), [-2.0, 0.0])


def test_score_points_toward_mean():
    g = GaussianDensity(np.array([1.0, -2.0]), 0.5 * np.eye(2))
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=2) * 3
        s = noised_score(g, x, 0.7)
        if not np.allclose(x, g.mean):
            assert s @ (g.mean - x) > 0


def test_symmetric_mixture_score_vanishes_at_midpoint():
    comps = (
        GaussianDensity(np.array([-1.0, 0.0]), np.eye(2)),
        GaussianDensity(np.array([1.0, 0.0]), np.eye(2)),
    )
    gmm = GaussianMixture(np.array([0.5, 0.5]), comps)
    assert np.allclose(gmm.score(np.zeros(2)), 0.0, atol=1e-14)
    assert np.allclose(noised_score(gmm, np.zeros(2), 0.9), 0.0, atol=1e-14)


def test_noised_score_matches_log_density_finite_differences():
    rng = np.random.default_rng(1)
    g = rand_gauss(3, rng)
    gmm = GaussianMixture(
        np.array([0.3, 0.7]),
        (rand_gauss(2, rng), rand_gauss(2, rng)),
    )
    for density, dim in ((g, 3), (gmm, 2)):
        for sigma in (0.0, 0.4, 2.5):
            noised = density.noised(sigma) if sigma > 0 else density
            x = rng.normal(size=dim)
            s = noised_score(density, x, sigma)
            h = 1e-5
            fd = np.zeros(dim)
            for k in range(dim):
                e = np.zeros(dim)
                e[k] = h
                fd[k] = (noised.logpdf(x + e)[0] - noised.logpdf(x - e)[0]) / (2 * h)
            assert np.linalg.norm(fd - s) / max(np.linalg.norm(fd), 1e-12) < 1e-8


def test_product_of_equal_precision_gaussians():
    a = GaussianDensity(np.array([0.0]), np.array([[1.0]]))
    b = GaussianDensity(np.array([2.0]), np.array([[1.0]]))
    p = gaussian_product_quotient([(a, 1.0), (b, 1.0)])
    assert p.mean == pytest.approx(1.0)
    assert p.cov[0, 0] == pytest.approx(0.5)


def test_quotient_cancellation_recovers_first_density():
    rng = np.random.default_rng(2)
    a, b = rand_gauss(2, rng), rand_gauss(2, rng)
    p = gaussian_product_quotient([(a, 1.0), (b, 1.0), (b, -1.0)])
    assert np.allclose(p.mean, a.mean, atol=1e-10)
    assert np.allclose(p.cov, a.cov, atol=1e-10)


def test_product_quotient_order_invariant_and_associative():
    rng = np.random.default_rng(3)
    terms = [(rand_gauss(2, rng), e) for e in (1.0, 0.5, -0.3, 1.0)]
    ref = gaussian_product_quotient(terms)
    for perm_seed in range(5):
        perm = np.random.default_rng(perm_seed).permutation(len(terms))
        p = gaussian_product_quotient([terms[i] for i in perm])
        assert np.allclose(p.mean, ref.mean, atol=1e-12)
        assert np.allclose(p.cov, ref.cov, atol=1e-12)
    # associativity: fold the first two terms into their own composition
    head = gaussian_product_quotient(terms[:2])
    folded = gaussian_product_quotient([(head, 1.0)] + terms[2:])
    assert np.allclose(folded.mean, ref.mean, atol=1e-12)
    assert np.allclose(folded.cov, ref.cov, atol=1e-12)


def test_gamma_weighted_quotient_against_1d_quadrature():
    a = GaussianDensity(np.array([0.4]), np.array([[0.8]]))
    b = GaussianDensity(np.array([-0.9]), np.array([[1.7]]))
    gamma = 0.3
    p = gaussian_product_quotient([(a, 1.0), (b, -gamma)])

    def logpdf(x):
        return a.logpdf(x) - gamma * b.logpdf(x)

    sd = float(np.sqrt(p.cov[0, 0]))
    _, mean, cov = grid_moments(logpdf, p.mean - 8 * sd, p.mean + 8 * sd, 801)
    assert abs(mean[0] - p.mean[0]) < 1e-6
    assert abs(cov[0, 0] - p.cov[0, 0]) < 1e-6


def test_improper_composition_raises():
    a = GaussianDensity(np.zeros(1), np.array([[1.0]]))
    with pytest.raises(ImproperComposition):
        gaussian_product_quotient([(a, 1.0), (a, -2.0)])


def test_single_skill_chain_is_identity():
    rng = np.random.default_rng(4)
    g = rand_gauss(4, rng)
    out = composed_chain_target([g], 0.5, state_dim=1, action_dim=2)
    assert np.allclose(out.mean, g.mean, atol=1e-10)
    assert np.allclose(out.cov, g.cov, atol=1e-10)


def test_two_skill_shared_node_precision_pattern_and_quadrature():
    # standard-normal marginals at the shared node: the gamma-mix subtracts
    # exactly unit precision there, leaving J_11 = L1[1,1] + L2[0,0] - 1
    q1 = GaussianDensity(np.array([0.3, 0.8]), np.array([[1.0, 0.6], [0.6, 1.0]]))
    q2 = GaussianDensity(np.array([0.8, -0.4]), np.array([[1.0, -0.5], [-0.5, 1.0]]))
    target = composed_chain_target([q1, q2], 0.5, state_dim=1, action_dim=0)
    J = np.linalg.inv(target.cov)
    L1, L2 = q1.precision(), q2.precision()
    expected_shared = L1[1, 1] + L2[0, 0] - 1.0
    assert J[1, 1] == pytest.approx(expected_shared, abs=1e-10)

    def logpdf(x):
        lp = q1.logpdf(x[:, :2]) + q2.logpdf(x[:, 1:])
        lp -= 0.5 * q1.marginal([1]).logpdf(x[:, 1:2]) + 0.5 * q2.marginal([0]).logpdf(x[:, 1:2])
        return lp

    sds = np.sqrt(np.diag(target.cov))
    _, mean, cov = grid_moments(logpdf, target.mean - 8 * sds, target.mean + 8 * sds, 401)
    assert np.max(np.abs(mean - target.mean)) < 1e-6
    assert np.max(np.abs(cov - target.cov)) < 1e-6


def test_three_independent_skills_block_structure():
    # diagonal joints: hand-assembled precision from the subtraction rule
    gamma = 0.4
    prec = [np.diag([2.0, 3.0, 4.0]), np.diag([5.0, 6.0, 7.0]), np.diag([8.0, 9.0, 10.0])]
    skills = [GaussianDensity(np.zeros(3), np.linalg.inv(p)) for p in prec]
    out = composed_chain_target(skills, gamma, state_dim=1, action_dim=1)
    J = np.linalg.inv(out.cov)
    # interior node j: pred s' precision + succ s precision - gamma*succ_s - (1-gamma)*pred_s'
    expected = np.diag(
        [
            2.0, 3.0,
            4.0 + 5.0 - gamma * 5.0 - (1 - gamma) * 4.0,
            6.0,
            7.0 + 8.0 - gamma * 8.0 - (1 - gamma) * 7.0,
            9.0, 10.0,
        ]
    )
    assert np.allclose(J, expected, atol=1e-10)


def test_composed_target_sampling_matches_moments():
    rng = np.random.default_rng(5)
    skills = [rand_gauss(3, rng) for _ in range(2)]
    target = composed_chain_target(skills, 0.5, state_dim=1, action_dim=1)
    draws = target.sample(np.random.default_rng(6), 200_000)
    se = np.sqrt(np.diag(target.cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - target.mean) < 5 * se)
    assert np.allclose(np.cov(draws.T), target.cov, atol=0.03 * np.max(np.abs(target.cov)))


def test_gaussian_validation():
    with pytest.raises(np.linalg.LinAlgError):
        GaussianDensity(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianMixture(np.array([0.5, 0.6]), (rand_gauss(1, np.random.default_rng(0)),) * 2)
