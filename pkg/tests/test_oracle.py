import math

import numpy as np
import pytest
from scipy.linalg import expm

from jumpchain.core import DiscreteEmission, Evidence, IntensityModel, Trajectory
from jumpchain.ffbs import SkeletonHmm, forward_filter
from jumpchain.oracle import (
    enumerate_skeletons,
    grid_posterior,
    prior_marginal,
    richardson_marginals,
    transition_probability,
)


def test_two_state_closed_form():
    a, b, t = 1.3, 0.4, 0.9
    Q = np.array([[-a, a], [b, -b]])
    p01 = a / (a + b) * (1 - math.exp(-(a + b) * t))
    P = transition_probability(Q, t)
    assert P[0, 1] == pytest.approx(p01, abs=1e-13)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_matches_scipy_expm_and_chapman_kolmogorov():
    rng = np.random.default_rng(0)
    for _ in range(5):
        Q = rng.exponential(size=(4, 4))
        np.fill_diagonal(Q, 0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        for s, t in [(0.3, 1.7), (4.0, 10.0)]:
            np.testing.assert_allclose(transition_probability(Q, s), expm(Q * s), atol=1e-12)
            lhs = transition_probability(Q, s) @ transition_probability(Q, t)
            np.testing.assert_allclose(lhs, transition_probability(Q, s + t), atol=1e-10)


def test_sub_generator_gives_substochastic():
    Q = np.array([[-2.0, 1.0], [0.5, -0.5]])
    P = transition_probability(Q, 1.0)
    np.testing.assert_allclose(P, expm(Q), atol=1e-12)
    assert P.sum(axis=1)[0] < 1


def test_grid_posterior_without_evidence_is_prior():
    Q = np.array([[[-1.0, 1.0], [2.0, -2.0]], [[-0.5, 0.5], [3.0, -3.0]]])
    m = IntensityModel(Q, [0.9, 0.1], 0.0, 2.0, breakpoints=[0.75])
    gp = grid_posterior(m, None, 0.01)
    for t in [0.0, 0.5, 0.75, 1.33, 2.0]:
        expected = prior_marginal(m, t)
        np.testing.assert_allclose(gp.at(t)[0], expected, atol=1e-10)
    # prior_marginal itself against a direct product of expm
    ref = np.array([0.9, 0.1]) @ expm(Q[0] * 0.75) @ expm(Q[1] * 0.58)
    np.testing.assert_allclose(prior_marginal(m, 1.33), ref, atol=1e-12)


def test_grid_posterior_single_observation_bayes():
    # one observation at t: posterior at t is prior(t) * L / normalizer
    m = IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), [1.0, 0.0], 0.0, 1.0)
    ev = Evidence(np.array([0.5]), np.log([[0.2, 0.9]]))
    gp = grid_posterior(m, ev, 0.05)
    pr = prior_marginal(m, 0.5)
    post = pr * [0.2, 0.9]
    np.testing.assert_allclose(gp.at(0.5)[0], post / post.sum(), atol=1e-12)
    extrap, err = richardson_marginals(m, ev, 0.05, [0.5])
    np.testing.assert_allclose(extrap[0], post / post.sum(), atol=1e-12)
    assert err < 1e-12


def test_grid_posterior_rejects_bad_steps():
    m = IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), [1.0, 0.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        grid_posterior(m, None, 0.3)


def test_enumeration_matches_forward_filter():
    rng = np.random.default_rng(4)
    for _ in range(10):
        S, N = 3, 4
        h = SkeletonHmm(rng.dirichlet(np.ones(S)), rng.dirichlet(np.ones(S), size=(N, S)),
                        rng.normal(size=(N + 1, S)))
        _, probs, lz = enumerate_skeletons(h)
        assert probs.sum() == pytest.approx(1.0)
        assert lz == pytest.approx(forward_filter(h).log_normalizer, abs=1e-10)
    with pytest.raises(ValueError):
        enumerate_skeletons(SkeletonHmm(np.ones(4) / 4, np.full((12, 4, 4), 0.25), np.zeros((13, 4))))
