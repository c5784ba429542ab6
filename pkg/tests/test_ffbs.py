import numpy as np
import pytest

from jumpchain.core import DiscreteEmission, ImpossibleEvidence, IntensityModel, ModelError
from jumpchain.ffbs import (
    SkeletonHmm,
    backward_sample,
    build_skeleton_hmm,
    forward_filter,
    smoothing_marginals,
)
from jumpchain.oracle import enumerate_skeletons


def random_hmm(rng, S, N):
    return SkeletonHmm(rng.dirichlet(np.ones(S)), rng.dirichlet(np.ones(S), size=(N, S)),
                       rng.normal(0, 2, size=(N + 1, S)))


def test_shapes_are_checked():
    with pytest.raises(ModelError):
        SkeletonHmm(np.ones(2) / 2, np.full((1, 2, 2), 0.5), np.zeros((1, 2)))
    with pytest.raises(ModelError):
        SkeletonHmm(np.ones(2) / 2, np.full((1, 2, 2), 0.6), np.zeros((2, 2)))


def test_smoothing_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(20):
        h = random_hmm(rng, int(rng.integers(2, 5)), int(rng.integers(0, 5)))
        configs, probs, lz = enumerate_skeletons(h)
        sm = smoothing_marginals(h)
        for i in range(h.n_steps + 1):
            exact = np.bincount(configs[:, i], weights=probs, minlength=h.n_states)
            np.testing.assert_allclose(sm[i], exact, atol=1e-12)
        assert forward_filter(h).log_normalizer == pytest.approx(lz, abs=1e-10)


def test_log_space_survives_extreme_potentials():
    h = SkeletonHmm(np.array([0.5, 0.5]), np.full((3, 2, 2), 0.5),
                    np.array([[-1e4, -1e4 - 1], [0, -800], [-900, 0], [0, 0]]))
    f = forward_filter(h)
    assert np.isfinite(f.log_normalizer)
    assert np.all(np.isfinite(smoothing_marginals(h)))


def test_impossible_evidence_is_reported():
    h = SkeletonHmm(np.array([1.0, 0.0]), np.array([np.eye(2)]), np.array([[0.0, 0.0], [-np.inf, 0.0]]))
    with pytest.raises(ImpossibleEvidence):
        forward_filter(h)


def test_backward_sample_respects_zero_states():
    h = SkeletonHmm(np.array([0.0, 1.0, 0.0]), np.array([np.eye(3)[[1, 2, 0]]] * 2),
                    np.zeros((3, 3)))
    f = forward_filter(h)
    rng = np.random.default_rng(0)
    for _ in range(50):
        np.testing.assert_array_equal(backward_sample(h, f, rng), [1, 2, 0])
    np.testing.assert_array_equal(backward_sample(h, f, rng, size=20), np.tile([1, 2, 0], (20, 1)))


def test_scalar_and_vector_paths_agree_in_law():
    rng = np.random.default_rng(3)
    h = random_hmm(rng, 3, 3)
    f = forward_filter(h)
    configs, probs, _ = enumerate_skeletons(h)
    n = 40000
    one = np.array([backward_sample(h, f, rng) for _ in range(n)])
    many = backward_sample(h, f, rng, size=n)
    for d in (one, many):
        idx = np.ravel_multi_index(d.T, (3,) * 4)
        emp = np.bincount(idx, minlength=len(probs)) / n
        assert 0.5 * np.abs(emp - probs).sum() < 0.03


def test_build_skeleton_hmm_potentials():
    m = IntensityModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), [0.5, 0.5], 0.0, 2.0, R=np.array([2.0, 4.0]))
    em = DiscreteEmission(np.array([[0.8, 0.2], [0.3, 0.7]]))
    ev = em.evidence(np.array([0.5, 1.5]), np.array([0, 1]))
    T = np.array([0.0, 0.5, 1.2])
    h = build_skeleton_hmm(m, T, ev)
    # observation at 0.5 sits in [0.5, 1.2), the one at 1.5 in [1.2, 2]
    expected = np.array([
        [np.log(2.0) - 2.0 * 0.5, np.log(4.0) - 4.0 * 0.5],
        [np.log(2.0) - 2.0 * 0.7 + np.log(0.8), np.log(4.0) - 4.0 * 0.7 + np.log(0.3)],
        [-2.0 * 0.8 + np.log(0.2), -4.0 * 0.8 + np.log(0.7)],
    ])
    np.testing.assert_allclose(h.log_g, expected, atol=1e-14)
    np.testing.assert_allclose(h.P[0], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ModelError):
        build_skeleton_hmm(m, np.array([0.1, 0.5]))


def test_backward_sample_tv_tracks_the_noise_floor():
    # an exact sampler's empirical TV concentrates near the multinomial noise floor
    rng = np.random.default_rng(11)
    h = random_hmm(rng, 4, 4)
    f = forward_filter(h)
    _, probs, _ = enumerate_skeletons(h)
    n = 200_000
    draws = backward_sample(h, f, rng, size=n)
    idx = np.ravel_multi_index(draws.T, (4,) * 5)
    tv = 0.5 * np.abs(np.bincount(idx, minlength=len(probs)) / n - probs).sum()
    floor = 0.5 * np.sum(np.sqrt(2 * probs * (1 - probs) / (np.pi * n)))
    assert 0.8 * floor < tv < 1.2 * floor
