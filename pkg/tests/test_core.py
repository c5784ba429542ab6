import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpchain.core import (
    DiscreteEmission,
    EventSequence,
    Evidence,
    ImpossibleEvidence,
    IntensityModel,
    ModelError,
    StateSpace,
    Trajectory,
    compact,
    evaluate,
    jump_count,
    log_likelihood,
    mjp_log_density,
    require_valid,
    validate_model,
)


def two_state(R=None, **kw):
    return IntensityModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), [0.5, 0.5], 0.0, 2.0, R=R, **kw)


def test_state_space():
    s = StateSpace(("a", "b"))
    assert s.size == 2 and s.index("b") == 1
    assert StateSpace.of_size(3).labels == ("0", "1", "2")
    with pytest.raises(ModelError):
        StateSpace(("a", "a"))
    with pytest.raises(ModelError):
        s.index("c")


def test_trajectory_invariants():
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    assert jump_count(x) == 3
    np.testing.assert_allclose(x.occupation(2), [1.3, 0.7])
    with pytest.raises(ModelError):
        Trajectory(0.0, 2.0, [0.5], [1, 1])
    with pytest.raises(ModelError):
        Trajectory(0.0, 2.0, [2.0], [0, 1])
    with pytest.raises(ModelError):
        Trajectory(0.0, 2.0, [0.7, 0.5], [0, 1, 0])
    with pytest.raises(ModelError):
        Trajectory(0.0, 2.0, [0.5, 0.5 + 1e-14], [0, 1, 0])
    with pytest.raises(ValueError):
        x.jump_times[0] = 1.0


def test_evaluate_is_right_continuous():
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    assert evaluate(x, 0.0) == 0
    assert evaluate(x, 0.5) == 1
    assert evaluate(x, 1.1999) == 1
    assert evaluate(x, 1.2) == 0
    assert evaluate(x, 2.0) == 0
    np.testing.assert_array_equal(evaluate(x, [0.0, 0.5, 1.0]), [0, 1, 1])
    with pytest.raises(ValueError):
        evaluate(x, 2.1)


def test_compact_drops_virtual_jumps():
    ev = EventSequence(0.0, 2.0, [0.0, 0.3, 0.5, 0.9, 1.2], [0, 0, 1, 1, 0])
    x = compact(ev)
    assert x == Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    assert jump_count(compact(EventSequence(0.0, 1.0, [0.0], [1]))) == 1
    with pytest.raises(ModelError):
        EventSequence(0.0, 1.0, [0.1], [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.001, 0.999), st.integers(0, 2)), max_size=12), st.integers(0, 2))
def test_compact_preserves_the_path(events, s0):
    times = sorted({round(t, 6) for t, _ in events})
    states = [s0] + [s for _, s in events][: len(times)]
    ev = EventSequence(0.0, 1.0, [0.0] + times, states)
    x = compact(ev)
    probe = np.linspace(0, 1, 97)
    idx = np.searchsorted(ev.times, probe, side="right") - 1
    np.testing.assert_array_equal(evaluate(x, probe), ev.states[idx])


def test_model_blocks_and_breakpoints():
    Q = np.array([[[-1.0, 1.0], [1.0, -1.0]], [[-3.0, 3.0], [0.5, -0.5]]])
    m = IntensityModel(Q, [1.0, 0.0], 0.0, 2.0, breakpoints=[1.0])
    assert m.n_blocks == 2
    # a time on a breakpoint belongs to the block on its right
    assert m.block_index(1.0) == 1 and m.block_index(0.999) == 0 and m.block_index(2.0) == 1
    np.testing.assert_allclose(m.leave, [[1.0, 1.0], [3.0, 0.5]])
    # default R: 2 * max over time of the leaving rate of the state, per block
    np.testing.assert_allclose(m.R_blocks, 2 * np.maximum(m.leave, 1e-6 * 3.0))
    np.testing.assert_allclose(m.P_blocks.sum(axis=2), 1.0)
    np.testing.assert_allclose(m.cumulative_R(1.5), m.R_blocks[0] + 0.5 * m.R_blocks[1])


def test_model_rejects_bad_input():
    with pytest.raises(ModelError):
        IntensityModel(np.array([[-1.0, -1.0], [1.0, -1.0]]), [0.5, 0.5], 0, 1)
    with pytest.raises(ModelError):
        IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), [0.5, 0.6], 0, 1)
    with pytest.raises(ModelError):
        IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), [0.5, 0.5], 1, 1)
    with pytest.raises(ModelError):
        IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), [0.5, 0.5], 0, 1, R=-1.0)


def test_mjp_log_density_hand_value():
    # log 0.5 + log Q(0,1) + log Q(1,0) - (1*0.5 + 2*0.7 + 1*0.8) = log(0.5*1*2) - 2.7
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    assert mjp_log_density(two_state(), x) == pytest.approx(-2.7, abs=1e-14)
    assert mjp_log_density(two_state(), Trajectory.constant(0.0, 2.0, 1)) == pytest.approx(math.log(0.5) - 4.0)


def test_mjp_density_is_normalized_over_short_paths():
    # P(no jump) + P(one jump) + ... computed by integrating the density
    from scipy.integrate import quad
    m = two_state()
    p0 = sum(math.exp(mjp_log_density(m, Trajectory.constant(0, 2, s))) for s in (0, 1))
    p1 = sum(quad(lambda t, s=s: math.exp(mjp_log_density(m, Trajectory(0, 2, [t], [s, 1 - s]))), 0, 2)[0]
             for s in (0, 1))
    # exact: 0.5 e^{-2} + 0.5 e^{-4}; one jump: 0.5 * int e^{-t} e^{-2(2-t)} + 0.5 * 2 int e^{-2t} e^{-(2-t)}
    assert p0 == pytest.approx(0.5 * math.exp(-2) + 0.5 * math.exp(-4))
    exact1 = 0.5 * math.exp(-4) * (math.exp(2) - 1) + math.exp(-2) * (1 - math.exp(-2))
    assert p1 == pytest.approx(exact1, rel=1e-10)


def test_evidence_and_likelihood():
    em = DiscreteEmission(np.array([[0.8, 0.2], [0.3, 0.7]]))
    ev = em.evidence(np.array([0.5, 1.5]), np.array([0, 1]))
    x = Trajectory(0.0, 2.0, [1.0], [0, 1])
    assert log_likelihood(ev, x) == pytest.approx(math.log(0.8) + math.log(0.7))
    assert len(Evidence.empty(2)) == 0
    assert log_likelihood(Evidence.empty(2), x) == 0.0
    with pytest.raises(ImpossibleEvidence):
        Evidence(np.array([0.5]), np.array([[-np.inf, -np.inf]]))
    with pytest.raises(ModelError):
        Evidence(np.array([0.5]), np.array([[0.0, 0.0, 0.0]])).check_against(two_state())


def test_emission_sampling_frequencies():
    em = DiscreteEmission(np.array([[0.8, 0.2], [0.3, 0.7]]))
    x = Trajectory(0.0, 2.0, [1.0], [0, 1])
    rng = np.random.default_rng(0)
    ys = np.array([em.sample(x, np.array([0.5, 1.5]), rng) for _ in range(20000)])
    np.testing.assert_allclose(ys.mean(axis=0), [0.2, 0.7], atol=0.015)


def test_validation_passes_and_reports_eta():
    rep = validate_model(two_state())
    assert rep.passed and rep.irreducible
    assert rep.eta_max == pytest.approx(0.5)
    assert rep.q_min == pytest.approx(1.0)
    assert not validate_model(two_state(), eta=0.6).passed
    assert validate_model(two_state(), eta=0.5).passed
    require_valid(two_state())
    with pytest.raises(ModelError):
        require_valid(two_state(R=np.array([1.0, 2.0])))
