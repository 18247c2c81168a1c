import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pidsteer import plant as P
from pidsteer.controllers import (
    ControllerState,
    Gains,
    SteerFn,
    apply_steer,
    control,
    controls_from_vectors,
    steering_vectors_nonsequential,
    steering_vectors_sequential,
)
from pidsteer.errors import DegenerateDirectionError, InvalidInputError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
gain = st.floats(0, 3, allow_nan=False)


# ---------------------------------------------------------------- Gains / config

def test_gains_validation_and_kind():
    assert Gains(1.0).kind == "P"
    assert Gains(1.0, 0.5).kind == "PI"
    assert Gains(1.0, 0.5, 0.1).kind == "PID"
    assert Gains(1.0, 0.0, 0.1).kind == "PD"
    with pytest.raises(InvalidInputError):
        Gains(-0.1)
    with pytest.raises(InvalidInputError):
        Gains(0.0, float("nan"))


def test_gains_from_config():
    assert Gains.from_config({"kp": 0.5, "kd": 0.2}) == Gains(0.5, 0.0, 0.2)
    with pytest.raises(InvalidInputError):
        Gains.from_config({"kp": 1, "gain": 2})
    assert Gains.from_config(Gains(1, 2, 3).to_dict()) == Gains(1, 2, 3)


def test_steer_fn_config():
    assert SteerFn.from_config({}) == SteerFn("add", 1.0)
    assert SteerFn.from_config({"kind": "directional-ablation"}).kind == "directional-ablation"
    with pytest.raises(InvalidInputError):
        SteerFn("rotate")


# ---------------------------------------------------------------- control law

def test_pure_p():
    u, _ = control(ControllerState.initial(Gains(1.0), 2), np.array([2.0, -1.0]))
    np.testing.assert_array_equal(u, [2.0, -1.0])


def test_pid_second_step():
    g = Gains(1.0, 0.5, 0.25)
    state = ControllerState.initial(g, 1)
    _, state = control(state, np.array([1.0]))
    u, state = control(state, np.array([0.5]))
    assert u[0] == pytest.approx(0.875)
    assert state.step == 2


def test_derivative_kick_at_first_step():
    g = Gains(0.0, 0.0, 0.7)
    u, _ = control(ControllerState.initial(g, 2), np.array([1.0, -2.0]))
    np.testing.assert_allclose(u, [0.7, -1.4])


def test_control_rejects_bad_error():
    state = ControllerState.initial(Gains(1.0), 2)
    with pytest.raises(InvalidInputError):
        control(state, np.array([1.0, np.nan]))
    with pytest.raises(InvalidInputError):
        control(state, np.array([1.0, 2.0, 3.0]))


def test_control_is_pure():
    state = ControllerState.initial(Gains(1.0, 1.0, 1.0), 1)
    control(state, np.array([3.0]))
    np.testing.assert_array_equal(state.integrator, [0.0])
    assert state.step == 0


@given(arrays(float, (12, 2), elements=finite), gain, gain, gain)
def test_matches_independent_accumulator(errs, kp, ki, kd):
    state = ControllerState.initial(Gains(kp, ki, kd), 2)
    acc = np.zeros(2)  # holds ki * sum of past errors
    prev = np.zeros(2)
    for e in errs:
        u, state = control(state, e)
        expected = kp * e + acc + kd * (e - prev)
        np.testing.assert_allclose(u, expected, rtol=1e-12, atol=1e-9)
        acc = acc + ki * e
        prev = e
    np.testing.assert_allclose(state.integrator, errs.sum(0), atol=1e-9)


@given(arrays(float, (8, 3), elements=finite), gain, gain, gain, gain)
def test_linear_in_kp(errs, kp, extra, ki, kd):
    a = ControllerState.initial(Gains(kp, ki, kd), 3)
    b = ControllerState.initial(Gains(kp + extra, ki, kd), 3)
    for e in errs:
        ua, a = control(a, e)
        ub, b = control(b, e)
        np.testing.assert_allclose(ub, ua + extra * e, rtol=1e-12, atol=1e-9)


# ---------------------------------------------------------------- steering functions

def test_apply_steer_examples():
    np.testing.assert_array_equal(apply_steer(SteerFn(), np.array([1.0, 1.0]), np.array([0.0, 1.0])), [1, 2])
    abl = SteerFn("directional-ablation")
    np.testing.assert_array_equal(apply_steer(abl, np.array([3.0, 4.0]), np.array([1.0, 0.0])), [0, 4])
    with pytest.raises(DegenerateDirectionError):
        apply_steer(abl, np.ones(2), np.zeros(2))
    with pytest.raises(InvalidInputError):
        apply_steer(SteerFn(), np.ones(2), np.ones(3))


def test_ablation_orthogonal_random():
    rng = np.random.default_rng(0)
    abl = SteerFn("directional-ablation")
    for _ in range(50):
        x, u = rng.standard_normal(5), rng.standard_normal(5)
        assert abs(apply_steer(abl, x, u) @ u) <= 1e-10


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite).filter(lambda u: np.linalg.norm(u) > 1e-3))
def test_ablation_idempotent(x, u):
    abl = SteerFn("directional-ablation")
    once = apply_steer(abl, x, u)
    np.testing.assert_allclose(apply_steer(abl, once, u), once, atol=1e-12 * max(1.0, np.linalg.norm(x)))


def test_ablation_scale_free_in_u():
    abl = SteerFn("directional-ablation")
    x, u = np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 1.0])
    np.testing.assert_allclose(apply_steer(abl, x, u), apply_steer(abl, x, 1e6 * u))


# ---------------------------------------------------------------- steering vectors

def test_nonsequential_examples():
    rng = np.random.default_rng(1)
    traj = rng.standard_normal((4, 3, 2))
    r = steering_vectors_nonsequential(traj, traj)
    assert all(np.all(rk == 0) for rk in r)
    assert all(np.all(u == 0) for u in controls_from_vectors(Gains(1, 1, 1), r))
    other = rng.standard_normal((4, 3, 2))
    r = steering_vectors_nonsequential(traj, other)
    for k in range(4):
        np.testing.assert_allclose(r[k], sum(traj[k, i] - other[k, i] for i in range(3)) / 3)
    single = steering_vectors_nonsequential(traj[:, :1], other[:, :1])
    np.testing.assert_allclose(single[2], traj[2, 0] - other[2, 0])
    with pytest.raises(InvalidInputError):
        steering_vectors_nonsequential(traj, other[:3])


def test_sequential_zero_gains_is_unsteered():
    pl = P.make_random_plant(3, 4, 10, kind="tanh-residual", heterogeneity=0.3, seed=0)
    r, tr = steering_vectors_sequential(pl, Gains())
    plus, minus = [pl.initial_plus], [pl.initial_minus]
    for k in range(pl.layer_count):
        p, m = P.step_exact(pl, plus[-1], minus[-1], np.zeros(3), k)
        plus.append(p)
        minus.append(m)
    expected = steering_vectors_nonsequential(np.array(plus), np.array(minus))
    for a, b in zip(r, expected):
        np.testing.assert_allclose(a, b, atol=1e-15)
    assert len(r) == pl.layer_count + 1
    assert tr.steps == pl.layer_count


def hand_mean_act(plant):
    """Mean-AcT: shift every minus state by the current difference of branch means."""
    plus, minus = plant.initial_plus.copy(), plant.initial_minus.copy()
    out = [plus.mean(0) - minus.mean(0)]
    for k in range(plant.layer_count):
        shift = plus.mean(0) - minus.mean(0)
        layer = plant.layers[k]
        minus = np.array([layer[i](minus[i] + shift) for i in range(plant.pairs)]) - plant.injection_at(k)
        plus = np.array([layer[i](plus[i]) for i in range(plant.pairs)])
        out.append(plus.mean(0) - minus.mean(0))
    return np.array(out)


def test_unit_p_gain_is_mean_act():
    pl = P.make_random_plant(3, 5, 12, heterogeneity=0.4, seed=2, injection=0.1)
    r, _ = steering_vectors_sequential(pl, Gains(kp=1.0))
    assert np.max(np.abs(np.array(r) - hand_mean_act(pl))) <= 1e-12


def test_pi_shrinks_error_on_homogeneous_plant():
    pl = P.make_random_plant(3, 4, 40, heterogeneity=0.0, seed=3, positive_jacobian=True)
    m = pl.m_bound
    kp = 0.5
    h = 0.5 * (1 - m * (1 - kp)) / m
    r, _ = steering_vectors_sequential(pl, Gains(kp, h))
    assert np.linalg.norm(r[-1]) < np.linalg.norm(r[0])


def test_sequential_integrator_replay_and_ablation():
    pl = P.make_random_plant(3, 4, 15, kind="tanh-residual", heterogeneity=0.2, seed=4)
    r, tr = steering_vectors_sequential(pl, Gains(0.2, 0.1, 0.05), SteerFn("directional-ablation"))
    for k in range(tr.steps + 1):
        np.testing.assert_allclose(tr.s[k], np.sum(r[:k], axis=0), atol=1e-12)
    np.testing.assert_allclose(tr.e_bar, np.array(r))


def test_sequential_dim_mismatch():
    pl = P.make_random_plant(3, 2, 2, seed=0)
    with pytest.raises(InvalidInputError):
        steering_vectors_sequential(pl, ControllerState.initial(Gains(1.0), 4))
