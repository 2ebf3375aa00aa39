from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regretsls.ltv_model import (
    IndefiniteWeightError,
    InvalidBoundError,
    InvalidHorizonError,
    LtvSystem,
    SafetySpec,
    build_box_bounds,
    build_box_safety,
    build_cost,
    build_quadrotor_system,
    build_synthetic_system,
    lift,
)
from regretsls.sls_core import block_upper_max

from conftest import random_system


def test_synthetic_matrices():
    s = build_synthetic_system(0.85, 5)
    assert s.T == 5 and (s.dx, s.du, s.dy) == (3, 2, 2)
    assert s.A[0][0, 0] == pytest.approx(0.595)
    assert s.B[0][1, 0] == 2.0
    np.testing.assert_array_equal(s.C[0], [[1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(s.C[1], [[0, 1, 0], [0, 0, 1]])
    np.testing.assert_array_equal(s.C[4], s.C[0])


def test_synthetic_unstable_and_zero_scale():
    assert build_synthetic_system(1.05, 2).A[0][2, 2] == pytest.approx(0.84)
    s = build_synthetic_system(0.0, 3)
    assert np.all(s.A == 0)
    np.testing.assert_array_equal(s.B[2], build_synthetic_system(1.0, 3).B[2])


def test_horizon_errors():
    with pytest.raises(InvalidHorizonError):
        build_synthetic_system(0.85, 1)
    with pytest.raises(InvalidHorizonError):
        build_quadrotor_system(1)


def test_quadrotor_matrices():
    s = build_quadrotor_system(4)
    assert s.A[0][0, 3] == pytest.approx(0.1)
    assert s.B[0][3, 0] == pytest.approx(-0.981)
    assert s.B[0][4, 1] == pytest.approx(0.981)
    assert s.B[0][5, 2] == pytest.approx(0.1)
    assert s.B[0][0, 0] == pytest.approx(-0.0491)
    pos = np.hstack([np.eye(3), np.zeros((3, 3))])
    vel = np.hstack([np.zeros((3, 3)), np.eye(3)])
    for t, sel in enumerate([pos, vel, vel, pos]):
        np.testing.assert_array_equal(s.C[t], sel)
    s2 = build_quadrotor_system(2)
    assert (s2.dx, s2.du, s2.dy) == (6, 3, 3)


def test_system_validation():
    with pytest.raises(ValueError):
        LtvSystem([np.eye(2)] * 3, [np.ones((2, 1))] * 2, [np.ones((1, 2))] * 3)
    with pytest.raises(ValueError):
        LtvSystem([np.eye(2)] * 2, [np.ones((3, 1))] * 2, [np.ones((1, 2))] * 2)
    with pytest.raises(ValueError):
        LtvSystem([np.array([[np.nan]])] * 2, [np.ones((1, 1))] * 2, [np.ones((1, 1))] * 2)


def test_system_is_immutable():
    s = build_synthetic_system(0.85, 3)
    with pytest.raises(ValueError):
        s.A[0][0, 0] = 1.0


def test_lift_scalar_by_hand():
    lifted = lift(LtvSystem.constant([[0.5]], [[1.0]], [[1.0]], 2))
    np.testing.assert_array_equal(lifted.ZA, [[0, 0], [0.5, 0]])
    np.testing.assert_array_equal(lifted.ZB, [[0, 0], [1, 0]])


def test_lift_single_step_has_zero_shift():
    lifted = lift(LtvSystem.constant(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), 1))
    assert not lifted.ZA.any() and not lifted.ZB.any()


def test_lift_zeroes_last_blocks():
    lifted = lift(build_synthetic_system(0.85, 3))
    assert not lifted.calA[6:, 6:].any()
    assert not lifted.calB[6:, 4:].any()
    np.testing.assert_array_equal(lifted.calA[:3, :3], 0.85 * np.array([[0.7, 0.2, 0], [0.3, 0.7, -0.1],
                                                                        [0, -0.2, 0.8]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 6), dx=st.integers(1, 4), du=st.integers(1, 3),
       dy=st.integers(1, 3))
def test_lift_strictly_lower_and_deterministic(seed, T, dx, du, dy):
    sys_ = random_system(np.random.default_rng(seed), T, dx, du, dy)
    a, b = lift(sys_), lift(sys_)
    # strictly lower: zero on and above the block diagonal
    assert block_upper_max(a.ZA, T, dx, dx) == 0.0
    assert block_upper_max(a.ZB, T, dx, du) == 0.0
    for t in range(T):
        assert not a.ZA[t * dx:(t + 1) * dx, t * dx:(t + 1) * dx].any()
        assert not a.ZB[t * dx:(t + 1) * dx, t * du:(t + 1) * du].any()
    for name in ("calA", "calB", "calC", "ZA", "ZB"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_cost_identity_weights():
    c = build_cost(np.eye(3), np.eye(2), 4)
    np.testing.assert_array_equal(c.D, np.eye(20))


def test_cost_singular_q():
    c = build_cost(np.zeros((2, 2)), np.eye(1), 2)
    np.testing.assert_allclose(c.D_sqrt, np.diag([0, 0, 0, 0, 1, 1]), atol=1e-12)


def test_cost_diagonal_sqrt():
    c = build_cost([[4.0]], [[9.0]], 1)
    np.testing.assert_allclose(c.D_sqrt, np.diag([2.0, 3.0]))


def test_cost_errors_and_symmetrisation():
    with pytest.raises(IndefiniteWeightError):
        build_cost(np.eye(2), np.zeros((1, 1)), 2)
    with pytest.raises(IndefiniteWeightError):
        build_cost(-np.eye(2), np.eye(1), 2)
    c = build_cost([[1.0, 2.0], [0.0, 5.0]], [[1.0]], 1)
    np.testing.assert_allclose(c.Q, [[1.0, 1.0], [1.0, 5.0]])


def test_cost_accepts_lifted_weights(rng):
    M = rng.standard_normal((6, 6))
    c = build_cost(M @ M.T, np.eye(4), 2, dx=3, du=2)
    assert c.Q.shape == (6, 6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), rank=st.integers(0, 5))
def test_cost_sqrt_property(seed, n, rank):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, min(rank, n)))
    c = build_cost(G @ G.T, np.eye(2) + 0.1, 3)
    S = c.D_sqrt
    assert np.array_equal(S, S.T)
    assert np.max(np.abs(S @ S - c.D)) <= 1e-8 * (1 + np.max(np.abs(c.D)))


def test_box_bounds_examples():
    b = build_box_bounds(1.0, 1.0, 4, 3, 2)
    np.testing.assert_array_equal(b.hw, np.ones(24))
    q = build_box_bounds(0.1, 0.1, 3, 6, 3)
    np.testing.assert_allclose(q.hw, 0.1)
    one = build_box_bounds(2.0, 1.0, 1, 1, 1)
    np.testing.assert_array_equal(one.Hw, [[1], [-1]])
    np.testing.assert_array_equal(one.hw, [2, 2])
    with pytest.raises(InvalidBoundError):
        build_box_bounds(0.0, 1.0, 2, 1, 1)
    with pytest.raises(InvalidBoundError):
        build_box_bounds(1.0, -1.0, 2, 1, 1)


def test_box_bounds_membership(rng):
    b = build_box_bounds([1.0, 2.0], [0.5], 3)
    for _ in range(1000):
        w = rng.uniform(-b.box_w, b.box_w)
        assert np.all(b.Hw @ w <= b.hw)
    for i in range(b.box_w.size):
        w = np.zeros(b.box_w.size)
        w[i] = 1.01 * b.box_w[i]
        assert np.any(b.Hw @ w > b.hw)
        assert np.any(b.Hw @ -w > b.hw)


def test_safety_spec_validation():
    with pytest.raises(ValueError):
        SafetySpec(np.ones((2, 3)), np.ones(3))
    with pytest.raises(ValueError):
        SafetySpec(np.ones((1, 3)), [np.inf])
    s = build_box_safety(5.0, [1.0, 2.0], 2, 3, 2)
    assert s.H.shape == (20, 10)
    np.testing.assert_array_equal(s.h[:10], [5, 5, 5, 5, 5, 5, 1, 2, 1, 2])
