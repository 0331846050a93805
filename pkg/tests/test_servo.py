"""Riccati feedback policy: exactness, affine identity, LQR law, speed."""

import time

import numpy as np
import pytest

from poseservo.errors import DimensionMismatch
from poseservo.ocp import CostWeights, OcpProblem, solve_ocp
from poseservo.robot import DoubleIntegrator, RobotState
from poseservo.servo import RiccatiPolicy, policy_torque


def _policy(rng, n=3):
    return RiccatiPolicy(
        tau0=rng.normal(size=n),
        K0=rng.normal(size=(n, 2 * n)),
        x_lin=rng.normal(size=2 * n),
        solve_timestamp=1.25,
    )


def test_torque_at_linearization_state_is_tau0_exactly(rng):
    p = _policy(rng)
    out = policy_torque(p, p.x_lin.copy())
    assert np.array_equal(out.tau, p.tau0)


def test_affine_identity_100_perturbations(rng):
    p = _policy(rng)
    tau_lin = policy_torque(p, p.x_lin).tau
    for _ in range(100):
        dx = rng.normal(size=6)
        tau = policy_torque(p, p.x_lin + dx).tau
        assert np.allclose(tau - tau_lin, p.K0 @ dx, atol=1e-12)


def test_accepts_robot_state_and_flat_vector(rng):
    p = _policy(rng)
    x = rng.normal(size=6)
    a = policy_torque(p, x).tau
    b = policy_torque(p, RobotState(x[:3].copy(), x[3:].copy())).tau
    assert np.array_equal(a, b)


def test_clamp_limits_torque(rng):
    p = RiccatiPolicy(tau0=np.array([10.0, -10.0]), K0=np.zeros((2, 4)),
                      x_lin=np.zeros(4))
    tau = policy_torque(p, np.zeros(4), clamp=2.5).tau
    assert np.array_equal(tau, [2.5, -2.5])


def test_dimension_mismatch_raises(rng):
    p = _policy(rng)
    with pytest.raises(DimensionMismatch):
        policy_torque(p, np.zeros(4))
    with pytest.raises(DimensionMismatch):
        RiccatiPolicy(tau0=np.zeros(3), K0=np.zeros((3, 4)), x_lin=np.zeros(6))


def test_policy_is_immutable(rng):
    p = _policy(rng)
    with pytest.raises(Exception):
        p.tau0 = np.zeros(3)


def test_policy_realizes_lqr_law_at_perturbed_states():
    # for an LQR problem the first-stage policy is the optimal controller:
    # re-solving from a perturbed x0 gives the same torque as the policy
    model = DoubleIntegrator(np.array([1.0, 2.0]))
    weights = CostWeights(w_v=0.0, Q_x=np.array([1.0, 2.0, 0.5, 0.5]),
                          Q_u=np.array([0.2, 0.4]), q_rest=np.zeros(2))
    x0 = np.array([0.4, -0.3, 0.2, 0.1])
    prob = OcpProblem(model=model, weights=weights, M=15, dt=0.05,
                      x0=RobotState(x0[:2].copy(), x0[2:].copy()))
    policy = RiccatiPolicy.from_solution(solve_ocp(prob))
    rng = np.random.default_rng(3)
    for _ in range(5):
        dx = rng.normal(size=4) * 0.05
        xp = x0 + dx
        prob_p = OcpProblem(model=model, weights=weights, M=15, dt=0.05,
                            x0=RobotState(xp[:2].copy(), xp[2:].copy()))
        tau_resolve = solve_ocp(prob_p).tau0
        tau_policy = policy_torque(policy, xp).tau
        assert np.max(np.abs(tau_policy - tau_resolve)) < 1e-6


def test_policy_torque_is_fast(rng):
    p = _policy(rng)
    x = rng.normal(size=6)
    policy_torque(p, x)  # warm any lazy paths
    n = 20000
    t0 = time.perf_counter()
    for _ in range(n):
        policy_torque(p, x)
    mean = (time.perf_counter() - t0) / n
    # must comfortably fit a 1 kHz control slot
    assert mean < 50e-6
