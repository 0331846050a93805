"""Tracking costs and the DDP solver: closed forms, FD checks, LQR oracle."""

import csv
import math

import numpy as np
import pytest

from poseservo import geometry as geom
from poseservo.errors import CostSingularity
from poseservo.geometry import Pose
from poseservo.ocp import (
    CostModel,
    CostWeights,
    OcpProblem,
    TrackingReference,
    control_cost,
    running_cost,
    solve_ocp,
    state_cost,
    terminal_cost,
    tracking_cost,
    tracking_residual,
)
from poseservo.robot import (
    DoubleIntegrator,
    RobotState,
    SerialChain,
    forward_kinematics,
    gravity_torque,
    integrate_plant,
    planar3_chain,
)

Q0 = np.array([0.3, -0.9, 0.6])
T_REF = Pose(translation=np.array([0.6, 0.0, 0.0]))


def _self_reference(chain, q0=Q0, T_ref=T_REF):
    """Reference whose tracking cost is exactly zero at q0."""
    return TrackingReference(T_k=T_ref, q_k=q0.copy(), T_ref=T_ref)


def _chain_problem(weights=None, M=10, dt=0.04, q0=Q0, ref=None):
    chain = planar3_chain()
    if weights is None:
        weights = CostWeights(w_v=20.0, Q_x=np.array([0.3] * 3 + [3.0] * 3),
                              Q_u=np.array([0.1] * 3), q_rest=q0.copy())
    if ref is None:
        ref = _self_reference(chain, q0)
    return OcpProblem(model=SerialChain(chain), weights=weights, M=M, dt=dt,
                      x0=RobotState(q0.copy(), np.zeros(3)), reference=ref)


# -- cost closed forms -------------------------------------------------------------


def test_tracking_cost_zero_at_reference(chain3):
    assert tracking_cost(chain3, Q0, _self_reference(chain3)) == pytest.approx(0.0, abs=1e-18)


def test_tracking_cost_pure_translation_is_squared_distance(chain3):
    # object d meters beyond the desired relative pose -> cost d^2
    d = 0.37
    ref = TrackingReference(T_k=Pose(translation=np.array([d, 0.0, 0.0])),
                            q_k=Q0, T_ref=Pose.identity())
    assert tracking_cost(chain3, Q0, ref) == pytest.approx(d * d, rel=1e-12)


def test_tracking_residual_rot_weight_scales_angular_half(chain3):
    ref = TrackingReference(T_k=Pose.from_axis_angle([0, 0, 1], 0.2), q_k=Q0,
                            T_ref=Pose.identity())
    r1 = tracking_residual(chain3, Q0, ref, rot_weight=1.0)
    r2 = tracking_residual(chain3, Q0, ref, rot_weight=2.0)
    assert np.allclose(r2[3:], 2.0 * r1[3:], atol=1e-12)
    assert np.allclose(r2[:3], r1[:3], atol=1e-12)


def test_tracking_cost_singular_at_pi(chain3):
    flip = geom.compose(T_REF, Pose.from_axis_angle([0, 0, 1], math.pi))
    ref = TrackingReference(T_k=flip, q_k=Q0, T_ref=T_REF)
    with pytest.raises(CostSingularity):
        tracking_cost(chain3, Q0, ref)


def test_state_cost_values(paper_weights):
    x_rest = np.concatenate([paper_weights.q_rest, np.zeros(3)])
    assert state_cost(x_rest, paper_weights) == 0.0
    x = x_rest.copy()
    x[0] += 0.1          # weighted 0.3
    x[3] += 0.2          # velocity entry, weighted 3.0
    assert state_cost(x, paper_weights) == pytest.approx(0.3 * 0.01 + 3.0 * 0.04, rel=1e-12)


def test_control_cost_zero_at_gravity_compensation(chain3, paper_weights):
    x = np.concatenate([Q0, np.zeros(3)])
    u = gravity_torque(chain3, Q0)
    assert control_cost(SerialChain(chain3), chain3, x, u, paper_weights) == 0.0
    assert control_cost(SerialChain(chain3), chain3, x, u + np.array([1.0, 0, 0]),
                        paper_weights) == pytest.approx(0.1, rel=1e-12)


def test_running_cost_is_weighted_sum(chain3, paper_weights):
    # l = w_v*l_v + l_x + l_u with the frozen weights (20, 0.3/3, 0.1)
    q = Q0 + np.array([0.05, -0.02, 0.01])
    x = np.concatenate([q, np.array([0.1, 0.0, -0.1])])
    u = np.array([0.5, -0.3, 0.2])
    prob = _chain_problem(weights=paper_weights)
    a = tracking_cost(chain3, q, prob.reference, paper_weights.rot_weight)
    b = state_cost(x, paper_weights)
    c = control_cost(prob.model, chain3, x, u, paper_weights)
    assert running_cost(prob, x, u) == pytest.approx(20.0 * a + b + c, rel=1e-12)
    assert terminal_cost(prob, x) == pytest.approx(20.0 * a + b, rel=1e-12)


# -- cost derivatives ----------------------------------------------------------------


def test_gradient_vanishes_at_tracking_minimum():
    weights = CostWeights(w_v=1.0, Q_x=np.zeros(6), Q_u=np.zeros(3), q_rest=Q0)
    prob = _chain_problem(weights=weights)
    cm = CostModel(prob)
    lx, _, lxx, _, _ = cm.derivatives(np.concatenate([Q0, np.zeros(3)]), None)
    assert np.max(np.abs(lx)) < 1e-6
    assert np.linalg.eigvalsh(lxx).min() >= -1e-9  # Gauss-Newton PSD


def test_quadratic_derivatives_match_finite_differences(rng):
    model = DoubleIntegrator(np.array([1.0, 2.0]))
    weights = CostWeights(w_v=0.0, Q_x=np.array([0.5, 1.5, 2.0, 0.7]),
                          Q_u=np.array([0.3, 0.9]), q_rest=np.array([0.1, -0.2]))
    prob = OcpProblem(model=model, weights=weights, M=5, dt=0.05,
                      x0=RobotState(np.zeros(2), np.zeros(2)))
    cm = CostModel(prob)
    h = 1e-4
    for _ in range(20):
        x = rng.normal(size=4)
        u = rng.normal(size=2)
        lx, lu, lxx, lxu, luu = cm.derivatives(x, u)
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            g = (cm.running(xp, u) - cm.running(xm, u)) / (2 * h)
            assert abs(g - lx[i]) <= 1e-6 * max(1.0, abs(g))
        for i in range(2):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            g = (cm.running(x, up) - cm.running(x, um)) / (2 * h)
            assert abs(g - lu[i]) <= 1e-6 * max(1.0, abs(g))
        assert np.allclose(lxx, np.diag(2.0 * weights.Q_x), atol=1e-12)
        assert np.allclose(luu, np.diag(2.0 * weights.Q_u), atol=1e-12)
        assert np.allclose(lxu, 0.0, atol=1e-12)


def test_tracking_gradient_matches_fd_at_100_configs(rng):
    # pure l_v gradient vs central differences (step 1e-4), relative error < 1e-3
    weights = CostWeights(w_v=1.0, Q_x=np.zeros(6), Q_u=np.zeros(3), q_rest=Q0)
    prob = _chain_problem(weights=weights)
    cm = CostModel(prob)
    h = 1e-4
    worst = 0.0
    for _ in range(100):
        q = Q0 + rng.uniform(-0.6, 0.6, 3)
        x = np.concatenate([q, np.zeros(3)])
        lx, _, _, _, _ = cm.derivatives(x, None)
        g_fd = np.empty(3)
        for i in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            g_fd[i] = (cm.terminal(xp) - cm.terminal(xm)) / (2 * h)
        rel = np.abs(g_fd - lx[:3]) / np.maximum(np.abs(g_fd), 1.0)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-3


def test_chain_control_cost_gradient_includes_gravity_coupling(rng):
    # the u-residual depends on q through gravity compensation; check lx by FD
    weights = CostWeights(w_v=0.0, Q_x=np.zeros(6), Q_u=np.array([0.1] * 3), q_rest=Q0)
    prob = _chain_problem(weights=weights)
    cm = CostModel(prob)
    h = 1e-5
    x = np.concatenate([Q0 + rng.uniform(-0.3, 0.3, 3), np.zeros(3)])
    u = gravity_torque(prob.chain, x[:3]) + rng.normal(size=3)
    lx, lu, _, lxu, _ = cm.derivatives(x, u)
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g = (cm.running(xp, u) - cm.running(xm, u)) / (2 * h)
        assert abs(g - lx[i]) <= 1e-4 * max(1.0, abs(g))
    assert lxu.shape == (6, 3)
    assert np.any(lxu != 0.0)


# -- solver ---------------------------------------------------------------------------


def _lqr_oracle(A, B, Q, R, QM, x0, M):
    """Discrete Riccati recursion for cost sum(x'Qx + u'Ru) + x_M'QM x_M."""
    P = QM.copy()
    Ks = []
    for _ in range(M):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        Ks.insert(0, K)
    xs = [x0]
    us = []
    for i in range(M):
        u = -Ks[i] @ xs[-1]
        us.append(u)
        xs.append(A @ xs[-1] + B @ u)
    return Ks, np.array(xs), np.array(us)


def test_solver_matches_lqr_oracle_within_two_iterations():
    mass = np.array([1.0, 2.0])
    dt = 0.05
    model = DoubleIntegrator(mass)
    weights = CostWeights(w_v=0.0, Q_x=np.array([1.0, 2.0, 0.5, 0.5]),
                          Q_u=np.array([0.2, 0.4]), q_rest=np.zeros(2))
    x0 = np.array([0.4, -0.3, 0.2, 0.1])
    M = 15
    prob = OcpProblem(model=model, weights=weights, M=M, dt=dt,
                      x0=RobotState(x0[:2].copy(), x0[2:].copy()))
    sol = solve_ocp(prob)
    assert sol.converged
    assert sol.iterations <= 2

    Minv = np.diag(1.0 / mass)
    A = np.block([[np.eye(2), dt * np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
    B = np.vstack([dt * dt * Minv, dt * Minv])
    Q = np.diag(weights.Q_x)
    R = np.diag(weights.Q_u)
    Ks, xs, us = _lqr_oracle(A, B, Q, R, Q, x0, M)
    assert np.max(np.abs(sol.us - us)) < 1e-6
    assert np.max(np.abs(sol.xs - xs)) < 1e-6
    # tau = tau0 + K0 (x - x_lin): the solver's K0 is the LQR feedback -K
    assert np.max(np.abs(sol.K0 + Ks[0])) < 1e-6


def test_solver_rest_state_needs_no_control():
    model = DoubleIntegrator(np.array([1.0, 1.0, 1.0]))
    weights = CostWeights(w_v=0.0, Q_x=np.ones(6), Q_u=np.ones(3), q_rest=np.zeros(3))
    prob = OcpProblem(model=model, weights=weights, M=10, dt=0.05,
                      x0=RobotState(np.zeros(3), np.zeros(3)))
    sol = solve_ocp(prob)
    assert sol.converged
    assert np.max(np.abs(sol.us)) < 1e-12
    assert sol.cost == pytest.approx(0.0, abs=1e-15)


def test_single_stage_solution_matches_closed_form():
    mass = np.array([1.5])
    dt = 0.1
    model = DoubleIntegrator(mass)
    weights = CostWeights(w_v=0.0, Q_x=np.array([2.0, 1.0]), Q_u=np.array([0.5]),
                          q_rest=np.zeros(1))
    x0 = np.array([0.7, -0.4])
    prob = OcpProblem(model=model, weights=weights, M=1, dt=dt,
                      x0=RobotState(x0[:1].copy(), x0[1:].copy()))
    sol = solve_ocp(prob)
    Minv = np.diag(1.0 / mass)
    A = np.block([[np.eye(1), dt * np.eye(1)], [np.zeros((1, 1)), np.eye(1)]])
    B = np.vstack([dt * dt * Minv, dt * Minv])
    Q = np.diag(weights.Q_x)
    R = np.diag(weights.Q_u)
    # argmin_u u'Ru + (Ax0+Bu)'Q(Ax0+Bu)
    u_star = -np.linalg.solve(R + B.T @ Q @ B, B.T @ Q @ A @ x0)
    assert np.max(np.abs(sol.us[0] - u_star)) < 1e-9


def test_warm_start_from_optimum_converges_immediately():
    model = DoubleIntegrator(np.array([1.0, 1.0]))
    weights = CostWeights(w_v=0.0, Q_x=np.ones(4), Q_u=np.ones(2), q_rest=np.zeros(2))
    prob = OcpProblem(model=model, weights=weights, M=10, dt=0.05,
                      x0=RobotState(np.zeros(2), np.zeros(2)))
    cold = solve_ocp(prob)
    warm = solve_ocp(prob, warm_start=cold)
    assert warm.converged
    assert warm.iterations <= 1


def test_warm_start_on_chain_does_not_increase_cost():
    prob = _chain_problem()
    cold = solve_ocp(prob)
    warm = solve_ocp(prob, warm_start=cold)
    assert warm.cost <= cold.cost * (1 + 1e-9) + 1e-12


def test_solution_cost_not_above_initial_rollout():
    prob = _chain_problem(M=12)
    cm = CostModel(prob)
    u_hold = gravity_torque(prob.chain, Q0)
    x = prob.x0.as_vector()
    init_cost = 0.0
    s = prob.x0
    for _ in range(prob.M):
        init_cost += cm.running(s.as_vector(), u_hold)
        s = integrate_plant(prob.model, s, u_hold, prob.dt)
    init_cost += cm.terminal(s.as_vector())
    sol = solve_ocp(prob)
    assert sol.cost <= init_cost + 1e-12


def test_solution_shapes_and_rollout_defect():
    prob = _chain_problem(M=8)
    sol = solve_ocp(prob)
    assert sol.xs.shape == (9, 6)
    assert sol.us.shape == (8, 3)
    assert sol.K0.shape == (3, 6)
    assert np.array_equal(sol.tau0, sol.us[0])
    assert np.array_equal(sol.x_lin.as_vector(), sol.xs[0])
    # multiple shooting closes: re-integrating us from x0 reproduces xs
    s = RobotState.from_vector(sol.xs[0])
    for i in range(8):
        s = integrate_plant(prob.model, s, sol.us[i], prob.dt)
        assert np.max(np.abs(s.as_vector() - sol.xs[i + 1])) < 1e-8


def test_tracking_solve_moves_camera_toward_object():
    # object 0.2 rad to the left of the current gaze: terminal error shrinks
    chain = planar3_chain()
    shifted = geom.compose(
        Pose.from_axis_angle([0, 0, 1], 0.2),
        geom.compose(forward_kinematics(chain, Q0), T_REF),
    )
    ref = TrackingReference(T_k=geom.compose(geom.inverse(forward_kinematics(chain, Q0)), shifted),
                            q_k=Q0.copy(), T_ref=T_REF)
    prob = _chain_problem(M=20, ref=ref)
    sol = solve_ocp(prob)
    r0 = tracking_residual(chain, Q0, ref, 1.0)
    rM = tracking_residual(chain, sol.xs[-1][:3], ref, 1.0)
    assert np.linalg.norm(rM) < 0.5 * np.linalg.norm(r0)


def test_diagnostics_csv_row(tmp_path):
    prob = _chain_problem(M=5)
    path = tmp_path / "diag.csv"
    sol = solve_ocp(prob, diagnostics_path=str(path))
    solve_ocp(prob, warm_start=sol, diagnostics_path=str(path))
    rows = list(csv.reader(path.open()))
    assert len(rows) == 2
    for row in rows:
        assert len(row) == 5
        assert int(row[0]) >= 1          # iterations
        assert float(row[1]) >= 0.0      # cost
        assert float(row[4]) > 0.0       # wall time


def test_problem_validation():
    model = DoubleIntegrator(np.array([1.0]))
    weights = CostWeights(w_v=0.0, Q_x=np.ones(2), Q_u=np.ones(1), q_rest=np.zeros(1))
    x0 = RobotState(np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError, match="horizon"):
        OcpProblem(model=model, weights=weights, M=0, dt=0.05, x0=x0)
    with pytest.raises(ValueError, match="dt"):
        OcpProblem(model=model, weights=weights, M=5, dt=0.0, x0=x0)
    bad = CostWeights(w_v=1.0, Q_x=np.ones(2), Q_u=np.ones(1), q_rest=np.zeros(1))
    with pytest.raises(ValueError, match="reference"):
        OcpProblem(model=model, weights=bad, M=5, dt=0.05, x0=x0)
    with pytest.raises(ValueError, match="non-negative"):
        CostWeights(w_v=-1.0, Q_x=np.ones(2), Q_u=np.ones(1), q_rest=np.zeros(1))
