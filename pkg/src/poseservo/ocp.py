"""Finite-horizon optimal control: tracking costs and a DDP solver.

The running cost is w_v*l_v + l_x + l_u where l_v penalizes the SE(3) distance
between the camera-relative object pose and a desired relative pose, l_x is a
quadratic pull toward a rest configuration, and l_u penalizes deviation from
gravity-compensation torques. The solver is classic multiple-shooting DDP with
a feasible rollout: backward Bellman recursion with Levenberg-Marquardt
regularization on Quu, forward backtracking line search. The stage-0 feedback
gain K0 of the accepted solution drives the high-rate servo.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geom
from .errors import BackwardPassFailure, CostSingularity, DimensionMismatch, NonFiniteCost
from .geometry import Pose
from .robot import (
    DoubleIntegrator,
    KinematicChain,
    PlantModel,
    RobotState,
    SerialChain,
    _dyn_fd_chain,
    _fk_bodies,
    _gravity_jac_chain,
    _integrate_chain,
    forward_kinematics,
    gravity_torque,
    integrate_plant,
)

FD_STEP = 1e-6          # central-difference step for dynamics and l_v derivatives
GRAD_TOL = 1e-9
COST_TOL = 1e-10
MAX_ITERS = 100
REG_MAX = 1e6
ALPHA_MIN = 1.0 / 64.0


@dataclass
class CostWeights:
    w_v: float
    Q_x: np.ndarray          # diagonal over (q, dq)
    Q_u: np.ndarray          # diagonal over u
    q_rest: np.ndarray
    rot_weight: float = 1.0  # weight on the angular half of the l_v log residual

    def __post_init__(self):
        self.Q_x = np.asarray(self.Q_x, dtype=float)
        self.Q_u = np.asarray(self.Q_u, dtype=float)
        self.q_rest = np.asarray(self.q_rest, dtype=float)
        if self.w_v < 0 or np.any(self.Q_x < 0) or np.any(self.Q_u < 0):
            raise ValueError("weights must be non-negative")


@dataclass
class TrackingReference:
    """Frozen measurement snapshot used by l_v for one solve.

    T_k is the estimated object pose in the camera frame, q_k the configuration
    at measurement time (held constant over the horizon), T_ref the desired
    camera-to-object relative pose.
    """

    T_k: Pose
    q_k: np.ndarray
    T_ref: Pose


@dataclass
class OcpProblem:
    model: PlantModel
    weights: CostWeights
    M: int
    dt: float
    x0: RobotState
    chain: Optional[KinematicChain] = None
    reference: Optional[TrackingReference] = None

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.chain is None and isinstance(self.model, SerialChain):
            self.chain = self.model.chain
        if self.weights.w_v > 0 and (self.chain is None or self.reference is None):
            raise ValueError("tracking cost requires a chain and a reference")


@dataclass
class OcpSolution:
    xs: np.ndarray      # (M+1, 2n)
    us: np.ndarray      # (M, m)
    K0: np.ndarray      # (m, 2n)
    tau0: np.ndarray
    x_lin: RobotState
    cost: float
    iterations: int
    converged: bool


def tracking_residual(chain: KinematicChain, q, ref: TrackingReference, rot_weight: float) -> np.ndarray:
    """Weighted 6-vector log residual of l_v; cost is its squared norm."""
    target = geom.compose(forward_kinematics(chain, ref.q_k), ref.T_k)
    current = geom.compose(forward_kinematics(chain, q), ref.T_ref)
    try:
        xi = geom.log(geom.compose(geom.inverse(target), current))
    except geom.AngleNearPi as e:
        raise CostSingularity(str(e)) from e
    r = xi.as_array()
    r[3:] *= rot_weight
    return r


def tracking_cost(chain: KinematicChain, q, ref: TrackingReference, rot_weight: float = 1.0) -> float:
    r = tracking_residual(chain, q, ref, rot_weight)
    return float(r @ r)


def state_cost(x: np.ndarray, weights: CostWeights) -> float:
    n = weights.q_rest.shape[0]
    if x.shape[0] != 2 * n or weights.Q_x.shape[0] != 2 * n:
        raise DimensionMismatch("state dimension does not match weights")
    d = x - np.concatenate([weights.q_rest, np.zeros(n)])
    return float(d @ (weights.Q_x * d))


def _u_rest(model: PlantModel, chain: Optional[KinematicChain], q) -> np.ndarray:
    if isinstance(model, DoubleIntegrator):
        return np.zeros(model.nq)
    return gravity_torque(chain, q)


def control_cost(model: PlantModel, chain: Optional[KinematicChain], x: np.ndarray,
                 u: np.ndarray, weights: CostWeights) -> float:
    n = x.shape[0] // 2
    if u.shape[0] != weights.Q_u.shape[0]:
        raise DimensionMismatch("control dimension does not match weights")
    r = u - _u_rest(model, chain, x[:n])
    return float(r @ (weights.Q_u * r))


def _log_Rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """SE(3) log from a rotation matrix and translation; (v, w) 6-vector."""
    s = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sn = np.linalg.norm(s)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(sn, c)
    if theta >= np.pi - geom.PI_MARGIN:
        raise CostSingularity(f"rotation angle {theta:.9f} too close to pi in l_v")
    if theta < geom.SMALL_ANGLE:
        w = s * (1.0 + theta * theta / 6.0)
    else:
        w = s * (theta / sn)
    return np.concatenate([geom._v_matrix_inv(w) @ t, w])


class CostModel:
    """Running/terminal costs of one OCP and their Gauss-Newton derivatives.

    Caches the measurement-time target pose (T_BC(q_k) T_k is frozen per solve)
    and evaluates the l_v residual through the packed FK kernel.
    """

    def __init__(self, problem: OcpProblem):
        self.p = problem
        self.n = problem.x0.q.shape[0]
        self.nx = 2 * self.n
        self.nu = problem.weights.Q_u.shape[0]
        self._packed = problem.chain.packed() if problem.chain is not None else None
        if problem.weights.w_v > 0:
            ref = problem.reference
            target = geom.compose(forward_kinematics(problem.chain, ref.q_k), ref.T_k)
            Rt = target.rotation_matrix()
            self._R_ti = Rt.T
            self._t_ti = -Rt.T @ target.translation
            co = problem.chain.camera_offset
            Rco = co.rotation_matrix()
            Rref = ref.T_ref.rotation_matrix()
            self._A = Rco @ Rref
            self._b = co.translation + Rco @ ref.T_ref.translation

    def _resid(self, q: np.ndarray) -> np.ndarray:
        Rp, tp, axes, _, _ = self._packed
        Rb, tb = _fk_bodies(Rp, tp, axes, q)
        Rc = Rb[-1] @ self._A
        tc = tb[-1] + Rb[-1] @ self._b
        r = _log_Rt(self._R_ti @ Rc, self._R_ti @ tc + self._t_ti)
        r[3:] *= self.p.weights.rot_weight
        return r

    def running(self, x: np.ndarray, u: np.ndarray) -> float:
        w = self.p.weights
        c = state_cost(x, w) + control_cost(self.p.model, self.p.chain, x, u, w)
        if w.w_v > 0:
            r = self._resid(x[: self.n])
            c += w.w_v * float(r @ r)
        return c

    def terminal(self, x: np.ndarray) -> float:
        w = self.p.weights
        c = state_cost(x, w)
        if w.w_v > 0:
            r = self._resid(x[: self.n])
            c += w.w_v * float(r @ r)
        return c

    def _tracking_jacobian(self, q) -> tuple[np.ndarray, np.ndarray]:
        r0 = self._resid(q)
        J = np.empty((6, self.n))
        for i in range(self.n):
            qp = q.copy(); qp[i] += FD_STEP
            qm = q.copy(); qm[i] -= FD_STEP
            J[:, i] = (self._resid(qp) - self._resid(qm)) / (2 * FD_STEP)
        return r0, J

    def _u_rest_jacobian(self, q) -> np.ndarray:
        if isinstance(self.p.model, DoubleIntegrator):
            return np.zeros((self.nu, self.n))
        Rp, tp, axes, I6, g = self._packed
        return _gravity_jac_chain(Rp, tp, axes, I6, g, q, FD_STEP)

    def derivatives(self, x: np.ndarray, u: Optional[np.ndarray]):
        """Gradient and Gauss-Newton Hessian blocks of the (running or terminal) cost.

        Returns (lx, lu, lxx, lxu, luu); the u blocks are None at the terminal stage.
        """
        w = self.p.weights
        n, nx = self.n, self.nx
        x_rest = np.concatenate([w.q_rest, np.zeros(n)])
        lx = 2.0 * w.Q_x * (x - x_rest)
        lxx = np.diag(2.0 * w.Q_x)
        if w.w_v > 0:
            r, J = self._tracking_jacobian(x[:n])
            lx[:n] += w.w_v * 2.0 * J.T @ r
            lxx[:n, :n] += w.w_v * 2.0 * J.T @ J
        if u is None:
            return lx, None, lxx, None, None
        ur = _u_rest(self.p.model, self.p.chain, x[:n])
        ru = u - ur
        lu = 2.0 * w.Q_u * ru
        luu = np.diag(2.0 * w.Q_u)
        lxu = np.zeros((nx, self.nu))
        if isinstance(self.p.model, SerialChain):
            Jg = self._u_rest_jacobian(x[:n])
            lx[:n] += -2.0 * Jg.T @ (w.Q_u * ru)
            lxx[:n, :n] += 2.0 * Jg.T @ (w.Q_u[:, None] * Jg)
            lxu[:n, :] = -2.0 * Jg.T @ np.diag(w.Q_u)
        return lx, lu, lxx, lxu, luu


def running_cost(problem: OcpProblem, x: np.ndarray, u: np.ndarray) -> float:
    return CostModel(problem).running(x, u)


def terminal_cost(problem: OcpProblem, x: np.ndarray) -> float:
    return CostModel(problem).terminal(x)


def _step(problem: OcpProblem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if isinstance(problem.model, SerialChain):
        n = x.shape[0] // 2
        Rp, tp, axes, I6, g = problem.model.chain.packed()
        q, dq = _integrate_chain(Rp, tp, axes, I6, g, x[:n], x[n:], u, problem.dt)
        return np.concatenate([q, dq])
    s = integrate_plant(problem.model, RobotState.from_vector(x), u, problem.dt)
    return s.as_vector()


def _dynamics_derivatives(problem: OcpProblem, x: np.ndarray, u: np.ndarray):
    """(fx, fu); analytic for the double integrator, central FD otherwise."""
    nx, nu = x.shape[0], u.shape[0]
    if isinstance(problem.model, DoubleIntegrator):
        n = problem.model.nq
        dt = problem.dt
        Minv = 1.0 / problem.model.mass_diag
        fx = np.eye(nx)
        fx[:n, n:] = dt * np.eye(n)
        fu = np.zeros((nx, nu))
        fu[:n, :] = dt * dt * np.diag(Minv)
        fu[n:, :] = dt * np.diag(Minv)
        return fx, fu
    if isinstance(problem.model, SerialChain):
        n = nx // 2
        Rp, tp, axes, I6, g = problem.model.chain.packed()
        return _dyn_fd_chain(Rp, tp, axes, I6, g, x[:n], x[n:], u, problem.dt, FD_STEP)
    fx = np.empty((nx, nx))
    fu = np.empty((nx, nu))
    for i in range(nx):
        xp = x.copy(); xp[i] += FD_STEP
        xm = x.copy(); xm[i] -= FD_STEP
        fx[:, i] = (_step(problem, xp, u) - _step(problem, xm, u)) / (2 * FD_STEP)
    for i in range(nu):
        up = u.copy(); up[i] += FD_STEP
        um = u.copy(); um[i] -= FD_STEP
        fu[:, i] = (_step(problem, x, up) - _step(problem, x, um)) / (2 * FD_STEP)
    return fx, fu


def _rollout(problem: OcpProblem, cm: CostModel, x0: np.ndarray, us: np.ndarray):
    M = problem.M
    xs = np.empty((M + 1, x0.shape[0]))
    xs[0] = x0
    cost = 0.0
    for i in range(M):
        cost += cm.running(xs[i], us[i])
        xs[i + 1] = _step(problem, xs[i], us[i])
    cost += cm.terminal(xs[M])
    return xs, cost


def solve_ocp(problem: OcpProblem, warm_start: Optional[OcpSolution] = None,
              diagnostics_path: Optional[str] = None) -> OcpSolution:
    """DDP loop: backward value recursion + line-searched feasible rollout."""
    t_start = time.perf_counter()
    cm = CostModel(problem)
    x0 = problem.x0.as_vector()
    nx, nu, M = cm.nx, cm.nu, problem.M

    if warm_start is not None and warm_start.us.shape == (M, nu):
        us = np.vstack([warm_start.us[1:], warm_start.us[-1:]])  # shift one stage
    else:
        u_hold = _u_rest(problem.model, problem.chain, problem.x0.q)
        us = np.tile(u_hold, (M, 1))
    xs, cost = _rollout(problem, cm, x0, us)
    if not np.isfinite(cost):
        raise NonFiniteCost(f"initial rollout cost is {cost}")

    mu = 0.0
    Ks = np.zeros((M, nu, nx))
    grad_norm = np.inf
    converged = False
    iterations = 0

    for iterations in range(1, MAX_ITERS + 1):
        # stage derivatives along the current feasible trajectory
        fxs = np.empty((M, nx, nx)); fus = np.empty((M, nx, nu))
        lxs = np.empty((M, nx)); lus = np.empty((M, nu))
        lxxs = np.empty((M, nx, nx)); lxus = np.empty((M, nx, nu)); luus = np.empty((M, nu, nu))
        for i in range(M):
            fxs[i], fus[i] = _dynamics_derivatives(problem, xs[i], us[i])
            lxs[i], lus[i], lxxs[i], lxus[i], luus[i] = cm.derivatives(xs[i], us[i])
        lxM, _, lxxM, _, _ = cm.derivatives(xs[M], None)

        # backward pass, raising regularization until Quu factorizes
        while True:
            Vx = lxM.copy()
            Vxx = lxxM.copy()
            ks = np.empty((M, nu))
            dV1 = 0.0
            dV2 = 0.0
            ok = True
            qu_max = 0.0
            for i in range(M - 1, -1, -1):
                Qx = lxs[i] + fxs[i].T @ Vx
                Qu = lus[i] + fus[i].T @ Vx
                Qxx = lxxs[i] + fxs[i].T @ Vxx @ fxs[i]
                Qux = lxus[i].T + fus[i].T @ Vxx @ fxs[i]
                Quu = luus[i] + fus[i].T @ Vxx @ fus[i]
                Quu_reg = Quu + mu * np.eye(nu)
                try:
                    L = np.linalg.cholesky(0.5 * (Quu_reg + Quu_reg.T))
                except np.linalg.LinAlgError:
                    ok = False
                    break
                rhs = np.column_stack([Qu, Qux])
                sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
                k = -sol[:, 0]
                K = -sol[:, 1:]
                ks[i] = k
                Ks[i] = K
                dV1 += k @ Qu
                dV2 += 0.5 * k @ Quu @ k
                Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
                Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
                Vxx = 0.5 * (Vxx + Vxx.T)
                qu_max = max(qu_max, float(np.abs(Qu).max()))
            if ok:
                break
            mu = max(mu * 10.0, 1e-6)
            if mu > REG_MAX:
                raise BackwardPassFailure(f"Quu not PD at regularization {mu}")
        grad_norm = qu_max
        if grad_norm < GRAD_TOL:
            converged = True
            break

        # forward pass: backtracking line search on the feasible rollout
        accepted = False
        alpha = 1.0
        while alpha >= ALPHA_MIN - 1e-12:
            us_try = np.empty_like(us)
            xs_try = np.empty_like(xs)
            xs_try[0] = x0
            cost_try = 0.0
            feasible = True
            for i in range(M):
                us_try[i] = us[i] + alpha * ks[i] + Ks[i] @ (xs_try[i] - xs[i])
                try:
                    cost_try += cm.running(xs_try[i], us_try[i])
                except CostSingularity:
                    feasible = False
                    break
                xs_try[i + 1] = _step(problem, xs_try[i], us_try[i])
                if not np.all(np.isfinite(xs_try[i + 1])):
                    feasible = False
                    break
            if feasible:
                try:
                    cost_try += cm.terminal(xs_try[M])
                except CostSingularity:
                    feasible = False
            if feasible and np.isfinite(cost_try) and cost - cost_try > 0.0:
                decrease = cost - cost_try
                xs, us, cost = xs_try, us_try, cost_try
                accepted = True
                mu = mu / 10.0 if mu > 1e-9 else 0.0
                break
            alpha *= 0.5
        if not accepted:
            mu = max(mu * 10.0, 1e-6)
            if mu > REG_MAX:
                break
            continue
        if decrease < COST_TOL:
            converged = True
            break

    sol = OcpSolution(
        xs=xs, us=us, K0=Ks[0].copy(), tau0=us[0].copy(),
        x_lin=RobotState.from_vector(xs[0]), cost=float(cost),
        iterations=iterations, converged=converged,
    )
    if diagnostics_path is not None:
        with open(diagnostics_path, "a", newline="") as f:
            csv.writer(f).writerow(
                [sol.iterations, repr(sol.cost), repr(grad_norm), repr(mu),
                 repr(time.perf_counter() - t_start)]
            )
    return sol
