"""Serial-chain kinematics and dynamics.

Revolute joints only. Forward kinematics composes per-joint fixed offsets and
axis rotations up to a camera frame mounted on the last body. Inverse dynamics
is recursive Newton-Euler (RNEA), forward dynamics is the articulated body
algorithm (ABA), both in Featherstone spatial form with (angular, linear)
ordering internally. Hot kernels are numba-compiled over packed arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from numba import njit

from .errors import DimensionMismatch
from .geometry import Pose, compose, quat_to_matrix


class RobotState(NamedTuple):
    """Joint angles (rad) and joint velocities (rad/s)."""

    q: np.ndarray
    dq: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq])

    @staticmethod
    def from_vector(x: np.ndarray) -> "RobotState":
        n = x.shape[0] // 2
        return RobotState(x[:n].copy(), x[n:].copy())


@dataclass
class ControlCommand:
    """Joint torques in N*m."""

    tau: np.ndarray


@dataclass
class Joint:
    parent_transform: Pose
    axis: np.ndarray


@dataclass
class Link:
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3 about the com, in the body frame


@dataclass
class KinematicChain:
    joints: list
    links: list
    camera_offset: Pose = field(default_factory=Pose.identity)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        if len(self.joints) != len(self.links):
            raise DimensionMismatch("one link per joint required")
        self.gravity = np.asarray(self.gravity, dtype=float)
        for i, (j, l) in enumerate(zip(self.joints, self.links)):
            j.axis = np.asarray(j.axis, dtype=float)
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ValueError(f"joint {i}: axis must be unit norm")
            if l.mass <= 0:
                raise ValueError(f"link {i}: mass must be positive")
            l.com = np.asarray(l.com, dtype=float)
            l.inertia = np.asarray(l.inertia, dtype=float)
            if np.linalg.eigvalsh(l.inertia).min() <= 0:
                raise ValueError(f"link {i}: inertia must be positive definite")
        self._packed = None

    @property
    def nq(self) -> int:
        return len(self.joints)

    def packed(self):
        """Arrays consumed by the numba kernels (built once, cached)."""
        if self._packed is None:
            n = self.nq
            Rp = np.empty((n, 3, 3))
            tp = np.empty((n, 3))
            axes = np.empty((n, 3))
            I6 = np.empty((n, 6, 6))
            for i, (j, l) in enumerate(zip(self.joints, self.links)):
                Rp[i] = quat_to_matrix(j.parent_transform.rotation)
                tp[i] = j.parent_transform.translation
                axes[i] = j.axis
                I6[i] = _spatial_inertia(l.mass, l.com, l.inertia)
            self._packed = (Rp, tp, axes, I6, self.gravity.copy())
        return self._packed


def _spatial_inertia(mass: float, com: np.ndarray, inertia_com: np.ndarray) -> np.ndarray:
    c = np.array([[0.0, -com[2], com[1]], [com[2], 0.0, -com[0]], [-com[1], com[0], 0.0]])
    out = np.zeros((6, 6))
    out[:3, :3] = inertia_com - mass * c @ c
    out[:3, 3:] = mass * c
    out[3:, :3] = mass * c.T
    out[3:, 3:] = mass * np.eye(3)
    return out


@njit(cache=True)
def _rodrigues(axis, angle):
    K = np.zeros((3, 3))
    K[0, 1] = -axis[2]
    K[0, 2] = axis[1]
    K[1, 0] = axis[2]
    K[1, 2] = -axis[0]
    K[2, 0] = -axis[1]
    K[2, 1] = axis[0]
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@njit(cache=True)
def _cross(a, b):
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


@njit(cache=True)
def _fk_bodies(Rp, tp, axes, q):
    """Base-frame rotation/translation of every body frame."""
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    t = np.empty((n, 3))
    Racc = np.eye(3)
    tacc = np.zeros(3)
    for i in range(n):
        tacc = tacc + Racc @ tp[i]
        Racc = Racc @ Rp[i] @ _rodrigues(axes[i], q[i])
        R[i] = Racc
        t[i] = tacc
    return R, t


@njit(cache=True)
def _joint_X(Rp, tp, axes, q, i):
    """Plücker (E, r) of the child-from-parent motion transform for joint i."""
    E = (Rp[i] @ _rodrigues(axes[i], q[i])).T
    return E, tp[i]


@njit(cache=True)
def _rnea(Rp, tp, axes, q, dq, ddq, I6, g):
    n = q.shape[0]
    E = np.empty((n, 3, 3))
    r = np.empty((n, 3))
    w = np.empty((n, 3))   # angular velocity, body frame
    vl = np.empty((n, 3))  # linear velocity of body origin
    fa = np.empty((n, 3))  # spatial force, angular part
    fl = np.empty((n, 3))  # spatial force, linear part
    aw = np.empty((n, 3))
    al = np.empty((n, 3))
    for i in range(n):
        Ei, ri = _joint_X(Rp, tp, axes, q, i)
        E[i] = Ei
        r[i] = ri
        if i == 0:
            wp = np.zeros(3)
            vp = np.zeros(3)
            awp = np.zeros(3)
            alp = -g  # gravity baked into base acceleration
        else:
            wp = w[i - 1]
            vp = vl[i - 1]
            awp = aw[i - 1]
            alp = al[i - 1]
        w[i] = Ei @ wp + axes[i] * dq[i]
        vl[i] = Ei @ (vp - _cross(ri, wp))
        # a_i = X a_p + S qdd + v_i x vJ
        aw[i] = Ei @ awp + axes[i] * ddq[i] + _cross(w[i], axes[i] * dq[i])
        al[i] = Ei @ (alp - _cross(ri, awp)) + _cross(vl[i], axes[i] * dq[i])
        # f_i = I a + v x* I v
        hv = np.concatenate((w[i], vl[i]))
        Ihv = I6[i] @ hv
        ha = np.concatenate((aw[i], al[i]))
        Iha = I6[i] @ ha
        fa[i] = Iha[:3] + _cross(w[i], Ihv[:3]) + _cross(vl[i], Ihv[3:])
        fl[i] = Iha[3:] + _cross(w[i], Ihv[3:])
    tau = np.empty(n)
    for i in range(n - 1, -1, -1):
        tau[i] = axes[i] @ fa[i]
        if i > 0:
            # force transform to the parent frame
            ET = E[i].T
            fpl = ET @ fl[i]
            fa[i - 1] = fa[i - 1] + ET @ fa[i] + _cross(r[i], fpl)
            fl[i - 1] = fl[i - 1] + fpl
    return tau


@njit(cache=True)
def _X66(E, r):
    X = np.zeros((6, 6))
    rx = np.zeros((3, 3))
    rx[0, 1] = -r[2]
    rx[0, 2] = r[1]
    rx[1, 0] = r[2]
    rx[1, 2] = -r[0]
    rx[2, 0] = -r[1]
    rx[2, 1] = r[0]
    X[:3, :3] = E
    X[3:, :3] = -E @ rx
    X[3:, 3:] = E
    return X


@njit(cache=True)
def _aba(Rp, tp, axes, q, dq, tau, I6, g):
    n = q.shape[0]
    E = np.empty((n, 3, 3))
    r = np.empty((n, 3))
    w = np.empty((n, 3))
    vl = np.empty((n, 3))
    c = np.empty((n, 6))      # velocity-product bias acceleration
    IA = np.empty((n, 6, 6))  # articulated inertia
    pA = np.empty((n, 6))     # articulated bias force
    S = np.zeros((n, 6))
    for i in range(n):
        Ei, ri = _joint_X(Rp, tp, axes, q, i)
        E[i] = Ei
        r[i] = ri
        S[i, :3] = axes[i]
        if i == 0:
            wp = np.zeros(3)
            vp = np.zeros(3)
        else:
            wp = w[i - 1]
            vp = vl[i - 1]
        w[i] = Ei @ wp + axes[i] * dq[i]
        vl[i] = Ei @ (vp - _cross(ri, wp))
        # c_i = v_i x vJ with vJ = (axis*dq, 0)
        vj = axes[i] * dq[i]
        c[i, :3] = _cross(w[i], vj)
        c[i, 3:] = _cross(vl[i], vj)
        IA[i] = I6[i].copy()
        hv = I6[i] @ np.concatenate((w[i], vl[i]))
        pA[i, :3] = _cross(w[i], hv[:3]) + _cross(vl[i], hv[3:])
        pA[i, 3:] = _cross(w[i], hv[3:])
    U = np.empty((n, 6))
    d = np.empty(n)
    u = np.empty(n)
    for i in range(n - 1, -1, -1):
        U[i] = IA[i] @ S[i]
        d[i] = S[i] @ U[i]
        u[i] = tau[i] - S[i] @ pA[i]
        if i > 0:
            Ia = IA[i] - np.outer(U[i], U[i]) / d[i]
            pa = pA[i] + Ia @ c[i] + U[i] * (u[i] / d[i])
            X = _X66(E[i], r[i])
            IA[i - 1] = IA[i - 1] + X.T @ Ia @ X
            pA[i - 1] = pA[i - 1] + X.T @ pa
    qdd = np.empty(n)
    a = np.empty((n, 6))
    for i in range(n):
        if i == 0:
            ap = np.zeros(6)
            ap[3:] = -g
        else:
            ap = a[i - 1]
        aprime = _X66(E[i], r[i]) @ ap + c[i]
        qdd[i] = (u[i] - U[i] @ aprime) / d[i]
        a[i] = aprime + S[i] * qdd[i]
    return qdd


@njit(cache=True)
def _integrate_chain(Rp, tp, axes, I6, g, q, dq, tau, dt):
    ddq = _aba(Rp, tp, axes, q, dq, tau, I6, g)
    dq2 = dq + dt * ddq
    return q + dt * dq2, dq2


@njit(cache=True)
def _dyn_fd_chain(Rp, tp, axes, I6, g, q, dq, tau, dt, h):
    """Central-difference (fx, fu) of the semi-implicit Euler step."""
    n = q.shape[0]
    nx = 2 * n
    fx = np.empty((nx, nx))
    fu = np.empty((nx, n))
    for i in range(nx):
        qp = q.copy(); dqp = dq.copy()
        qm = q.copy(); dqm = dq.copy()
        if i < n:
            qp[i] += h; qm[i] -= h
        else:
            dqp[i - n] += h; dqm[i - n] -= h
        q1, dq1 = _integrate_chain(Rp, tp, axes, I6, g, qp, dqp, tau, dt)
        q2, dq2 = _integrate_chain(Rp, tp, axes, I6, g, qm, dqm, tau, dt)
        fx[:n, i] = (q1 - q2) / (2 * h)
        fx[n:, i] = (dq1 - dq2) / (2 * h)
    for i in range(n):
        taup = tau.copy(); taup[i] += h
        taum = tau.copy(); taum[i] -= h
        q1, dq1 = _integrate_chain(Rp, tp, axes, I6, g, q, dq, taup, dt)
        q2, dq2 = _integrate_chain(Rp, tp, axes, I6, g, q, dq, taum, dt)
        fu[:n, i] = (q1 - q2) / (2 * h)
        fu[n:, i] = (dq1 - dq2) / (2 * h)
    return fx, fu


@njit(cache=True)
def _gravity_jac_chain(Rp, tp, axes, I6, g, q, h):
    """Central-difference Jacobian of the gravity-compensation torque wrt q."""
    n = q.shape[0]
    J = np.empty((n, n))
    z = np.zeros(n)
    for i in range(n):
        qp = q.copy(); qp[i] += h
        qm = q.copy(); qm[i] -= h
        J[:, i] = (_rnea(Rp, tp, axes, qp, z, z, I6, g) - _rnea(Rp, tp, axes, qm, z, z, I6, g)) / (2 * h)
    return J


def _check_dims(chain: KinematicChain, *vecs):
    for v in vecs:
        if np.asarray(v).shape != (chain.nq,):
            raise DimensionMismatch(
                f"expected vectors of length {chain.nq}, got shape {np.asarray(v).shape}"
            )


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """Pose of the camera frame in the robot base frame."""
    _check_dims(chain, q)
    Rp, tp, axes, _, _ = chain.packed()
    R, t = _fk_bodies(Rp, tp, axes, np.asarray(q, dtype=float))
    m = np.eye(4)
    m[:3, :3] = R[-1]
    m[:3, 3] = t[-1]
    return compose(Pose.from_matrix(m), chain.camera_offset)


def link_transforms(chain: KinematicChain, q: np.ndarray) -> list:
    """Base-frame pose of every body frame (joint origin after rotation)."""
    _check_dims(chain, q)
    Rp, tp, axes, _, _ = chain.packed()
    R, t = _fk_bodies(Rp, tp, axes, np.asarray(q, dtype=float))
    out = []
    for i in range(chain.nq):
        m = np.eye(4)
        m[:3, :3] = R[i]
        m[:3, 3] = t[i]
        out.append(Pose.from_matrix(m))
    return out


def rnea(chain: KinematicChain, q, dq, ddq) -> np.ndarray:
    """Inverse dynamics: torques realizing ddq at (q, dq), gravity included."""
    _check_dims(chain, q, dq, ddq)
    Rp, tp, axes, I6, g = chain.packed()
    return _rnea(
        Rp, tp, axes,
        np.asarray(q, float), np.asarray(dq, float), np.asarray(ddq, float),
        I6, g,
    )


def aba(chain: KinematicChain, q, dq, tau) -> np.ndarray:
    """Forward dynamics via the articulated body algorithm."""
    _check_dims(chain, q, dq, tau)
    Rp, tp, axes, I6, g = chain.packed()
    return _aba(
        Rp, tp, axes,
        np.asarray(q, float), np.asarray(dq, float), np.asarray(tau, float),
        I6, g,
    )


def gravity_torque(chain: KinematicChain, q) -> np.ndarray:
    """Static gravity-compensation torques (rnea at zero velocity/acceleration)."""
    z = np.zeros(chain.nq)
    return rnea(chain, q, z, z)


@dataclass
class DoubleIntegrator:
    """Analytic test plant: qdd = M^-1 u with diagonal M."""

    mass_diag: np.ndarray

    def __post_init__(self):
        self.mass_diag = np.asarray(self.mass_diag, dtype=float)
        if np.any(self.mass_diag <= 0):
            raise ValueError("mass_diag must be strictly positive")

    @property
    def nq(self) -> int:
        return self.mass_diag.shape[0]


@dataclass
class SerialChain:
    chain: KinematicChain

    @property
    def nq(self) -> int:
        return self.chain.nq


PlantModel = Union[SerialChain, DoubleIntegrator]


def plant_accel(model: PlantModel, q, dq, tau) -> np.ndarray:
    if isinstance(model, DoubleIntegrator):
        return np.asarray(tau, float) / model.mass_diag
    return aba(model.chain, q, dq, tau)


def integrate_plant(model: PlantModel, s: RobotState, u, dt: float) -> RobotState:
    """One semi-implicit Euler step: dq' = dq + dt*qdd, q' = q + dt*dq'."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = u.tau if isinstance(u, ControlCommand) else np.asarray(u, float)
    ddq = plant_accel(model, s.q, s.dq, tau)
    dq_next = s.dq + dt * ddq
    return RobotState(s.q + dt * dq_next, dq_next)


def _rod_link(mass=1.0, length=1.0):
    # Uniform rod along +x; tiny Ixx keeps the tensor positive definite.
    iyy = mass * length * length / 12.0
    return Link(mass, np.array([length / 2, 0.0, 0.0]), np.diag([1e-3, iyy, iyy]))


def planar3_chain(gravity=(0.0, 0.0, -9.81)) -> KinematicChain:
    """Default 3-DoF experiment arm: yaw, pitch, yaw with unit-length 1 kg links."""
    joints = [
        Joint(Pose.identity(), np.array([0.0, 0.0, 1.0])),
        Joint(Pose(translation=np.array([1.0, 0.0, 0.0])), np.array([0.0, 1.0, 0.0])),
        Joint(Pose(translation=np.array([1.0, 0.0, 0.0])), np.array([0.0, 0.0, 1.0])),
    ]
    links = [_rod_link(), _rod_link(), _rod_link()]
    camera = Pose(translation=np.array([1.0, 0.0, 0.0]))
    return KinematicChain(joints, links, camera_offset=camera, gravity=np.asarray(gravity, float))
