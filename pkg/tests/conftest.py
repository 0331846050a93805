"""Shared builders for the test suite."""

import math

import numpy as np
import pytest

from poseservo import geometry as geom
from poseservo.geometry import Pose, Twist
from poseservo.robot import Joint, KinematicChain, Link, planar3_chain


def random_twist(rng, w_max=3.0):
    w = rng.normal(size=3)
    norm = np.linalg.norm(w)
    if norm > 0:
        w = w * (rng.uniform(0.0, w_max) / norm)
    return Twist(rng.normal(size=3), w)


def random_pose(rng, w_max=3.0):
    return geom.exp(random_twist(rng, w_max))


def rod_link(mass=1.0, length=1.0):
    """Uniform rod along +x with the com at its middle."""
    iyy = mass * length**2 / 12.0
    return Link(
        mass=mass,
        com=np.array([length / 2.0, 0.0, 0.0]),
        inertia=np.diag([1e-3, iyy, iyy]),
    )


def random_chain(rng, n=4):
    joints, links = [], []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        joints.append(Joint(parent_transform=random_pose(rng, w_max=1.5), axis=axis))
        m = rng.uniform(0.5, 2.0)
        # random positive-definite inertia about the com
        A = rng.normal(size=(3, 3)) * 0.1
        I = A @ A.T + 0.05 * np.eye(3)
        links.append(Link(mass=m, com=rng.normal(size=3) * 0.3, inertia=I))
    return KinematicChain(joints=joints, links=links,
                          camera_offset=random_pose(rng, w_max=1.0))


def pendulum_chain(mass=1.4, l_c=0.5, axis=(0.0, -1.0, 0.0)):
    """One revolute joint; at q=0 the rod lies horizontally along +x."""
    return KinematicChain(
        joints=[Joint(parent_transform=Pose.identity(), axis=np.asarray(axis, float))],
        links=[Link(mass=mass, com=np.array([l_c, 0.0, 0.0]),
                    inertia=np.diag([1e-4, mass * l_c**2 / 3.0, mass * l_c**2 / 3.0]))],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def chain3():
    return planar3_chain()


@pytest.fixture
def paper_weights():
    from poseservo.ocp import CostWeights

    return CostWeights(
        w_v=20.0,
        Q_x=np.array([0.3, 0.3, 0.3, 3.0, 3.0, 3.0]),
        Q_u=np.array([0.1, 0.1, 0.1]),
        q_rest=np.array([0.3, -0.9, 0.6]),
    )
