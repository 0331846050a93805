"""Serial-chain dynamics: gravity torques, ABA/RNEA consistency, energy.

Run: python demos/02_dynamics.py
"""

import numpy as np

from poseservo.robot import (
    RobotState,
    SerialChain,
    aba,
    gravity_torque,
    integrate_plant,
    link_transforms,
    planar3_chain,
    rnea,
)

chain = planar3_chain()
rng = np.random.default_rng(1)

# Inverse dynamics (RNEA) and forward dynamics (ABA) are mutual inverses.
q, dq, ddq = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
tau = rnea(chain, q, dq, ddq)
ddq_back = aba(chain, q, dq, tau)
print("ddq          :", np.round(ddq, 6))
print("aba(rnea(.)) :", np.round(ddq_back, 6))

# Gravity compensation holds the arm still.
tau_g = gravity_torque(chain, q)
print("gravity torque at q:", np.round(tau_g, 4))
print("residual accel under gravity comp:", np.round(aba(chain, q, 0 * dq, tau_g), 12))


def energy(state):
    n = chain.nq
    g = gravity_torque(chain, state.q)
    # joint-space inertia matrix, one RNEA column per unit acceleration
    H = np.column_stack(
        [rnea(chain, state.q, np.zeros(n), e) - g for e in np.eye(n)]
    )
    kinetic = 0.5 * state.dq @ H @ state.dq
    potential = 0.0
    for link, T in zip(chain.links, link_transforms(chain, state.q)):
        com_world = T.rotation_matrix() @ link.com + T.translation
        potential -= link.mass * chain.gravity @ com_world
    return kinetic + potential


# Passive swing from rest: total energy drifts very little at dt=1e-3.
model = SerialChain(chain)
state = RobotState(np.array([0.4, -0.7, 0.2]), np.zeros(3))
e0 = energy(state)
for _ in range(1000):
    state = integrate_plant(model, state, np.zeros(3), 1e-3)
e1 = energy(state)
print(f"energy drift over 1 s passive swing: {abs(e1 - e0) / abs(e0) * 100:.4f} %")
