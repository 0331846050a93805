"""Tracking OCP and Riccati policy: solve once, inspect, apply feedback.

Run: python demos/03_reaching_mpc.py
"""

import numpy as np

from poseservo import geometry as geom
from poseservo.geometry import Pose
from poseservo.ocp import CostWeights, OcpProblem, TrackingReference, solve_ocp
from poseservo.robot import RobotState, SerialChain, forward_kinematics, planar3_chain
from poseservo.servo import RiccatiPolicy, policy_torque

chain = planar3_chain()
q0 = np.array([0.3, -0.9, 0.6])
T_ref = Pose(translation=np.array([0.6, 0.0, 0.0]))

# Target: the object the camera saw at q0, displaced by a 20-degree base yaw.
cam0 = forward_kinematics(chain, q0)
target = geom.compose(Pose.from_axis_angle([0, 0, 1], np.radians(20.0)),
                      geom.compose(cam0, T_ref))
reference = TrackingReference(
    T_k=geom.compose(geom.inverse(cam0), target), q_k=q0.copy(), T_ref=T_ref
)

weights = CostWeights(
    w_v=20.0,
    Q_x=np.array([0.3, 0.3, 0.3, 3.0, 3.0, 3.0]),
    Q_u=np.array([0.1, 0.1, 0.1]),
    q_rest=q0.copy(),
)
problem = OcpProblem(
    model=SerialChain(chain), weights=weights, M=20, dt=0.04,
    x0=RobotState(q0.copy(), np.zeros(3)), reference=reference,
)
sol = solve_ocp(problem)
print(f"converged={sol.converged} after {sol.iterations} iterations, cost {sol.cost:.4f}")
print("first torque tau0:", np.round(sol.tau0, 3))
print("feedback gains K0:\n", np.round(sol.K0, 2))

# The high-rate servo evaluates the affine policy around the solve's state.
policy = RiccatiPolicy.from_solution(sol)
x = RobotState(q0 + 0.01, np.zeros(3) + 0.02)
cmd = policy_torque(policy, x)
print("perturbed-state torque:", np.round(cmd.tau, 3))

# End of horizon: how far the planned motion gets toward the target.
q_end = sol.xs[-1][:3]
cam_end = forward_kinematics(chain, q_end)
t_err, r_err = geom.pose_distance(geom.compose(cam_end, T_ref), target)
print(f"tracking error at horizon end: {t_err:.4f} m, {np.degrees(r_err):.2f} deg")
