"""Torque-level visual servoing with asynchronous object localization and tracking.

Layers, bottom up: `geometry` (SE(3) poses and twists), `robot` (serial-chain
kinematics/dynamics and the simulated plant), `sched` (virtual-clock event
loop), `ocp` (DDP tracking solver), `servo` (Riccati feedback policy),
`perception` (localizer + tracker + time-delay corrector pipeline),
`experiments` (closed-loop scenarios and metrics), `cli` (config-driven runs).
"""

from .errors import (
    AngleNearPi,
    BackwardPassFailure,
    BufferOverflow,
    CostSingularity,
    DimensionMismatch,
    EmptySequence,
    NonFiniteCost,
    NotInitialized,
    ParseError,
    PoseServoError,
    SolverDiverged,
    ValidationError,
)
from .geometry import Pose, Twist, compose, exp, interpolate, inverse, log, pose_distance
from .ocp import CostWeights, OcpProblem, OcpSolution, TrackingReference, solve_ocp
from .perception import (
    LocalizerModel,
    PerceptionPipeline,
    PipelineConfig,
    TimedFrame,
    TimedPose,
    TrackerModel,
)
from .robot import (
    ControlCommand,
    DoubleIntegrator,
    Joint,
    KinematicChain,
    Link,
    RobotState,
    SerialChain,
    forward_kinematics,
    planar3_chain,
)
from .sched import Scheduler
from .servo import RiccatiPolicy, policy_torque

__version__ = "0.1.0"
