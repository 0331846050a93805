"""Closed-loop scenarios and metrics.

Three studies mirror the system's evaluation: an open-loop recall sweep of
estimation methods over stream frequencies, an MPC step response to a rotated
reference with perception bypassed, and a full closed-loop run wiring the
scheduler, perception pipeline, OCP solver, Riccati servo, and plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geom
from .errors import EmptySequence, PoseServoError, SolverDiverged
from .geometry import Pose
from .ocp import CostWeights, OcpProblem, OcpSolution, TrackingReference, solve_ocp
from .perception import (
    LocalizerModel,
    PerceptionPipeline,
    PipelineConfig,
    TimedFrame,
    TimedPose,
    TrackerModel,
    simulate_localizer,
    simulate_tracker,
)
from .robot import (
    KinematicChain,
    RobotState,
    SerialChain,
    forward_kinematics,
    gravity_torque,
    integrate_plant,
)
from .sched import PRIO_CONTROL, PRIO_FRAME, PRIO_LOCALIZER, PRIO_OCP, Scheduler
from .servo import RiccatiPolicy, policy_torque

METHODS = ("Localizer", "Tracker-InitLocalizer", "OLT", "OLT-NoTracker")


# -- object trajectories -----------------------------------------------------


@dataclass
class StaticTrajectory:
    pose: Pose

    def pose_at(self, t: float) -> Pose:
        return self.pose


@dataclass
class CircularTrajectory:
    """Object circling in the xy-plane of `center` while yawing with the orbit."""

    center: Pose
    radius: float
    angular_rate: float  # rad/s

    def pose_at(self, t: float) -> Pose:
        theta = self.angular_rate * t
        local = geom.compose(
            Pose.from_axis_angle([0.0, 0.0, 1.0], theta),
            Pose(translation=np.array([self.radius, 0.0, 0.0])),
        )
        return geom.compose(self.center, local)


@dataclass
class WaypointTrajectory:
    times: list
    poses: list

    def pose_at(self, t: float) -> Pose:
        ts, ps = self.times, self.poses
        if t <= ts[0]:
            return ps[0]
        if t >= ts[-1]:
            return ps[-1]
        i = int(np.searchsorted(ts, t, side="right")) - 1
        a = (t - ts[i]) / (ts[i + 1] - ts[i])
        return geom.interpolate(ps[i], ps[i + 1], a)


def occluded_at(windows, t: float) -> bool:
    return any(a <= t < b for a, b in windows)


@dataclass
class ScenarioConfig:
    chain: KinematicChain
    pipeline: PipelineConfig
    weights: CostWeights
    T_ref: Pose
    trajectory: object
    duration: float
    q0: Optional[np.ndarray] = None
    occlusion_windows: list = field(default_factory=list)
    ocp_period: float = 0.01
    control_period: float = 0.001
    horizon: int = 20
    ocp_dt: float = 0.04

    def __post_init__(self):
        if not (self.control_period <= self.ocp_period <= self.pipeline.stream_period):
            raise ValueError("need control_period <= ocp_period <= stream_period")
        if self.q0 is None:
            self.q0 = self.weights.q_rest.copy()


# -- surrogate recall metric --------------------------------------------------

RECALL_TRANS_THRESHOLDS = np.arange(1, 11) * 0.01          # 1..10 cm
RECALL_ROT_THRESHOLDS = np.deg2rad(np.arange(5, 51, 5))    # 5..50 deg


def pose_recall(estimates, ground_truth) -> float:
    """Mean over a threshold grid of the fraction of frames under both errors.

    estimates: per-frame Optional[TimedPose]; invalid or missing count as failures.
    """
    if len(ground_truth) == 0:
        raise EmptySequence("no frames to score")
    if len(estimates) != len(ground_truth):
        raise ValueError("estimates and ground truth must align by frame")
    terr = np.full(len(ground_truth), np.inf)
    rerr = np.full(len(ground_truth), np.inf)
    for i, (est, gt) in enumerate(zip(estimates, ground_truth)):
        if est is None or not est.valid:
            continue
        terr[i], rerr[i] = geom.pose_distance(est.pose, gt)
    total = 0.0
    for tt in RECALL_TRANS_THRESHOLDS:
        for rt in RECALL_ROT_THRESHOLDS:
            total += np.mean((terr < tt) & (rerr < rt))
    return float(total / (RECALL_TRANS_THRESHOLDS.size * RECALL_ROT_THRESHOLDS.size))


@dataclass
class RecallCurve:
    frequencies: list
    recall: dict  # method name -> list of recall values, aligned with frequencies


def _make_frames(config: ScenarioConfig, freq: float):
    """Open-loop frame sequence: static camera, object follows the trajectory."""
    period = 1.0 / freq
    count = int(round(config.duration * freq))
    frames = []
    for k in range(count):
        t = k * period
        frames.append(
            TimedFrame(k, t, config.trajectory.pose_at(t),
                       occluded_at(config.occlusion_windows, t))
        )
    return frames


def _run_pipeline_open_loop(frames, pcfg: PipelineConfig):
    """Feed a frame list through the virtual-clock pipeline; per-frame estimates."""
    sched = Scheduler()
    pipe = PerceptionPipeline(pcfg, sched)
    for f in frames:
        sched.post(f.capture_time, PRIO_FRAME, "frame", lambda fr=f: pipe.submit_frame(fr))
    sched.run_until(frames[-1].capture_time + pcfg.localizer.delay + 1.0)
    by_seq = {}
    for tp in pipe.emitted:
        if tp.source == "tracker":
            by_seq[tp.frame_seq] = tp
    return [by_seq.get(f.seq) for f in frames], pipe


def run_recall_sweep(config: ScenarioConfig, frequencies, methods=METHODS) -> RecallCurve:
    recall = {m: [] for m in methods}
    for freq in frequencies:
        frames = _make_frames(config, freq)
        truth = [f.true_object_pose for f in frames]
        base = config.pipeline
        for method in methods:
            if method == "Localizer":
                # scored on per-frame outputs; latency deliberately ignored
                ests = []
                for f in frames:
                    p = simulate_localizer(f, base.localizer)
                    ests.append(None if p is None else TimedPose(p, f.seq, f.capture_time, "localizer", True))
            elif method == "Tracker-InitLocalizer":
                init = simulate_localizer(frames[0], base.localizer)
                ests = []
                pose = init
                for f in frames:
                    if pose is None:
                        ests.append(None)
                        continue
                    if f.seq == 0:
                        ests.append(TimedPose(pose, 0, f.capture_time, "localizer", True))
                        continue
                    pose, valid = simulate_tracker(f, pose, base.tracker)
                    ests.append(TimedPose(pose, f.seq, f.capture_time, "tracker", valid))
            else:
                tracker = base.tracker
                if method == "OLT-NoTracker":
                    tracker = TrackerModel(
                        delay=tracker.delay, rng_seed=tracker.rng_seed, identity=True
                    )
                pcfg = PipelineConfig(
                    stream_period=1.0 / freq, localizer=base.localizer, tracker=tracker
                )
                ests, _ = _run_pipeline_open_loop(frames, pcfg)
            recall[method].append(pose_recall(ests, truth))
    return RecallCurve(list(frequencies), recall)


# -- closed-loop machinery ----------------------------------------------------


@dataclass
class ErrorTrace:
    times: np.ndarray
    trans_err: np.ndarray
    rot_err: np.ndarray

    def steady_state(self, tail_fraction: float = 0.1) -> tuple[float, float]:
        n = max(1, int(len(self.times) * tail_fraction))
        return float(np.mean(self.trans_err[-n:])), float(np.mean(self.rot_err[-n:]))

    def settling_time(self, tol_fraction: float = 0.1) -> float:
        """First time after which the error stays within tol_fraction of the
        initial-to-steady-state amplitude around the steady-state value."""
        ss_t, ss_r = self.steady_state()
        err = self.trans_err + self.rot_err
        ss = ss_t + ss_r
        band = tol_fraction * abs(err[0] - ss)
        outside = np.abs(err - ss) > band
        if not outside.any():
            return float(self.times[0])
        last_out = int(np.nonzero(outside)[0][-1])
        if last_out + 1 >= len(err):
            return float(self.times[-1])
        return float(self.times[last_out + 1])


@dataclass
class RunLog:
    times: np.ndarray
    qs: np.ndarray
    dqs: np.ndarray
    taus: np.ndarray
    policy_ids: np.ndarray
    policies: list
    trans_err: np.ndarray
    rot_err: np.ndarray
    estimates: list
    events: list
    trace: list
    diverged: bool = False

    @property
    def error_trace(self) -> ErrorTrace:
        return ErrorTrace(self.times, self.trans_err, self.rot_err)


class _Loop:
    """Shared control-loop plumbing: 1 kHz servo + plant, 100 Hz OCP worker."""

    def __init__(self, config: ScenarioConfig, sched: Scheduler):
        self.cfg = config
        self.sched = sched
        self.model = SerialChain(config.chain)
        self.state = RobotState(config.q0.copy(), np.zeros_like(config.q0))
        self.policy = None
        self.policies = []
        self.prev_solution: Optional[OcpSolution] = None
        self.reference: Optional[TrackingReference] = None
        self.rows = []  # (t, q, dq, tau, policy_id)
        self.err_rows = []  # (t, trans, rot)
        self.target_world: Optional[Pose] = None
        self.desired_rel: Optional[Pose] = None

    def control_tick(self, t):
        if self.policy is None:
            tau = gravity_torque(self.cfg.chain, self.state.q)
            pid = -1
        else:
            tau = policy_torque(self.policy, self.state).tau
            pid = len(self.policies) - 1
        self.rows.append((t, self.state.q.copy(), self.state.dq.copy(), tau.copy(), pid))
        if self.desired_rel is not None and self.target_world is not None:
            cam = forward_kinematics(self.cfg.chain, self.state.q)
            rel = geom.compose(geom.inverse(cam), self.target_world)
            te, re = geom.pose_distance(rel, self.desired_rel)
            self.err_rows.append((t, te, re))
        self.state = integrate_plant(self.model, self.state, tau, self.cfg.control_period)

    def ocp_tick(self, t):
        if self.reference is None:
            return
        prob = OcpProblem(
            model=self.model, weights=self.cfg.weights, M=self.cfg.horizon,
            dt=self.cfg.ocp_dt, x0=self.state, reference=self.reference,
        )
        try:
            sol = solve_ocp(prob, warm_start=self.prev_solution)
        except PoseServoError as e:
            raise SolverDiverged(f"OCP solve failed at t={t}: {e}") from e
        self.prev_solution = sol
        self.policy = RiccatiPolicy.from_solution(sol, solve_timestamp=t)
        self.policies.append(self.policy)

    def finish(self, estimates, events, diverged=False) -> RunLog:
        rows = self.rows
        err = self.err_rows
        return RunLog(
            times=np.array([r[0] for r in rows]),
            qs=np.array([r[1] for r in rows]),
            dqs=np.array([r[2] for r in rows]),
            taus=np.array([r[3] for r in rows]),
            policy_ids=np.array([r[4] for r in rows]),
            policies=self.policies,
            trans_err=np.array([e[1] for e in err]),
            rot_err=np.array([e[2] for e in err]),
            estimates=estimates,
            events=events,
            trace=self.sched.trace,
            diverged=diverged,
        )


def step_response(config: ScenarioConfig, rotation_deg: float, w_v_list,
                  axis=(0.0, 0.0, 1.0)) -> dict:
    """MPC step response with perception bypassed: the reference is rotated at t=0.

    Returns {w_v: ErrorTrace}. The robot starts at rest with zero tracking cost
    (the object sits exactly at the pre-step reference).
    """
    results = {}
    for w_v in w_v_list:
        sched = Scheduler()
        weights = CostWeights(
            w_v=w_v, Q_x=config.weights.Q_x, Q_u=config.weights.Q_u,
            q_rest=config.weights.q_rest, rot_weight=config.weights.rot_weight,
        )
        cfg = ScenarioConfig(
            chain=config.chain, pipeline=config.pipeline, weights=weights,
            T_ref=config.T_ref, trajectory=config.trajectory, duration=config.duration,
            q0=config.q0, ocp_period=config.ocp_period,
            control_period=config.control_period, horizon=config.horizon,
            ocp_dt=config.ocp_dt,
        )
        loop = _Loop(cfg, sched)
        # target starts at the pre-step optimum, then jumps by a rotation about
        # a base-frame axis (through the base origin), e.g. the base yaw axis
        cam0 = forward_kinematics(config.chain, config.q0)
        target0 = geom.compose(cam0, config.T_ref)
        step = Pose.from_axis_angle(np.asarray(axis, float), math.radians(rotation_deg))
        target = geom.compose(step, target0)
        loop.reference = TrackingReference(
            T_k=geom.compose(geom.inverse(cam0), target),
            q_k=config.q0.copy(), T_ref=config.T_ref,
        )
        loop.target_world = target
        loop.desired_rel = config.T_ref
        sched.post_periodic(0.0, cfg.control_period, PRIO_CONTROL, "control", loop.control_tick,
                            end=cfg.duration)
        sched.post_periodic(0.0, cfg.ocp_period, PRIO_OCP, "ocp", loop.ocp_tick, end=cfg.duration)
        sched.run_until(cfg.duration)
        log = loop.finish([], [])
        results[w_v] = ErrorTrace(
            np.array([e[0] for e in loop.err_rows]),
            np.array([e[1] for e in loop.err_rows]),
            np.array([e[2] for e in loop.err_rows]),
        )
    return results


class _LocalizerOnlyEstimator:
    """Baseline estimate stream: raw localizer results, available after its delay."""

    def __init__(self, model: LocalizerModel, sched: Scheduler):
        self.model = model
        self.sched = sched
        self.emitted = []
        self.events = []

    def submit_frame(self, frame: TimedFrame):
        result = simulate_localizer(frame, self.model)
        if result is None:
            return
        done = self.sched.clock + self.model.delay
        self.sched.post(
            done, PRIO_LOCALIZER, "localizer_done",
            lambda f=frame, p=result, t=done: self.emitted.append(
                TimedPose(p, f.seq, t, "localizer", True)
            ),
            detail=f"seq={frame.seq}",
        )

    def latest_estimate(self, now: float):
        for tp in reversed(self.emitted):
            if tp.produced_time <= now + 1e-12:
                return tp
        from .errors import NotInitialized

        raise NotInitialized("no localizer result yet")


def run_closed_loop(config: ScenarioConfig, estimate_source: str = "olt") -> RunLog:
    """Full loop: frames from the moving camera, OLT (or stale localizer) estimates,
    100 Hz OCP solves paired with measurement-time configurations, 1 kHz servo."""
    sched = Scheduler()
    loop = _Loop(config, sched)
    if estimate_source == "olt":
        estimator = PerceptionPipeline(config.pipeline, sched)
    elif estimate_source == "localizer":
        estimator = _LocalizerOnlyEstimator(config.pipeline.localizer, sched)
    else:
        raise ValueError(f"unknown estimate source {estimate_source!r}")

    q_at_capture = {}
    seq_counter = {"k": 0}
    period = config.pipeline.stream_period

    def frame_tick(t):
        seq = seq_counter["k"]
        seq_counter["k"] += 1
        obj_world = config.trajectory.pose_at(t)
        cam = forward_kinematics(config.chain, loop.state.q)
        true_in_cam = geom.compose(geom.inverse(cam), obj_world)
        occ = occluded_at(config.occlusion_windows, t)
        q_at_capture[seq] = loop.state.q.copy()
        estimator.submit_frame(TimedFrame(seq, t, true_in_cam, occ))

    last_valid = {"tp": None}

    def ocp_tick(t):
        try:
            est = estimator.latest_estimate(t)
        except Exception:
            est = None
        if est is not None and est.valid:
            last_valid["tp"] = est
        tp = last_valid["tp"]
        if tp is not None:
            # hold the last valid estimate through occlusions
            loop.reference = TrackingReference(
                T_k=tp.pose, q_k=q_at_capture[tp.frame_seq], T_ref=config.T_ref
            )
        loop.ocp_tick(t)

    loop.desired_rel = config.T_ref
    loop.target_world = config.trajectory.pose_at(0.0)

    def control_tick(t):
        loop.target_world = config.trajectory.pose_at(t)
        loop.control_tick(t)

    sched.post_periodic(0.0, config.control_period, PRIO_CONTROL, "control", control_tick,
                        end=config.duration)
    sched.post_periodic(0.0, config.ocp_period, PRIO_OCP, "ocp", ocp_tick, end=config.duration)
    sched.post_periodic(0.0, period, PRIO_FRAME, "frame", frame_tick, end=config.duration)
    diverged = False
    try:
        sched.run_until(config.duration)
    except SolverDiverged:
        diverged = True
    events = getattr(estimator, "events", [])
    return loop.finish(estimator.emitted, events, diverged=diverged)
