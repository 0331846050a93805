"""Asynchronous object localization and tracking (OLT).

A slow-but-global localizer and a fast-but-local tracker run as separate
logical workers. While the localizer computes, incoming frames are buffered;
on completion a time-delay corrector re-tracks through the buffer to catch up
to the present, and the caught-up pose seeds the next main-tracker job.

Estimators are parametric simulators. Both are deterministic functions of
(model seed, frame seq), which makes virtual-clock runs byte-for-byte
reproducible and lets a sequential replay serve as an oracle.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geom
from .errors import NotInitialized
from .geometry import Pose, Twist
from .sched import PRIO_FRAME, PRIO_LOCALIZER, PRIO_TRACKER, Scheduler


@dataclass
class TimedFrame:
    seq: int
    capture_time: float
    true_object_pose: Pose  # camera frame; visible to estimator noise models only
    occluded: bool = False


@dataclass
class TimedPose:
    pose: Pose
    frame_seq: int
    produced_time: float
    source: str  # tracker | corrector | localizer
    valid: bool


@dataclass
class LocalizerModel:
    delay: float  # seconds from grabbing a frame to emitting a result
    detect_prob: float = 1.0
    trans_noise_sigma: float = 0.0
    rot_noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.delay <= 0:
            raise ValueError("localizer delay must be positive")
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValueError("detect_prob must be in [0, 1]")


@dataclass
class TrackerModel:
    delay: float
    basin_trans: float = math.inf   # convergence basin, meters
    basin_rot: float = math.inf     # radians
    alpha: float = 1.0              # per-frame geodesic convergence factor
    trans_noise_sigma: float = 0.0
    rot_noise_sigma: float = 0.0
    rng_seed: int = 0
    identity: bool = False          # ablation: tracker as identity mapping

    def __post_init__(self):
        if self.delay <= 0:
            raise ValueError("tracker delay must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")


@dataclass
class PipelineConfig:
    stream_period: float
    localizer: LocalizerModel
    tracker: TrackerModel
    buffer_capacity: int = 0  # 0 -> minimum feasible capacity

    def __post_init__(self):
        if self.tracker.delay >= self.stream_period:
            raise ValueError(
                "tracker delay must be below the stream period or the corrector never catches up"
            )
        min_cap = math.ceil(self.localizer.delay / self.stream_period) + 2
        if self.buffer_capacity == 0:
            self.buffer_capacity = min_cap
        elif self.buffer_capacity < min_cap:
            raise ValueError(f"buffer_capacity must be >= {min_cap}")


def _perturb(pose: Pose, rng: np.random.Generator, sigma_t: float, sigma_r: float) -> Pose:
    t = pose.translation + rng.normal(0.0, 1.0, 3) * sigma_t
    w = rng.normal(0.0, 1.0, 3) * sigma_r
    rot = geom.compose(Pose(rotation=pose.rotation), geom.exp(Twist(np.zeros(3), w)))
    return Pose(rot.rotation, t)


def simulate_localizer(frame: TimedFrame, m: LocalizerModel) -> Optional[Pose]:
    """Global detection result for one frame, or None. Deterministic per (seed, seq)."""
    rng = np.random.default_rng([m.rng_seed, frame.seq])
    detected = rng.random() <= m.detect_prob
    if frame.occluded or not detected:
        return None
    return _perturb(frame.true_object_pose, rng, m.trans_noise_sigma, m.rot_noise_sigma)


def simulate_tracker(frame: TimedFrame, init: Pose, m: TrackerModel) -> tuple[Pose, bool]:
    """One local refinement step from an initial pose.

    Outside the convergence basin (or on an occluded frame) the tracker cannot
    detect failure; it holds the stale init with valid=False.
    """
    if m.identity:
        return init.copy(), True
    terr, rerr = geom.pose_distance(init, frame.true_object_pose)
    if frame.occluded or terr > m.basin_trans or rerr > m.basin_rot:
        return init.copy(), False
    refined = geom.interpolate(init, frame.true_object_pose, m.alpha)
    rng = np.random.default_rng([m.rng_seed, frame.seq])
    return _perturb(refined, rng, m.trans_noise_sigma, m.rot_noise_sigma), True


def catch_up(frames, localized: Pose, m: TrackerModel) -> tuple[Pose, bool]:
    """Sequentially re-track through buffered frames starting from a localized pose."""
    pose, valid = localized, True
    for f in frames:
        pose, valid = simulate_tracker(f, pose, m)
    return pose, valid


class PerceptionPipeline:
    """Virtual-clock OLT pipeline driven by a Scheduler.

    Workers: the main tracker (one job per frame once initialized) and the
    localizer+corrector (continuously re-localizing the newest frame, then
    catching up through the buffer). submit_frame is the frame source.
    """

    def __init__(self, config: PipelineConfig, scheduler: Scheduler):
        self.cfg = config
        self.sched = scheduler
        self.buffer = deque()
        self.emitted = []          # estimate stream, produced_time-ordered
        self.last_output = None    # last main-tracker TimedPose
        self.handoff = None        # latest corrector TimedPose
        self.initialized = False
        self._loc_busy = False
        self._loc_seq = -1         # seq of the frame being/last localized
        self._corr_busy = False
        self._corr_pose = None
        self._corr_valid = True
        self._corr_seq = -1
        self._last_seq = -1
        self.events = []           # (time, worker, event, frame_seq, pose_text)

    def _log(self, worker: str, event: str, frame_seq: int, pose: Optional[Pose] = None):
        txt = geom.pose_to_text(pose) if pose is not None else ""
        self.events.append((self.sched.clock, worker, event, frame_seq, txt))

    # -- frame source ------------------------------------------------------

    def submit_frame(self, frame: TimedFrame):
        if frame.seq <= self._last_seq:
            raise ValueError("frame seq must be strictly increasing")
        self._last_seq = frame.seq
        self._log("source", "frame", frame.seq)

        # prune frames no longer reachable by the corrector
        floor = self._corr_seq if self._corr_busy else self._loc_seq
        while self.buffer and self.buffer[0].seq <= floor:
            self.buffer.popleft()
        self.buffer.append(frame)
        while len(self.buffer) > self.cfg.buffer_capacity:
            dropped = self.buffer.popleft()
            self._log("source", "overflow", dropped.seq)

        if not self._loc_busy and not self._corr_busy:
            self._start_localizer(frame)

        if self.initialized:
            if self.handoff is not None and self.handoff.frame_seq == frame.seq - 1:
                init = self.handoff
            elif self.last_output is not None:
                init = self.last_output
            else:
                init = self.handoff
            pose, valid = simulate_tracker(frame, init.pose, self.cfg.tracker)
            done = self.sched.clock + self.cfg.tracker.delay
            self.sched.post(
                done, PRIO_TRACKER, "tracker_done",
                lambda f=frame, p=pose, v=valid, t=done: self._emit_main(f, p, v, t),
                detail=f"seq={frame.seq}",
            )

    def _emit_main(self, frame: TimedFrame, pose: Pose, valid: bool, t: float):
        tp = TimedPose(pose, frame.seq, t, "tracker", valid)
        self.last_output = tp
        self.emitted.append(tp)
        self._log("tracker", "track_done" if valid else "track_lost", frame.seq, pose)

    # -- localizer + corrector worker --------------------------------------

    def _start_localizer(self, frame: TimedFrame):
        self._loc_busy = True
        self._loc_seq = frame.seq
        self._log("localizer", "loc_start", frame.seq)
        result = simulate_localizer(frame, self.cfg.localizer)
        done = self.sched.clock + self.cfg.localizer.delay
        self.sched.post(
            done, PRIO_LOCALIZER, "localizer_done",
            lambda f=frame, r=result: self._on_localizer_done(f, r),
            detail=f"seq={frame.seq}",
        )

    def _on_localizer_done(self, frame: TimedFrame, result: Optional[Pose]):
        self._loc_busy = False
        if result is None:
            self._log("localizer", "loc_fail", frame.seq)
            self._restart_localizer()
            return
        self._log("localizer", "loc_done", frame.seq, result)
        pending = [f for f in self.buffer if f.seq > frame.seq]
        if not pending:
            self._finish_corrector(result, frame.seq, True)
            return
        self._corr_busy = True
        self._corr_pose = result
        self._corr_valid = True
        self._corr_seq = frame.seq
        self._schedule_corrector_step(pending[0])

    def _schedule_corrector_step(self, frame: TimedFrame):
        done = self.sched.clock + self.cfg.tracker.delay
        self.sched.post(
            done, PRIO_LOCALIZER, "corrector_step",
            lambda f=frame: self._on_corrector_step(f),
            detail=f"seq={frame.seq}",
        )

    def _on_corrector_step(self, frame: TimedFrame):
        self._corr_pose, self._corr_valid = simulate_tracker(
            frame, self._corr_pose, self.cfg.tracker
        )
        self._corr_seq = frame.seq
        self._log("corrector", "corr_step", frame.seq, self._corr_pose)
        nxt = next((f for f in self.buffer if f.seq > frame.seq), None)
        if nxt is not None:
            self._schedule_corrector_step(nxt)
        else:
            self._corr_busy = False
            self._finish_corrector(self._corr_pose, self._corr_seq, self._corr_valid)

    def _finish_corrector(self, pose: Pose, seq: int, valid: bool):
        tp = TimedPose(pose, seq, self.sched.clock, "corrector", valid)
        self.handoff = tp
        self._log("corrector", "corr_done", seq, pose)
        # the handoff seeds the next tracker job; it only enters the estimate
        # stream when nothing newer has been emitted (pipeline start-up)
        if self.last_output is None or self.last_output.frame_seq < seq:
            self.emitted.append(tp)
        self.initialized = True
        self._restart_localizer()

    def _restart_localizer(self):
        newest = self.buffer[-1] if self.buffer else None
        if newest is not None and newest.seq > self._loc_seq:
            self._start_localizer(newest)
        # else: idle until the next frame arrival kicks it off

    # -- queries ------------------------------------------------------------

    def latest_estimate(self, now: float) -> TimedPose:
        """Most recent estimate with produced_time <= now (zero-order hold)."""
        for tp in reversed(self.emitted):
            if tp.produced_time <= now + 1e-12:
                return tp
        raise NotInitialized("no estimate produced yet")

    def write_events(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time", "worker", "event", "frame_seq", "pose"])
            for t, worker, event, seq, pose in self.events:
                w.writerow([repr(t), worker, event, seq, pose])

    def event_log_bytes(self) -> bytes:
        rows = ["time,worker,event,frame_seq,pose"]
        rows += [f"{t!r},{w},{e},{s},{p}" for t, w, e, s, p in self.events]
        return ("\n".join(rows) + "\n").encode()


def make_frame_source(sched: Scheduler, pipeline: PerceptionPipeline, true_pose_fn,
                      occluded_fn=None, start: float = 0.0, end: float = None):
    """Post a periodic frame-arrival task generating frames from a trajectory.

    true_pose_fn(t) gives the camera-frame object pose at capture time;
    occluded_fn(t) marks occlusion windows.
    """
    period = pipeline.cfg.stream_period
    counter = {"seq": 0}

    def emit(t):
        seq = counter["seq"]
        counter["seq"] += 1
        occ = bool(occluded_fn(t)) if occluded_fn is not None else False
        pipeline.submit_frame(TimedFrame(seq, t, true_pose_fn(t), occ))

    sched.post_periodic(start, period, PRIO_FRAME, "frame", emit, end=end)
