"""Wall-clock perception pipeline with real concurrent workers.

Demonstration counterpart of the virtual-clock `PerceptionPipeline`: the same
estimator models run on real threads with real sleeps standing in for compute
time. Timing here is subject to OS jitter, so correctness is asserted only on
the virtual-clock mode; this module exists to exercise the concurrency.

Three workers communicate only via queues and one latest-pose mailbox:
a frame source, the main tracker, and the localizer+corrector.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

from .perception import (
    PipelineConfig,
    TimedFrame,
    TimedPose,
    catch_up,
    simulate_localizer,
    simulate_tracker,
)


@dataclass
class WallClockRun:
    emitted: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (time, worker, event, frame_seq)


def run_wallclock(config: PipelineConfig, true_pose_fn, duration: float,
                  occluded_fn=None, time_scale: float = 1.0) -> WallClockRun:
    """Run the pipeline on real threads for `duration` (scaled) seconds.

    time_scale > 1 slows everything down uniformly; the frame timestamps
    reported in the result are in unscaled scenario time.
    """
    run = WallClockRun()
    t0 = time.monotonic()
    lock = threading.Lock()

    def now() -> float:
        return (time.monotonic() - t0) / time_scale

    def log(worker, event, seq):
        with lock:
            run.events.append((now(), worker, event, seq))

    tracker_q = queue.Queue()
    buffer = []  # guarded by lock; pruned by the localizer worker
    mailbox = {"init": None, "handoff": None, "last": None}
    stop = threading.Event()

    def frame_source():
        seq = 0
        while not stop.is_set():
            t = now()
            if t >= duration:
                break
            occ = bool(occluded_fn(t)) if occluded_fn is not None else False
            frame = TimedFrame(seq, t, true_pose_fn(t), occ)
            with lock:
                buffer.append(frame)
                del buffer[: max(0, len(buffer) - config.buffer_capacity)]
                initialized = mailbox["init"] is not None
            log("source", "frame", seq)
            if initialized:
                tracker_q.put(frame)
            seq += 1
            time.sleep(config.stream_period * time_scale)
        tracker_q.put(None)

    def main_tracker():
        while True:
            frame = tracker_q.get()
            if frame is None:
                return
            with lock:
                handoff = mailbox["handoff"]
                last = mailbox["last"]
            if handoff is not None and handoff.frame_seq == frame.seq - 1:
                init = handoff
            elif last is not None:
                init = last
            else:
                init = handoff
            pose, valid = simulate_tracker(frame, init.pose, config.tracker)
            time.sleep(config.tracker.delay * time_scale)
            tp = TimedPose(pose, frame.seq, now(), "tracker", valid)
            with lock:
                mailbox["last"] = tp
                run.emitted.append(tp)
            log("tracker", "track_done" if valid else "track_lost", frame.seq)

    def localizer_corrector():
        last_seq = -1
        while not stop.is_set():
            with lock:
                frame = buffer[-1] if buffer and buffer[-1].seq > last_seq else None
            if frame is None:
                time.sleep(config.stream_period * time_scale / 4)
                if now() >= duration:
                    return
                continue
            last_seq = frame.seq
            log("localizer", "loc_start", frame.seq)
            result = simulate_localizer(frame, config.localizer)
            time.sleep(config.localizer.delay * time_scale)
            if result is None:
                log("localizer", "loc_fail", frame.seq)
                continue
            log("localizer", "loc_done", frame.seq)
            with lock:
                pending = [f for f in buffer if f.seq > frame.seq]
            pose, valid = catch_up(pending, result, config.tracker)
            time.sleep(config.tracker.delay * time_scale * len(pending))
            seq = pending[-1].seq if pending else frame.seq
            tp = TimedPose(pose, seq, now(), "corrector", valid)
            with lock:
                mailbox["handoff"] = tp
                if mailbox["init"] is None:
                    mailbox["init"] = tp
                    run.emitted.append(tp)
            log("corrector", "corr_done", seq)
            last_seq = seq

    threads = [
        threading.Thread(target=frame_source, name="frames"),
        threading.Thread(target=main_tracker, name="tracker"),
        threading.Thread(target=localizer_corrector, name="localizer"),
    ]
    for th in threads:
        th.start()
    deadline = t0 + (duration + 2 * config.localizer.delay) * time_scale
    while time.monotonic() < deadline and any(th.is_alive() for th in threads):
        time.sleep(0.01)
    stop.set()
    for th in threads:
        th.join(timeout=5.0)
    run.emitted.sort(key=lambda tp: tp.produced_time)
    run.events.sort(key=lambda ev: ev[0])
    return run
