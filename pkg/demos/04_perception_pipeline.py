"""Asynchronous localize+track pipeline: virtual-clock timeline and wall-clock run.

Run: python demos/04_perception_pipeline.py
"""

import numpy as np

from poseservo.geometry import Pose
from poseservo.perception import (
    LocalizerModel,
    PerceptionPipeline,
    PipelineConfig,
    TrackerModel,
    make_frame_source,
)
from poseservo.sched import Scheduler

config = PipelineConfig(
    stream_period=1.0 / 30.0,
    localizer=LocalizerModel(delay=0.25),
    tracker=TrackerModel(delay=0.005),
)

# Virtual clock: while the 0.25 s localization runs, frames pile up; the
# corrector then re-tracks through the backlog in 5 ms steps and hands the
# caught-up pose to the per-frame tracker.
sched = Scheduler()
pipe = PerceptionPipeline(config, sched)
object_pose = Pose(translation=np.array([0.6, 0.0, 0.1]))
make_frame_source(sched, pipe, lambda t: object_pose, end=1.0)
sched.run_until(1.5)

print("first 16 pipeline events:")
for t, worker, event, seq, _ in pipe.events[:16]:
    print(f"  t={t:7.4f}  {worker:9s} {event:10s} frame {seq}")
first_track = next(tp for tp in pipe.emitted if tp.source == "tracker")
print(f"first per-frame estimate: frame {first_track.frame_seq} "
      f"at t={first_track.produced_time:.4f} "
      f"(age {first_track.produced_time - first_track.frame_seq * config.stream_period:.4f} s)")

# Wall-clock mode: same models on real threads; timings now include OS jitter.
from poseservo.wallclock import run_wallclock

run = run_wallclock(config, lambda t: object_pose, duration=1.0)
tracker_outputs = [tp for tp in run.emitted if tp.source == "tracker"]
print(f"wall-clock run: {len(run.events)} events, "
      f"{len(tracker_outputs)} tracker estimates in 1 s")
