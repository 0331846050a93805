"""Command-line entry point: parse configs, dispatch experiments, emit reports.

Config files are INI-style text with sections mirroring the type hierarchy
(see docs/formats.md). `run` writes CSV reports, an SVG chart, and a
manifest.json sufficient to reproduce the run. Exit codes: 0 success,
1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import geometry as geom
from .errors import ParseError, PoseServoError, ValidationError
from .experiments import (
    METHODS,
    CircularTrajectory,
    ScenarioConfig,
    StaticTrajectory,
    WaypointTrajectory,
    run_closed_loop,
    run_recall_sweep,
    step_response,
)
from .geometry import Pose, pose_from_text, pose_to_text
from .ocp import CostWeights, OcpProblem, TrackingReference, solve_ocp
from .perception import LocalizerModel, PipelineConfig, TrackerModel
from .robot import (
    Joint,
    KinematicChain,
    Link,
    RobotState,
    SerialChain,
    forward_kinematics,
    planar3_chain,
)
from .servo import RiccatiPolicy, policy_torque
from .svgplot import write_chart

EXPERIMENTS = ("step", "sweep", "closed-loop", "bench")
MODES = ("virtual", "wallclock")
OUT_ENV_VAR = "POSESERVO_OUT"


# -- low-level config access ---------------------------------------------------


def _key_line(path: str, section: str, key: str):
    """Line number of `key` inside `[section]`, for error messages."""
    try:
        with open(path) as f:
            current = None
            for lineno, line in enumerate(f, start=1):
                stripped = line.strip()
                if stripped.startswith("[") and stripped.endswith("]"):
                    current = stripped[1:-1]
                elif current == section and stripped.split("=")[0].strip() == key:
                    return lineno
    except OSError:
        pass
    return None


class _Section:
    """One config section with field-path errors on access."""

    def __init__(self, cp: configparser.ConfigParser, path: str, name: str):
        self.cp = cp
        self.path = path
        self.name = name

    def _raw(self, key: str, default=None, required: bool = False) -> str:
        field = f"{self.name}.{key}"
        if not self.cp.has_option(self.name, key):
            if required:
                raise ValidationError(field, "mandatory field is missing")
            return default
        return self.cp.get(self.name, key)

    def _convert(self, key: str, conv, default=None, required=False):
        raw = self._raw(key, required=required)
        if raw is None:
            return default
        try:
            return conv(raw)
        except (ValueError, TypeError) as e:
            field = f"{self.name}.{key}"
            raise ParseError(
                f"{field}: cannot parse {raw!r} ({e})",
                line=_key_line(self.path, self.name, key),
                field=field,
            ) from e

    def scalar(self, key, default=None, required=False):
        return self._convert(key, float, default, required)

    def integer(self, key, default=None, required=False):
        return self._convert(key, int, default, required)

    def text(self, key, default=None, required=False):
        return self._raw(key, default, required)

    def vector(self, key, default=None, required=False):
        return self._convert(
            key, lambda s: np.array([float(tok) for tok in s.split()]), default, required
        )

    def pose(self, key, default=None, required=False):
        return self._convert(key, pose_from_text, default, required)


def _require(condition: bool, field: str, constraint: str):
    if not condition:
        raise ValidationError(field, constraint)


def _fmt_vector(v) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(v, dtype=float))


# -- chain description files ----------------------------------------------------


def load_chain(path: str) -> KinematicChain:
    """Parse a chain description file (see docs/formats.md)."""
    cp = _read_ini(path)
    if not cp.has_section("chain"):
        raise ValidationError("chain", "mandatory section is missing")
    top = _Section(cp, path, "chain")
    gravity = top.vector("gravity", default=np.array([0.0, 0.0, -9.81]))
    camera_offset = top.pose("camera_offset", default=Pose.identity())
    joints, links = [], []
    i = 0
    while cp.has_section(f"joint.{i}"):
        js = _Section(cp, path, f"joint.{i}")
        ls_name = f"link.{i}"
        _require(cp.has_section(ls_name), ls_name, "every joint needs a matching link section")
        ls = _Section(cp, path, ls_name)
        axis = js.vector("axis", required=True)
        _require(axis.shape == (3,), f"joint.{i}.axis", "must have 3 components")
        _require(
            abs(np.linalg.norm(axis) - 1.0) <= 1e-9, f"joint.{i}.axis", "must be unit norm"
        )
        offset = js.pose("offset", default=Pose.identity())
        mass = ls.scalar("mass", required=True)
        _require(mass > 0, f"{ls_name}.mass", "must be positive")
        com = ls.vector("com", default=np.zeros(3))
        inertia = ls.vector("inertia", required=True)
        _require(inertia.shape == (6,), f"{ls_name}.inertia",
                 "needs 6 numbers: ixx iyy izz ixy ixz iyz")
        ixx, iyy, izz, ixy, ixz, iyz = inertia
        I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        _require(np.linalg.eigvalsh(I).min() > 0, f"{ls_name}.inertia",
                 "must be positive definite")
        joints.append(Joint(parent_transform=offset, axis=axis))
        links.append(Link(mass=mass, com=com, inertia=I))
        i += 1
    _require(i > 0, "joint.0", "chain needs at least one joint")
    _require(not cp.has_section(f"link.{i}"), f"link.{i}", "link without a matching joint")
    return KinematicChain(joints=joints, links=links, camera_offset=camera_offset,
                          gravity=gravity)


def save_chain(chain: KinematicChain, path: str):
    lines = [
        "[chain]",
        f"gravity = {_fmt_vector(chain.gravity)}",
        f"camera_offset = {pose_to_text(chain.camera_offset)}",
    ]
    for i, (j, l) in enumerate(zip(chain.joints, chain.links)):
        I = l.inertia
        lines += [
            "",
            f"[joint.{i}]",
            f"offset = {pose_to_text(j.parent_transform)}",
            f"axis = {_fmt_vector(j.axis)}",
            "",
            f"[link.{i}]",
            f"mass = {l.mass!r}",
            f"com = {_fmt_vector(l.com)}",
            f"inertia = {_fmt_vector([I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2]])}",
        ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# -- experiment configs ----------------------------------------------------------


def _read_ini(path: str) -> configparser.ConfigParser:
    if not os.path.exists(path):
        raise ParseError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as f:
            cp.read_file(f, source=path)
    except configparser.Error as e:
        lineno = getattr(e, "lineno", None)
        if lineno is None and getattr(e, "errors", None):
            lineno = e.errors[0][0]
        raise ParseError(str(e), line=lineno) from e
    return cp


def parse_config(path: str):
    """Parse and fully validate an experiment config.

    Returns (ScenarioConfig, extras) where extras holds experiment-specific
    settings: frequencies, w_v_list, rotation_deg, axis, seeds.
    """
    cp = _read_ini(path)
    base = os.path.dirname(os.path.abspath(path))

    for name in ("scenario", "pipeline", "localizer", "tracker", "weights", "trajectory"):
        _require(cp.has_section(name), name, "mandatory section is missing")

    chain_file = None
    if cp.has_section("chain"):
        chain_file = _Section(cp, path, "chain").text("file")
    if chain_file:
        chain = load_chain(os.path.join(base, chain_file))
    else:
        chain = planar3_chain()

    loc = _Section(cp, path, "localizer")
    delay = loc.scalar("delay", required=True)
    _require(delay > 0, "localizer.delay", "must be positive")
    detect_prob = loc.scalar("detect_prob", default=1.0)
    _require(0.0 <= detect_prob <= 1.0, "localizer.detect_prob", "must be in [0, 1]")
    localizer = LocalizerModel(
        delay=delay,
        detect_prob=detect_prob,
        trans_noise_sigma=loc.scalar("trans_noise_sigma", default=0.0),
        rot_noise_sigma=loc.scalar("rot_noise_sigma", default=0.0),
        rng_seed=loc.integer("seed", default=0),
    )

    trk = _Section(cp, path, "tracker")
    tdelay = trk.scalar("delay", required=True)
    _require(tdelay > 0, "tracker.delay", "must be positive")
    alpha = trk.scalar("alpha", default=1.0)
    _require(0.0 < alpha <= 1.0, "tracker.alpha", "must be in (0, 1]")
    tracker = TrackerModel(
        delay=tdelay,
        basin_trans=trk.scalar("basin_trans", default=math.inf),
        basin_rot=trk.scalar("basin_rot", default=math.inf),
        alpha=alpha,
        trans_noise_sigma=trk.scalar("trans_noise_sigma", default=0.0),
        rot_noise_sigma=trk.scalar("rot_noise_sigma", default=0.0),
        rng_seed=trk.integer("seed", default=0),
    )

    pip = _Section(cp, path, "pipeline")
    stream_period = pip.scalar("stream_period", required=True)
    _require(stream_period > 0, "pipeline.stream_period", "must be positive")
    _require(
        tracker.delay < stream_period,
        "tracker.delay",
        "must be below pipeline.stream_period (pipeline feasibility condition:"
        " the corrector can only catch up if one re-track fits between frames)",
    )
    buffer_capacity = pip.integer("buffer_capacity", default=0)
    min_cap = math.ceil(localizer.delay / stream_period) + 2
    _require(buffer_capacity == 0 or buffer_capacity >= min_cap,
             "pipeline.buffer_capacity", f"must be 0 (auto) or >= {min_cap}")
    pipeline = PipelineConfig(stream_period=stream_period, localizer=localizer,
                              tracker=tracker, buffer_capacity=buffer_capacity)

    wts = _Section(cp, path, "weights")
    w_v = wts.scalar("w_v", required=True)
    _require(w_v >= 0, "weights.w_v", "must be >= 0")
    Q_x = wts.vector("Q_x", required=True)
    Q_u = wts.vector("Q_u", required=True)
    _require(Q_x.shape == (2 * chain.nq,), "weights.Q_x", f"needs {2 * chain.nq} entries")
    _require(Q_u.shape == (chain.nq,), "weights.Q_u", f"needs {chain.nq} entries")
    _require((Q_x >= 0).all(), "weights.Q_x", "entries must be >= 0")
    _require((Q_u >= 0).all(), "weights.Q_u", "entries must be >= 0")
    q_rest = wts.vector("q_rest", required=True)
    _require(q_rest.shape == (chain.nq,), "weights.q_rest", f"needs {chain.nq} entries")
    weights = CostWeights(w_v=w_v, Q_x=Q_x, Q_u=Q_u, q_rest=q_rest,
                          rot_weight=wts.scalar("rot_weight", default=1.0))

    traj_sec = _Section(cp, path, "trajectory")
    kind = traj_sec.text("kind", required=True)
    if kind == "static":
        trajectory = StaticTrajectory(traj_sec.pose("pose", required=True))
    elif kind == "circular":
        radius = traj_sec.scalar("radius", required=True)
        _require(radius >= 0, "trajectory.radius", "must be >= 0")
        trajectory = CircularTrajectory(
            center=traj_sec.pose("center", required=True),
            radius=radius,
            angular_rate=traj_sec.scalar("angular_rate", required=True),
        )
    elif kind == "waypoints":
        times = traj_sec.vector("times", required=True)
        poses_raw = traj_sec.text("poses", required=True)
        try:
            poses = [pose_from_text(tok) for tok in poses_raw.split(";")]
        except ValueError as e:
            raise ParseError(f"trajectory.poses: {e}",
                             line=_key_line(path, "trajectory", "poses"),
                             field="trajectory.poses") from e
        _require(len(times) == len(poses), "trajectory.times",
                 "must have one entry per pose")
        _require((np.diff(times) > 0).all(), "trajectory.times",
                 "must be strictly increasing")
        trajectory = WaypointTrajectory(list(times), poses)
    else:
        raise ValidationError("trajectory.kind",
                              "must be one of static, circular, waypoints")

    sc = _Section(cp, path, "scenario")
    duration = sc.scalar("duration", required=True)
    _require(duration > 0, "scenario.duration", "must be positive")
    ocp_period = sc.scalar("ocp_period", default=0.01)
    control_period = sc.scalar("control_period", default=0.001)
    _require(
        control_period <= ocp_period <= stream_period,
        "scenario.ocp_period",
        "need control_period <= ocp_period <= pipeline.stream_period",
    )
    horizon = sc.integer("horizon", default=20)
    _require(horizon >= 1, "scenario.horizon", "must be >= 1")
    ocp_dt = sc.scalar("ocp_dt", default=0.04)
    _require(ocp_dt > 0, "scenario.ocp_dt", "must be positive")
    q0 = sc.vector("q0", default=None)
    if q0 is not None:
        _require(q0.shape == (chain.nq,), "scenario.q0", f"needs {chain.nq} entries")
    occ_raw = sc.text("occlusions", default="")
    occlusions = []
    for tok in occ_raw.split():
        parts = tok.split(":")
        _require(len(parts) == 2, "scenario.occlusions",
                 "entries must look like start:end")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError as e:
            raise ParseError(f"scenario.occlusions: {e}",
                             line=_key_line(path, "scenario", "occlusions"),
                             field="scenario.occlusions") from e
        _require(a < b, "scenario.occlusions", "window start must precede its end")
        occlusions.append((a, b))

    config = ScenarioConfig(
        chain=chain, pipeline=pipeline, weights=weights,
        T_ref=sc.pose("T_ref", required=True), trajectory=trajectory,
        duration=duration, q0=q0, occlusion_windows=occlusions,
        ocp_period=ocp_period, control_period=control_period,
        horizon=horizon, ocp_dt=ocp_dt,
    )

    ex = _Section(cp, path, "experiment") if cp.has_section("experiment") else None
    extras = {
        "chain_file": chain_file,
        "frequencies": [10.0, 30.0, 60.0, 90.0, 120.0],
        "w_v_list": [10.0, 20.0, 40.0],
        "rotation_deg": 30.0,
        "axis": np.array([0.0, 0.0, 1.0]),
        "seeds": [0, 1, 2],
    }
    if ex is not None:
        freqs = ex.vector("frequencies", default=None)
        if freqs is not None:
            _require((freqs > 0).all(), "experiment.frequencies", "must be positive")
            extras["frequencies"] = [float(f) for f in freqs]
        wvl = ex.vector("w_v_list", default=None)
        if wvl is not None:
            _require((wvl >= 0).all(), "experiment.w_v_list", "must be >= 0")
            extras["w_v_list"] = [float(w) for w in wvl]
        extras["rotation_deg"] = ex.scalar("rotation_deg", default=extras["rotation_deg"])
        ax = ex.vector("axis", default=None)
        if ax is not None:
            _require(ax.shape == (3,) and np.linalg.norm(ax) > 0,
                     "experiment.axis", "needs 3 components, not all zero")
            extras["axis"] = ax
        seeds = ex.vector("seeds", default=None)
        if seeds is not None:
            extras["seeds"] = [int(s) for s in seeds]
    return config, extras


def serialize_config(config: ScenarioConfig, extras: dict) -> str:
    """Canonical text form; parse_config(serialize_config(...)) round-trips."""
    lines = [
        "[scenario]",
        f"duration = {config.duration!r}",
        f"ocp_period = {config.ocp_period!r}",
        f"control_period = {config.control_period!r}",
        f"horizon = {config.horizon}",
        f"ocp_dt = {config.ocp_dt!r}",
        f"q0 = {_fmt_vector(config.q0)}",
        f"T_ref = {pose_to_text(config.T_ref)}",
    ]
    if config.occlusion_windows:
        occ = " ".join(f"{a!r}:{b!r}" for a, b in config.occlusion_windows)
        lines.append(f"occlusions = {occ}")
    if extras.get("chain_file"):
        lines += ["", "[chain]", f"file = {extras['chain_file']}"]
    pip = config.pipeline
    lines += [
        "",
        "[pipeline]",
        f"stream_period = {pip.stream_period!r}",
        f"buffer_capacity = {pip.buffer_capacity}",
        "",
        "[localizer]",
        f"delay = {pip.localizer.delay!r}",
        f"detect_prob = {pip.localizer.detect_prob!r}",
        f"trans_noise_sigma = {pip.localizer.trans_noise_sigma!r}",
        f"rot_noise_sigma = {pip.localizer.rot_noise_sigma!r}",
        f"seed = {pip.localizer.rng_seed}",
        "",
        "[tracker]",
        f"delay = {pip.tracker.delay!r}",
        f"basin_trans = {pip.tracker.basin_trans!r}",
        f"basin_rot = {pip.tracker.basin_rot!r}",
        f"alpha = {pip.tracker.alpha!r}",
        f"trans_noise_sigma = {pip.tracker.trans_noise_sigma!r}",
        f"rot_noise_sigma = {pip.tracker.rot_noise_sigma!r}",
        f"seed = {pip.tracker.rng_seed}",
        "",
        "[weights]",
        f"w_v = {config.weights.w_v!r}",
        f"Q_x = {_fmt_vector(config.weights.Q_x)}",
        f"Q_u = {_fmt_vector(config.weights.Q_u)}",
        f"q_rest = {_fmt_vector(config.weights.q_rest)}",
        f"rot_weight = {config.weights.rot_weight!r}",
        "",
        "[trajectory]",
    ]
    traj = config.trajectory
    if isinstance(traj, StaticTrajectory):
        lines += ["kind = static", f"pose = {pose_to_text(traj.pose)}"]
    elif isinstance(traj, CircularTrajectory):
        lines += [
            "kind = circular",
            f"center = {pose_to_text(traj.center)}",
            f"radius = {traj.radius!r}",
            f"angular_rate = {traj.angular_rate!r}",
        ]
    elif isinstance(traj, WaypointTrajectory):
        lines += [
            "kind = waypoints",
            f"times = {_fmt_vector(traj.times)}",
            "poses = " + ";".join(pose_to_text(p) for p in traj.poses),
        ]
    else:
        raise ValueError(f"unknown trajectory type {type(traj).__name__}")
    lines += [
        "",
        "[experiment]",
        f"frequencies = {_fmt_vector(extras['frequencies'])}",
        f"w_v_list = {_fmt_vector(extras['w_v_list'])}",
        f"rotation_deg = {extras['rotation_deg']!r}",
        f"axis = {_fmt_vector(extras['axis'])}",
        "seeds = " + " ".join(str(s) for s in extras["seeds"]),
    ]
    return "\n".join(lines) + "\n"


# -- run outputs ------------------------------------------------------------------


def _reseed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    pip = config.pipeline
    loc = LocalizerModel(pip.localizer.delay, pip.localizer.detect_prob,
                         pip.localizer.trans_noise_sigma, pip.localizer.rot_noise_sigma,
                         rng_seed=seed)
    trk = TrackerModel(pip.tracker.delay, pip.tracker.basin_trans, pip.tracker.basin_rot,
                       pip.tracker.alpha, pip.tracker.trans_noise_sigma,
                       pip.tracker.rot_noise_sigma, rng_seed=seed,
                       identity=pip.tracker.identity)
    return ScenarioConfig(
        chain=config.chain,
        pipeline=PipelineConfig(pip.stream_period, loc, trk, pip.buffer_capacity),
        weights=config.weights, T_ref=config.T_ref, trajectory=config.trajectory,
        duration=config.duration, q0=config.q0,
        occlusion_windows=config.occlusion_windows, ocp_period=config.ocp_period,
        control_period=config.control_period, horizon=config.horizon,
        ocp_dt=config.ocp_dt,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _run_step(config, extras, out):
    results = step_response(config, extras["rotation_deg"], extras["w_v_list"],
                            axis=extras["axis"])
    files, series, summary = [], [], []
    for w_v, trace in results.items():
        name = f"step_w{w_v:g}.csv"
        _write_csv(os.path.join(out, name), ["time", "trans_err", "rot_err"],
                   zip(trace.times.tolist(), trace.trans_err.tolist(),
                       trace.rot_err.tolist()))
        files.append(name)
        sub = slice(None, None, 10)  # 100 Hz is plenty for the chart
        series.append((f"w_v={w_v:g}", trace.times[sub].tolist(),
                       (trace.trans_err[sub] + trace.rot_err[sub]).tolist()))
        ss_t, ss_r = trace.steady_state()
        summary.append((w_v, ss_t, ss_r, trace.settling_time()))
    _write_csv(os.path.join(out, "summary.csv"),
               ["w_v", "steady_state_trans", "steady_state_rot", "settling_time"],
               summary)
    write_chart(os.path.join(out, "plot.svg"), series, title="step response",
                xlabel="time [s]", ylabel="tracking error (trans + rot)")
    return files + ["summary.csv", "plot.svg"]


def _run_sweep(config, extras, out):
    curve = run_recall_sweep(config, extras["frequencies"])
    rows = [
        (freq, method, curve.recall[method][i])
        for i, freq in enumerate(curve.frequencies)
        for method in METHODS
    ]
    _write_csv(os.path.join(out, "summary.csv"), ["frequency", "method", "recall"], rows)
    series = [(m, curve.frequencies, curve.recall[m]) for m in METHODS]
    write_chart(os.path.join(out, "plot.svg"), series, title="recall vs stream frequency",
                xlabel="frequency [Hz]", ylabel="recall")
    return ["summary.csv", "plot.svg"]


def _run_closed_loop(config, extras, out):
    files, summary, series = [], [], []
    for seed in extras["seeds"]:
        cfg = _reseed(config, seed)
        for source in ("olt", "localizer"):
            log = run_closed_loop(cfg, estimate_source=source)
            tag = f"{source}_seed{seed}"
            run_name = f"run_{tag}.csv"
            n = cfg.chain.nq
            header = (["time"] + [f"q{i}" for i in range(n)] + [f"dq{i}" for i in range(n)]
                      + [f"tau{i}" for i in range(n)] + ["trans_err", "rot_err", "policy_id"])
            rows = [
                [t, *q, *dq, *tau, te, re, int(pid)]
                for t, q, dq, tau, te, re, pid in zip(
                    log.times.tolist(), log.qs.tolist(), log.dqs.tolist(),
                    log.taus.tolist(), log.trans_err.tolist(), log.rot_err.tolist(),
                    log.policy_ids.tolist(),
                )
            ]
            _write_csv(os.path.join(out, run_name), header, rows)
            files.append(run_name)
            ev_name = f"events_{tag}.csv"
            _write_csv(os.path.join(out, ev_name),
                       ["time", "worker", "event", "frame_seq", "pose"], log.events)
            files.append(ev_name)
            combined = log.trans_err + log.rot_err
            summary.append((seed, source, float(np.median(log.trans_err)),
                            float(np.median(log.rot_err)), float(np.median(combined)),
                            int(log.diverged)))
            if seed == extras["seeds"][0]:
                sub = slice(None, None, 10)
                series.append((source, log.times[sub].tolist(), combined[sub].tolist()))
    _write_csv(os.path.join(out, "summary.csv"),
               ["seed", "source", "median_trans_err", "median_rot_err",
                "median_combined_err", "diverged"], summary)
    write_chart(os.path.join(out, "plot.svg"), series, title="closed-loop tracking error",
                xlabel="time [s]", ylabel="tracking error (trans + rot)")
    return files + ["summary.csv", "plot.svg"]


def _run_bench(config, extras, out):
    model = SerialChain(config.chain)
    x0 = RobotState(config.q0.copy(), np.zeros_like(config.q0))
    cam0 = forward_kinematics(config.chain, config.q0)
    target = geom.compose(cam0, config.T_ref)
    ref = TrackingReference(T_k=geom.compose(geom.inverse(cam0), target),
                            q_k=config.q0.copy(), T_ref=config.T_ref)
    prob = OcpProblem(model=model, weights=config.weights, M=config.horizon,
                      dt=config.ocp_dt, x0=x0, reference=ref)
    sol = solve_ocp(prob)  # warms numba kernels before timing
    rows = []

    t0 = time.perf_counter()
    n_solves = 10
    for _ in range(n_solves):
        sol = solve_ocp(prob, warm_start=sol)
    rows.append(("solve_ocp", n_solves, (time.perf_counter() - t0) / n_solves * 1e6))

    policy = RiccatiPolicy.from_solution(sol)
    xv = x0.as_vector()
    n_pol = 10000
    t0 = time.perf_counter()
    for _ in range(n_pol):
        policy_torque(policy, xv)
    rows.append(("policy_torque", n_pol, (time.perf_counter() - t0) / n_pol * 1e6))

    from .robot import aba

    tau = np.zeros(config.chain.nq)
    aba(config.chain, x0.q, x0.dq, tau)
    n_aba = 10000
    t0 = time.perf_counter()
    for _ in range(n_aba):
        aba(config.chain, x0.q, x0.dq, tau)
    rows.append(("aba", n_aba, (time.perf_counter() - t0) / n_aba * 1e6))

    _write_csv(os.path.join(out, "summary.csv"), ["operation", "calls", "mean_us"], rows)
    return ["summary.csv"]


def _run_wallclock(config, extras, out):
    """Real-thread pipeline demo; timing is OS-dependent, nothing is asserted."""
    from .wallclock import run_wallclock

    duration = min(config.duration, 3.0)
    run = run_wallclock(
        config.pipeline,
        true_pose_fn=config.trajectory.pose_at,
        duration=duration,
        occluded_fn=lambda t: any(a <= t < b for a, b in config.occlusion_windows),
    )
    _write_csv(os.path.join(out, "events.csv"), ["time", "worker", "event", "frame_seq"],
               run.events)
    counts = {}
    for _, worker, event, _ in run.events:
        key = f"{worker}.{event}"
        counts[key] = counts.get(key, 0) + 1
    _write_csv(os.path.join(out, "summary.csv"), ["event", "count"],
               sorted(counts.items()))
    return ["events.csv", "summary.csv"]


def _run(args) -> int:
    out = os.environ.get(OUT_ENV_VAR) or args.out
    if out is None:
        print("error: --out is required (or set " + OUT_ENV_VAR + ")", file=sys.stderr)
        return 1
    try:
        config, extras = parse_config(args.config)
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config = _reseed(config, args.seed)
        extras["seeds"] = [args.seed]
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        print(f"error: output directory not writable: {e}", file=sys.stderr)
        return 1

    runners = {
        "step": _run_step,
        "sweep": _run_sweep,
        "closed-loop": _run_closed_loop,
        "bench": _run_bench,
    }
    try:
        if args.mode == "wallclock":
            files = _run_wallclock(config, extras, out)
        else:
            files = runners[args.experiment](config, extras, out)
    except PoseServoError as e:
        print(f"error: run failed: {e}", file=sys.stderr)
        return 2
    with open(args.config, "rb") as f:
        config_hash = hashlib.sha256(f.read()).hexdigest()
    manifest = {
        "config": os.path.abspath(args.config),
        "config_sha256": config_hash,
        "experiment": args.experiment,
        "mode": args.mode,
        "seed": args.seed,
        "version": __version__,
        "outputs": sorted(files),
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 on usage errors; configuration/usage problems are 1 here
        self.print_usage(sys.stderr)
        raise SystemExit_(1, f"error: {message}")


class SystemExit_(Exception):
    def __init__(self, code, message=""):
        super().__init__(message)
        self.code = code


def main(argv=None) -> int:
    parser = _Parser(prog="poseservo",
                     description="Visual servoing experiment runner.")
    sub = parser.add_subparsers(dest="command")
    runp = sub.add_parser("run", help="execute an experiment from a config file")
    runp.add_argument("--config", required=True, help="experiment config file")
    runp.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    runp.add_argument("--out", default=None,
                      help=f"output directory (or set ${OUT_ENV_VAR})")
    runp.add_argument("--seed", type=int, default=None,
                      help="override estimator seeds and the closed-loop seed list")
    runp.add_argument("--mode", choices=MODES, default="virtual",
                      help="virtual clock (deterministic) or wall-clock demo")
    try:
        args = parser.parse_args(argv)
    except SystemExit_ as e:
        if str(e):
            print(str(e), file=sys.stderr)
        return e.code
    except SystemExit as e:  # --help prints and exits 0
        return 0 if e.code in (0, None) else 1
    if args.command != "run":
        parser.print_usage(sys.stderr)
        print("error: a command is required (try: poseservo run --help)", file=sys.stderr)
        return 1
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
