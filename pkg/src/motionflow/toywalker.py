"""Procedural 7-joint biped with analytically known gait.

The walker follows a piecewise (speed, turn-rate) profile. Heels alternate
stance and swing: a planted heel keeps exactly the same world position
(height 0) for every stance frame, and swings follow a smoothstep
horizontal profile with a sinusoidal height bump, so touchdown and liftoff
are soft. Stride grows linearly with speed (stride = stride_factor *
speed), which makes the total plant rate speed/stride = 1/stride_factor
per second while walking. When walking resumes after a standstill the
staler foot is lifted immediately, which keeps the legs from overextending
while the root pulls away. Ground-truth stance intervals per foot come
back as metadata.

Legs are solved with exact two-link geometry from the hip joint, so every
bone length matches the rest skeleton exactly; only chest/head/hip/knee
positions get the (optional) Gaussian jitter, never the heels.
"""

import numpy as np

from .data import (MotionClip, Skeleton, control_from_root, heading_vectors,
                   world_to_local)
from .errors import DegenerateDataError

HIP, CHEST, HEAD, L_KNEE, L_HEEL, R_KNEE, R_HEEL = range(7)


class WalkerSpec:
    """Gait profile plus body geometry for the toy walker.

    segments: list of (duration_s, speed_cm_s, turn_rad_s). fps defaults to
    20. Speeds above `max_speed` would overextend the legs and are rejected.
    """

    def __init__(self, segments, fps=20.0, stride_factor=0.5,
                 hip_height=90.0, hip_width=20.0, thigh=50.0, shin=50.0,
                 chest_len=25.0, head_len=20.0, bob_amp=2.0, sway_amp=1.5,
                 swing_height=6.0, lean_per_speed=0.0006, jitter=0.25,
                 still_speed=1.0, max_speed=105.0, accel=200.0,
                 turn_accel=5.0):
        self.segments = [(float(d), float(v), float(w)) for d, v, w in segments]
        self.fps = float(fps)
        self.stride_factor = stride_factor
        self.hip_height = hip_height
        self.hip_width = hip_width
        self.thigh = thigh
        self.shin = shin
        self.chest_len = chest_len
        self.head_len = head_len
        self.bob_amp = bob_amp
        self.sway_amp = sway_amp
        self.swing_height = swing_height
        self.lean_per_speed = lean_per_speed
        self.jitter = jitter
        self.still_speed = still_speed
        self.max_speed = max_speed
        self.accel = accel
        self.turn_accel = turn_accel

    @property
    def duration_s(self):
        return sum(d for d, _, _ in self.segments)


def default_train_spec(duration_s=60.0):
    """Walk/stand/turn mix used for desk-scale training data."""
    block = [
        (4.0, 100.0, 0.0),
        (3.0, 0.0, 0.0),
        (4.0, 80.0, 0.5),
        (4.0, 100.0, -0.4),
        (3.0, 0.0, 0.0),
        (4.0, 60.0, 0.0),
        (4.0, 90.0, 0.3),
    ]
    reps = max(1, int(round(duration_s / sum(d for d, _, _ in block))))
    return WalkerSpec(block * reps)


def walker_skeleton(spec=None):
    spec = spec or WalkerSpec([(1.0, 0.0, 0.0)])
    names = ["hip", "chest", "head", "left_knee", "left_heel",
             "right_knee", "right_heel"]
    parents = [-1, HIP, CHEST, HIP, L_KNEE, HIP, R_KNEE]
    mirror_map = [HIP, CHEST, HEAD, R_KNEE, R_HEEL, L_KNEE, L_HEEL]
    hip = np.array([0.0, spec.hip_height, 0.0])
    offsets = np.zeros((7, 3))
    offsets[CHEST] = [0.0, spec.chest_len, 0.0]
    offsets[HEAD] = [0.0, spec.head_len, 0.0]
    for knee, heel, side in ((L_KNEE, L_HEEL, -1.0), (R_KNEE, R_HEEL, 1.0)):
        heel_pos = np.array([side * spec.hip_width / 2.0, 0.0, 0.0])
        knee_pos = _solve_knee(hip, heel_pos, spec.thigh, spec.shin,
                               np.array([0.0, 1.0]))
        offsets[knee] = knee_pos - hip
        offsets[heel] = heel_pos - knee_pos
    return Skeleton(names, parents, offsets, mirror_map)


def _solve_knee(hip, heel, thigh, shin, forward_xz):
    """Exact two-link solution; the knee bends toward `forward_xz`."""
    d_vec = heel - hip
    d = np.linalg.norm(d_vec)
    if d >= 0.998 * (thigh + shin):
        raise DegenerateDataError(
            "leg overextended (reach %.1f of %.1f cm); lower the profile "
            "speed" % (d, thigh + shin))
    u = d_vec / d
    along = (thigh ** 2 - shin ** 2 + d ** 2) / (2.0 * d)
    lift = np.sqrt(max(thigh ** 2 - along ** 2, 0.0))
    fwd3 = np.array([forward_xz[0], 0.0, forward_xz[1]])
    perp = fwd3 - np.dot(fwd3, u) * u
    norm = np.linalg.norm(perp)
    if norm < 1e-9:
        perp = np.array([0.0, 1.0, 0.0]) - u[1] * u
        norm = np.linalg.norm(perp)
    return hip + along * u + lift * perp / norm


def _smoothstep(u):
    # zero end slopes, small lag behind the moving root during swing
    return u * u * (3.0 - 2.0 * u)


class _Foot:
    """Stance/swing state machine for one heel."""

    def __init__(self, side, window_lo, spec, root0, theta0):
        self.side = side  # -1 left, +1 right
        self.window_lo = window_lo  # stance phase window [lo, lo+0.5)
        self.spec = spec
        _, r = heading_vectors(theta0)
        ground = root0 + r * side * spec.hip_width / 2.0
        self.plant = np.array([ground[0], 0.0, ground[1]])
        self.swing = None  # (t_lift, t_land, p0, p1)
        self.intervals = []
        self._stance_start = 0

    def in_window(self, phase):
        return (phase - self.window_lo) % 1.0 < 0.5

    def begin_swing(self, t, root_xy, theta):
        n = max(2, int(round(self.spec.stride_factor * self.spec.fps)))
        self.intervals.append((self._stance_start, t))
        self.swing = (t, t + n, self.plant.copy(),
                      self._target(t + n, root_xy, theta))

    def position(self, t, phase_prev, phase, moving, root_xy, theta):
        spec = self.spec
        if self.swing is None:
            if moving and self.in_window(phase_prev) \
                    and not self.in_window(phase):
                self.begin_swing(t, root_xy, theta)
            else:
                return self.plant.copy()
        t_lift, t_land, p0, p1 = self.swing
        if t >= t_land:
            self.plant = p1
            self.swing = None
            self._stance_start = t
            return self.plant.copy()
        u = (t - t_lift + 1.0) / (t_land - t_lift)
        horiz = p0 + (p1 - p0) * _smoothstep(u)
        horiz[1] = spec.swing_height * np.sin(np.pi * u)
        return horiz

    def _target(self, t_land, root_xy, theta):
        spec = self.spec
        idx = min(t_land, len(theta) - 1)
        f, r = heading_vectors(theta[idx])
        speed = 0.0
        if idx + 1 < len(theta):
            speed = np.hypot(*(root_xy[idx + 1] - root_xy[idx])) * spec.fps
        lead = spec.stride_factor * speed / 2.0
        ground = root_xy[idx] + f * lead + r * self.side * spec.hip_width / 2.0
        return np.array([ground[0], 0.0, ground[1]])

    def finish(self, t_end):
        if self.swing is None:
            self.intervals.append((self._stance_start, t_end))


def generate_toy_walker(spec, seed=0):
    """Returns (MotionClip, metadata dict).

    Metadata: per-foot stance intervals [start, end) in frames, countable
    step totals (intervals of at least 2 frames), and the generator config.
    """
    rng = np.random.default_rng(seed)
    fps = spec.fps
    dt = 1.0 / fps

    frames = []
    for dur, v, w in spec.segments:
        if v > spec.max_speed:
            raise DegenerateDataError(
                "profile speed %.0f exceeds safe maximum %.0f cm/s"
                % (v, spec.max_speed))
        frames += [(v, w)] * int(round(dur * fps))
    t_total = len(frames)
    # rate-limit the targets so transitions stay within leg reach
    v = np.zeros(t_total)
    w = np.zeros(t_total)
    for t in range(1, t_total):
        tv, tw = frames[t]
        v[t] = np.clip(tv, v[t - 1] - spec.accel * dt,
                       v[t - 1] + spec.accel * dt)
        w[t] = np.clip(tw, w[t - 1] - spec.turn_accel * dt,
                       w[t - 1] + spec.turn_accel * dt)

    # analytic root path; deltas into frame t use frame t-1's heading
    theta = np.zeros(t_total)
    root_xy = np.zeros((t_total, 2))
    for t in range(1, t_total):
        f, _ = heading_vectors(theta[t - 1])
        root_xy[t] = root_xy[t - 1] + v[t] * dt * f
        theta[t] = theta[t - 1] + w[t] * dt

    moving = v >= spec.still_speed
    rate = dt / (2.0 * spec.stride_factor)
    feet = {"left": _Foot(-1.0, 0.0, spec, root_xy[0], theta[0]),
            "right": _Foot(1.0, 0.5, spec, root_xy[0], theta[0])}
    heel_tracks = {k: np.empty((t_total, 3)) for k in feet}
    for name, foot in feet.items():
        heel_tracks[name][0] = foot.plant

    phase = np.empty(t_total)
    phase[0] = 0.25  # mid left-stance; both feet start planted
    was_moving = False
    for t in range(1, t_total):
        phase[t] = phase[t - 1] + (rate if moving[t] else 0.0)
        if moving[t] and not was_moving:
            planted = [f for f in feet.values() if f.swing is None]
            if len(planted) == 2:
                # catch-up step: the staler foot goes first
                staler = min(planted, key=lambda f: (f._stance_start, f.side))
                phase[t] = staler.window_lo + 0.5
                staler.begin_swing(t, root_xy, theta)
        was_moving = moving[t]
        for name, foot in feet.items():
            heel_tracks[name][t] = foot.position(
                t, phase[t - 1], phase[t], moving[t], root_xy, theta)
    for foot in feet.values():
        foot.finish(t_total)

    positions = np.zeros((t_total, 7, 3))
    fwd, right = heading_vectors(theta)
    bob = spec.bob_amp * 0.5 * (1.0 - np.cos(4.0 * np.pi * phase))
    sway = spec.sway_amp * np.sin(2.0 * np.pi * phase)
    hip = np.empty((t_total, 3))
    hip[:, 0] = root_xy[:, 0] + sway * right[:, 0]
    hip[:, 1] = spec.hip_height - bob
    hip[:, 2] = root_xy[:, 1] + sway * right[:, 1]

    lean = spec.lean_per_speed * v  # pitch about the lateral axis, radians
    spine = np.stack([np.sin(lean) * fwd[:, 0], np.cos(lean),
                      np.sin(lean) * fwd[:, 1]], axis=1)
    positions[:, HIP] = hip
    positions[:, CHEST] = hip + spec.chest_len * spine
    positions[:, HEAD] = positions[:, CHEST] + spec.head_len * spine
    positions[:, L_HEEL] = heel_tracks["left"]
    positions[:, R_HEEL] = heel_tracks["right"]
    for t in range(t_total):
        positions[t, L_KNEE] = _solve_knee(
            positions[t, HIP], positions[t, L_HEEL], spec.thigh, spec.shin,
            fwd[t])
        positions[t, R_KNEE] = _solve_knee(
            positions[t, HIP], positions[t, R_HEEL], spec.thigh, spec.shin,
            fwd[t])

    if spec.jitter > 0:
        for j in (HIP, CHEST, HEAD, L_KNEE, R_KNEE):
            positions[:, j] += rng.normal(0.0, spec.jitter, (t_total, 3))

    world_root = np.stack([root_xy[:, 0], root_xy[:, 1], theta], axis=1)
    poses = world_to_local(positions, world_root)
    control = control_from_root(world_root)
    skel = walker_skeleton(spec)
    clip = MotionClip(fps, skel, poses, control, world_root)

    # step_count: landing-initiated stances of at least 2 frames (the
    # initial plants at frame 0 are not steps). detectable_steps: every
    # stance of at least 2 frames, which is what a stillness detector on
    # the rendered motion can see.
    meta = {"stance_intervals": {k: f.intervals for k, f in feet.items()},
            "step_count": sum(
                sum(1 for a, b in f.intervals if b - a >= 2 and a > 0)
                for f in feet.values()),
            "detectable_steps": sum(
                sum(1 for a, b in f.intervals if b - a >= 2)
                for f in feet.values()),
            "stance_durations_s": [
                (b - a) / fps for f in feet.values()
                for a, b in f.intervals if b - a >= 2 and a > 0],
            "fps": fps, "seed": seed, "duration_s": spec.duration_s}
    return clip, meta
