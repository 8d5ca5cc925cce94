"""Motion quality metrics built around footstep analysis.

A footstep is a maximal run of frames where a heel's horizontal world speed
stays under a tolerance. Sweeping that tolerance gives a step-count curve;
its plateau is the detected step count and the smallest tolerance reaching
95 percent of the curve maximum (v95) measures how cleanly the feet stop.
Step-duration statistics, bone-length error against the skeleton's rest
lengths and a mean-joint-speed stillness figure round out the report.

All speeds are cm/s, all durations seconds.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import _central_diff
from .errors import ContractError, UndefinedResultError


def detect_steps(speed, v_tol, min_frames=2):
    """Maximal half-open frame runs with speed strictly under v_tol.

    Runs shorter than min_frames are discarded.
    """
    speed = np.asarray(speed, dtype=np.float64)
    if speed.ndim != 1:
        raise ContractError("speed must be a 1-D array")
    below = speed < v_tol
    padded = np.concatenate([[False], below, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, ends = edges[0::2], edges[1::2]
    return [(int(a), int(b)) for a, b in zip(starts, ends)
            if b - a >= min_frames]


def horizontal_joint_speed(clip, joint):
    """Horizontal world speed of one joint, cm/s, central differences."""
    if clip.world_root is None:
        raise ContractError("clip has no world_root track; cannot compute "
                            "world joint speeds")
    xz = clip.world_positions()[:, joint][:, (0, 2)]
    if len(xz) < 2:
        raise ContractError("need at least 2 frames for a speed estimate")
    vel = _central_diff(xz) * clip.fps
    return np.linalg.norm(vel, axis=1)


@dataclass
class FootstepReport:
    """Everything the footstep pipeline measures on one clip."""

    fps: float
    foot_names: list
    grid: np.ndarray
    f_est: np.ndarray
    v95: float | None = None
    intervals: dict = field(default_factory=dict)
    mean_duration_s: float | None = None
    std_duration_s: float | None = None
    per_foot_counts: dict = field(default_factory=dict)

    @property
    def step_count(self):
        return sum(len(v) for v in self.intervals.values())


def _foot_indices(clip, foot_joints):
    if foot_joints is None:
        foot_joints = clip.skeleton.joints_matching("heel")
        if not foot_joints:
            raise ContractError(
                "no joint name contains 'heel'; pass foot_joints explicitly")
    return list(foot_joints)


def footstep_curve(clip, foot_joints=None, tol_step=1.0, max_tol=40.0,
                   min_frames=2):
    """Step counts over the tolerance grid {tol_step, 2 tol_step, ...}.

    Returns a FootstepReport with the curve filled in; v95 and the duration
    statistics stay unset. f_est sums detected steps over all feet.
    """
    feet = _foot_indices(clip, foot_joints)
    if tol_step <= 0 or max_tol < tol_step:
        raise ContractError("need 0 < tol_step <= max_tol")
    grid = tol_step * np.arange(1, int(round(max_tol / tol_step)) + 1)
    speeds = [horizontal_joint_speed(clip, j) for j in feet]
    f_est = np.array([sum(len(detect_steps(s, tol, min_frames))
                          for s in speeds) for tol in grid], dtype=np.int64)
    return FootstepReport(fps=clip.fps,
                          foot_names=[clip.skeleton.names[j] for j in feet],
                          grid=grid, f_est=f_est)


def v95_tolerance(grid, f_est):
    """Smallest grid tolerance whose count reaches 95 percent of the curve
    maximum."""
    f_est = np.asarray(f_est)
    if f_est.max(initial=0) <= 0:
        raise UndefinedResultError(
            "no steps detected at any tolerance; v95 is undefined")
    reach = np.flatnonzero(f_est >= 0.95 * f_est.max())
    return float(np.asarray(grid)[reach[0]])


def step_duration_stats(intervals, fps):
    """(mean, population std) of step durations in seconds.

    No intervals is an error; a single interval has a mean but no spread,
    reported as std None.
    """
    if not intervals:
        raise UndefinedResultError(
            "no step intervals; duration statistics are undefined")
    durations = np.array([(b - a) / fps for a, b in intervals])
    mean = float(durations.mean())
    if len(durations) < 2:
        return mean, None
    return mean, float(durations.std())


def footstep_report(clip, foot_joints=None, tol_step=1.0, max_tol=40.0,
                    min_frames=2):
    """Full pipeline: curve, v95, per-foot intervals at v95, durations."""
    feet = _foot_indices(clip, foot_joints)
    report = footstep_curve(clip, feet, tol_step, max_tol, min_frames)
    report.v95 = v95_tolerance(report.grid, report.f_est)
    pooled = []
    for j, name in zip(feet, report.foot_names):
        speed = horizontal_joint_speed(clip, j)
        runs = detect_steps(speed, report.v95, min_frames)
        report.intervals[name] = runs
        report.per_foot_counts[name] = len(runs)
        pooled += runs
    mean, std = step_duration_stats(pooled, clip.fps)
    report.mean_duration_s = mean
    report.std_duration_s = std
    return report


def bone_length_rmse(clip):
    """RMS deviation of every bone's frame-wise length from its rest
    length, over all non-root joints and frames. cm."""
    skel = clip.skeleton
    parents = np.asarray(skel.parents)
    children = np.flatnonzero(parents >= 0)
    if children.size == 0:
        raise ContractError("skeleton has no bones")
    pos = clip.joint_positions()
    seen = np.linalg.norm(pos[:, children] - pos[:, parents[children]],
                          axis=2)
    rest = skel.bone_lengths()[children]
    return float(np.sqrt(np.mean((seen - rest[None, :]) ** 2)))


def stillness_metric(clip):
    """Mean world joint speed over all joints and frames, cm/s."""
    if clip.world_root is None:
        raise ContractError("clip has no world_root track; cannot compute "
                            "world joint speeds")
    pos = clip.world_positions()
    if len(pos) < 2:
        raise ContractError("need at least 2 frames for a speed estimate")
    vel = _central_diff(pos) * clip.fps
    return float(np.mean(np.linalg.norm(vel, axis=2)))


# ---------------------------------------------------------------------------
# rendering

def report_text(report):
    """Canonical key-value rendering, one tab-separated pair per line."""
    lines = [("fps", "%g" % report.fps),
             ("feet", ",".join(report.foot_names)),
             ("grid_max", "%g" % report.grid[-1]),
             ("f_est_max", "%d" % report.f_est.max(initial=0))]
    if report.v95 is not None:
        lines.append(("v95", "%g" % report.v95))
        lines.append(("step_count", "%d" % report.step_count))
        lines.append(("mean_duration_s", "%.6f" % report.mean_duration_s))
        lines.append(("std_duration_s",
                      "undefined" if report.std_duration_s is None
                      else "%.6f" % report.std_duration_s))
        for name in report.foot_names:
            lines.append(("steps_" + name,
                          "%d" % report.per_foot_counts[name]))
    return "".join("%s\t%s\n" % kv for kv in lines)


def curve_csv(report):
    lines = ["v_tol,f_est"]
    for tol, count in zip(report.grid, report.f_est):
        lines.append("%g,%d" % (tol, count))
    return "\n".join(lines) + "\n"


def curve_svg(report, width=640, height=360):
    """The tolerance sweep as a standalone SVG line chart."""
    pad = 50
    xs = report.grid
    ys = report.f_est
    x_max = float(xs[-1])
    y_max = max(1, int(ys.max(initial=0)))
    span_x = width - 2 * pad
    span_y = height - 2 * pad

    def sx(x):
        return pad + span_x * x / x_max

    def sy(y):
        return height - pad - span_y * y / y_max

    points = " ".join("%.2f,%.2f" % (sx(x), sy(y)) for x, y in zip(xs, ys))
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">'
        % (width, height),
        '<rect width="100%" height="100%" fill="white"/>',
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
        % (pad, height - pad, width - pad, height - pad),
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
        % (pad, pad, pad, height - pad),
        '<polyline points="%s" fill="none" stroke="steelblue" '
        'stroke-width="2"/>' % points,
    ]
    if report.v95 is not None:
        parts.append(
            '<line x1="%.2f" y1="%d" x2="%.2f" y2="%d" stroke="firebrick" '
            'stroke-dasharray="4 3"/>'
            % (sx(report.v95), pad, sx(report.v95), height - pad))
    parts.append('<text x="%d" y="%d" font-size="12">tolerance (cm/s)'
                 '</text>' % (width // 2 - 40, height - 12))
    parts.append('<text x="12" y="%d" font-size="12" '
                 'transform="rotate(-90 16 %d)">steps</text>'
                 % (height // 2, height // 2))
    parts.append('<text x="%d" y="%d" font-size="11">0</text>'
                 % (pad - 12, height - pad + 14))
    parts.append('<text x="%d" y="%d" font-size="11">%g</text>'
                 % (width - pad - 10, height - pad + 14, x_max))
    parts.append('<text x="%d" y="%d" font-size="11">%d</text>'
                 % (pad - 30, pad + 4, y_max))
    parts.append('</svg>')
    return "\n".join(parts) + "\n"
