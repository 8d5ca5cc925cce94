"""Motion clips, the pose/control representation, and dataset transforms.

Conventions, used everywhere:
  - y is up; units are centimetres and radians; fps stored explicitly.
  - heading theta is the rotation about y with forward = (sin th, cos th)
    and rightward = (cos th, -sin th) in the horizontal (x, z) plane.
  - world_root rows are (x, z, theta); poses are root-local joint positions
    flattened (x0, y0, z0, x1, ...) in the floor-projected, heading-aligned
    frame of the current frame.
  - a control frame (fwd, lat, rot) is the root delta from frame t-1 to t,
    expressed in frame t-1's root coordinates, so integration is a left fold.
"""

import numpy as np
from scipy import ndimage

from .errors import ContractError, DegenerateDataError, DimensionError


class Skeleton:
    """Joint names, parents (root = -1, topologically ordered), rest offsets
    in cm, and a left/right mirror involution."""

    def __init__(self, names, parents, offsets, mirror_map=None):
        self.names = list(names)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.float64)
        j = len(self.names)
        if self.parents.shape != (j,) or self.offsets.shape != (j, 3):
            raise DimensionError("skeleton field shapes inconsistent")
        for i, p in enumerate(self.parents):
            if not (-1 <= p < i):
                raise ContractError(
                    "parent %d of joint %d breaks topological order" % (p, i))
        if mirror_map is None:
            mirror_map = np.arange(j)
        self.mirror_map = np.asarray(mirror_map, dtype=np.int64)
        if self.mirror_map.shape != (j,) or \
                np.any(self.mirror_map[self.mirror_map] != np.arange(j)):
            raise ContractError("mirror table is not an involution")

    @property
    def num_joints(self):
        return len(self.names)

    def bone_lengths(self):
        """Rest length of the bone into each joint; 0 at roots."""
        lengths = np.linalg.norm(self.offsets, axis=1)
        lengths[np.asarray(self.parents) < 0] = 0.0
        return lengths

    def mirror_pairs(self):
        """(left-ish, right-ish) index pairs, each pair once, i < j."""
        return [(i, int(m)) for i, m in enumerate(self.mirror_map) if i < m]

    def joints_matching(self, fragment):
        frag = fragment.lower()
        return [i for i, n in enumerate(self.names) if frag in n.lower()]


class MotionClip:
    """fps + skeleton + root-local poses [T, D], with optional control
    [T, C] and world-root track [T, 3]."""

    def __init__(self, fps, skeleton, poses, control=None, world_root=None):
        self.fps = float(fps)
        self.skeleton = skeleton
        self.poses = np.asarray(poses, dtype=np.float64)
        self.control = None if control is None \
            else np.asarray(control, dtype=np.float64)
        self.world_root = None if world_root is None \
            else np.asarray(world_root, dtype=np.float64)
        t = self.poses.shape[0]
        if self.poses.ndim != 2 or \
                self.poses.shape[1] != 3 * skeleton.num_joints:
            raise DimensionError("poses must be [T, 3*J]")
        if self.control is not None and self.control.shape[0] != t:
            raise DimensionError("control length differs from poses")
        if self.world_root is not None and self.world_root.shape != (t, 3):
            raise DimensionError("world_root must be [T, 3]")

    @property
    def num_frames(self):
        return self.poses.shape[0]

    @property
    def pose_dim(self):
        return self.poses.shape[1]

    def joint_positions(self):
        """Root-local poses as [T, J, 3]."""
        return self.poses.reshape(self.num_frames, -1, 3)

    def world_positions(self):
        if self.world_root is None:
            raise ContractError("clip has no world_root track")
        return local_to_world(self.poses, self.world_root)


# ---------------------------------------------------------------------------
# heading / root-frame geometry

def heading_vectors(theta):
    """(forward, right) unit vectors in the (x, z) plane, vectorised."""
    s, c = np.sin(theta), np.cos(theta)
    forward = np.stack([s, c], axis=-1)
    right = np.stack([c, -s], axis=-1)
    return forward, right


def step_root(root, control_frame):
    """Advance (x, z, theta) by one control delta."""
    x, z, th = root
    fwd, lat, rot = control_frame
    f, r = heading_vectors(th)
    return np.array([x + fwd * f[0] + lat * r[0],
                     z + fwd * f[1] + lat * r[1],
                     th + rot])


def integrate_control(root0, control):
    """Left-fold of step_root; control[0] is ignored by convention (there is
    no delta into the first frame)."""
    out = np.empty((len(control), 3))
    out[0] = root0
    for t in range(1, len(control)):
        out[t] = step_root(out[t - 1], control[t])
    return out


def control_from_root(world_root):
    """Exact inverse of integrate_control; control[0] = 0."""
    world_root = np.asarray(world_root, dtype=np.float64)
    t = world_root.shape[0]
    out = np.zeros((t, 3))
    if t < 2:
        return out
    delta = world_root[1:, :2] - world_root[:-1, :2]
    f, r = heading_vectors(world_root[:-1, 2])
    out[1:, 0] = np.einsum("ij,ij->i", delta, f)
    out[1:, 1] = np.einsum("ij,ij->i", delta, r)
    out[1:, 2] = world_root[1:, 2] - world_root[:-1, 2]
    return out


def world_to_local(positions, world_root):
    """World [T, J, 3] to root-local flattened poses [T, 3J]."""
    positions = np.asarray(positions, dtype=np.float64)
    t, j, _ = positions.shape
    d = positions.copy()
    d[:, :, 0] -= world_root[:, None, 0]
    d[:, :, 2] -= world_root[:, None, 1]
    f, r = heading_vectors(world_root[:, 2])
    local = np.empty_like(d)
    local[:, :, 0] = d[:, :, 0] * r[:, None, 0] + d[:, :, 2] * r[:, None, 1]
    local[:, :, 1] = d[:, :, 1]
    local[:, :, 2] = d[:, :, 0] * f[:, None, 0] + d[:, :, 2] * f[:, None, 1]
    return local.reshape(t, 3 * j)


def local_to_world(poses, world_root):
    """Inverse of world_to_local; returns [T, J, 3]."""
    poses = np.asarray(poses, dtype=np.float64)
    t = poses.shape[0]
    local = poses.reshape(t, -1, 3)
    f, r = heading_vectors(world_root[:, 2])
    out = np.empty_like(local)
    out[:, :, 0] = local[:, :, 0] * r[:, None, 0] \
        + local[:, :, 2] * f[:, None, 0] + world_root[:, None, 0]
    out[:, :, 1] = local[:, :, 1]
    out[:, :, 2] = local[:, :, 0] * r[:, None, 1] \
        + local[:, :, 2] * f[:, None, 1] + world_root[:, None, 1]
    return out


# ---------------------------------------------------------------------------
# root extraction

def gaussian_smooth(x, sigma, truncate=4.0):
    """1-D Gaussian filter, kernel truncated at `truncate` sigma, edges
    renormalised over the in-range kernel mass."""
    x = np.asarray(x, dtype=np.float64)
    if sigma <= 0.0:
        return x.copy()
    radius = int(np.ceil(truncate * sigma))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    num = ndimage.correlate1d(x, k, mode="constant", cval=0.0)
    den = ndimage.correlate1d(np.ones_like(x), k, mode="constant", cval=0.0)
    return num / den


def _central_diff(x):
    """Per-frame derivative, one-sided at the ends."""
    v = np.empty_like(x)
    v[1:-1] = 0.5 * (x[2:] - x[:-2])
    v[0] = x[1] - x[0]
    v[-1] = x[-1] - x[-2]
    return v


def extract_root_and_control(positions, fps, sigma_frames=10.0, hip_index=0,
                             skeleton=None, slow_speed=1.0):
    """Build (world_root, control, root-local poses) from world positions.

    Root path is the Gaussian-filtered floor projection of the hip. Heading
    follows the filtered hip velocity; where speed drops under `slow_speed`
    cm/s it falls back to the body transverse axis (from the skeleton's
    mirror pairs) or, failing that, holds the nearest moving-frame heading.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[0] < 2:
        raise ContractError("need [T>=2, J, 3] world positions")
    t = positions.shape[0]
    root_x = gaussian_smooth(positions[:, hip_index, 0], sigma_frames)
    root_z = gaussian_smooth(positions[:, hip_index, 2], sigma_frames)

    vx = _central_diff(root_x) * fps
    vz = _central_diff(root_z) * fps
    speed = np.hypot(vx, vz)
    moving = speed >= slow_speed

    theta_raw = np.zeros(t)
    theta_raw[moving] = np.arctan2(vx[moving], vz[moving])

    slow = ~moving
    if np.any(slow):
        pairs = skeleton.mirror_pairs() if skeleton is not None else []
        if pairs:
            # transverse axis: mean left-to-right across mirror pairs
            axis = np.zeros((t, 2))
            for a, b in pairs:
                if "right" in skeleton.names[a].lower():
                    a, b = b, a
                axis[:, 0] += positions[:, b, 0] - positions[:, a, 0]
                axis[:, 1] += positions[:, b, 2] - positions[:, a, 2]
            theta_raw[slow] = np.arctan2(-axis[slow, 1], axis[slow, 0])
        elif np.any(moving):
            # hold the most recent moving-frame heading, backfilled at the
            # start from the first moving frame
            last = np.maximum.accumulate(np.where(moving, np.arange(t), -1))
            fill = np.where(last >= 0, last, np.flatnonzero(moving)[0])
            theta_raw[slow] = theta_raw[fill[slow]]
        # fully stationary clip with no mirror info keeps heading 0

    theta = np.unwrap(theta_raw)
    world_root = np.stack([root_x, root_z, theta], axis=1)
    control = control_from_root(world_root)
    poses = world_to_local(positions, world_root)
    return world_root, control, poses


# ---------------------------------------------------------------------------
# dataset transforms

def downsample(clip, target_fps):
    if target_fps > clip.fps:
        raise ContractError("cannot downsample %g fps to %g" %
                            (clip.fps, target_fps))
    ratio = clip.fps / target_fps
    if abs(ratio - round(ratio)) < 1e-9:
        idx = np.arange(0, clip.num_frames, int(round(ratio)))
        poses = clip.poses[idx]
        root = None if clip.world_root is None else clip.world_root[idx]
    else:
        # non-integer ratio: linear interpolation on a uniform grid
        t_new = int(np.floor((clip.num_frames - 1) / ratio)) + 1
        grid = np.arange(t_new) * ratio
        base = np.arange(clip.num_frames)
        poses = np.stack([np.interp(grid, base, clip.poses[:, d])
                          for d in range(clip.pose_dim)], axis=1)
        root = None
        if clip.world_root is not None:
            th = np.unwrap(clip.world_root[:, 2])
            root = np.stack([np.interp(grid, base, clip.world_root[:, 0]),
                             np.interp(grid, base, clip.world_root[:, 1]),
                             np.interp(grid, base, th)], axis=1)
    control = None
    if clip.control is not None:
        if root is None:
            raise ContractError(
                "cannot re-derive control without a world_root track")
        control = control_from_root(root)
    return MotionClip(target_fps, clip.skeleton, poses, control, root)


def window_slices(total, window, overlap):
    """[start, end) windows at stride window*(1-overlap); trailing partial
    windows are dropped."""
    if window > total:
        return []
    stride = max(1, int(round(window * (1.0 - overlap))))
    return [(s, s + window) for s in range(0, total - window + 1, stride)]


def mirror(clip):
    """Lateral flip: negate local x, swap mirror-paired joints, negate the
    control lateral/rotation deltas and the world-root x/theta."""
    skel = clip.skeleton
    if np.all(skel.mirror_map == np.arange(skel.num_joints)) \
            and skel.num_joints > 1:
        raise ContractError("skeleton has no mirror table")
    local = clip.joint_positions()[:, skel.mirror_map, :].copy()
    local[:, :, 0] = -local[:, :, 0]
    poses = local.reshape(clip.num_frames, -1)
    control = None
    if clip.control is not None:
        control = clip.control.copy()
        control[:, 1] = -control[:, 1]
        control[:, 2] = -control[:, 2]
    root = None
    if clip.world_root is not None:
        root = clip.world_root.copy()
        root[:, 0] = -root[:, 0]
        root[:, 2] = -root[:, 2]
    return MotionClip(clip.fps, skel, poses, control, root)


def time_reverse(clip):
    """Reverse frames; control is re-derived from the reversed root path so
    the integration identity keeps holding exactly."""
    poses = clip.poses[::-1].copy()
    root = None if clip.world_root is None else clip.world_root[::-1].copy()
    control = None
    if clip.control is not None:
        if root is None:
            raise ContractError(
                "cannot re-derive control without a world_root track")
        control = control_from_root(root)
    return MotionClip(clip.fps, clip.skeleton, poses, control, root)


def augment(clip):
    """Original, mirrored, reversed, mirrored+reversed."""
    m = mirror(clip)
    return [clip, m, time_reverse(clip), time_reverse(m)]


# ---------------------------------------------------------------------------
# standardisation

class Scaler:
    """Per-dimension mean/std for poses and control, fitted on training
    frames only."""

    def __init__(self, pose_mean, pose_std, control_mean, control_std):
        self.pose_mean = np.asarray(pose_mean, dtype=np.float64)
        self.pose_std = np.asarray(pose_std, dtype=np.float64)
        self.control_mean = np.asarray(control_mean, dtype=np.float64)
        self.control_std = np.asarray(control_std, dtype=np.float64)
        if np.any(self.pose_std <= 0) or np.any(self.control_std <= 0):
            raise DegenerateDataError("scaler std must be positive")

    @staticmethod
    def identity(pose_dim, control_dim):
        return Scaler(np.zeros(pose_dim), np.ones(pose_dim),
                      np.zeros(control_dim), np.ones(control_dim))

    def standardize_poses(self, poses):
        return (poses - self.pose_mean) / self.pose_std

    def unstandardize_poses(self, poses):
        return poses * self.pose_std + self.pose_mean

    def standardize_control(self, control):
        return (control - self.control_mean) / self.control_std

    def unstandardize_control(self, control):
        return control * self.control_std + self.control_mean

    def mean_pose(self):
        return self.pose_mean.copy()


def fit_scaler(clips):
    poses = np.concatenate([c.poses for c in clips], axis=0)
    controls = [c.control for c in clips if c.control is not None]
    if not controls:
        raise DegenerateDataError("no control tracks to fit a scaler on")
    control = np.concatenate(controls, axis=0)
    p_std = poses.std(axis=0)
    c_std = control.std(axis=0)
    if np.any(p_std == 0):
        raise DegenerateDataError(
            "zero-variance pose dims %s" %
            np.flatnonzero(p_std == 0).tolist())
    if np.any(c_std == 0):
        raise DegenerateDataError(
            "zero-variance control dims %s" %
            np.flatnonzero(c_std == 0).tolist())
    return Scaler(poses.mean(axis=0), p_std, control.mean(axis=0), c_std)


def apply_scaler(clip, scaler, direction="standardize"):
    """Standardize or invert a clip's poses and control; world_root is
    untouched (it lives in world units)."""
    if direction == "standardize":
        poses = scaler.standardize_poses(clip.poses)
        control = None if clip.control is None \
            else scaler.standardize_control(clip.control)
    elif direction == "unstandardize":
        poses = scaler.unstandardize_poses(clip.poses)
        control = None if clip.control is None \
            else scaler.unstandardize_control(clip.control)
    else:
        raise ContractError("direction must be standardize|unstandardize")
    return MotionClip(clip.fps, clip.skeleton, poses, control,
                      None if clip.world_root is None
                      else clip.world_root.copy())
