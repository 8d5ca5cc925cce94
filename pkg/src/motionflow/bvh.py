"""Minimal BVH reader covering the common mocap subset.

Parses HIERARCHY (ROOT/JOINT/End Site, OFFSET, CHANNELS) and MOTION into
joint metadata plus a frames-by-channels value table. Rotations are Euler
angles in degrees, applied in the order the CHANNELS line lists them; any
joint may carry translation channels, though usually only the root does.
End Sites contribute nothing and are skipped. All errors raise ParseError
tagged with the 1-based source line.
"""

import numpy as np

from .data import Skeleton
from .errors import ParseError

_ROT = {"Xrotation": 0, "Yrotation": 1, "Zrotation": 2}
_POS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


class BvhJoint:
    __slots__ = ("name", "parent", "offset", "channels", "channel_start")

    def __init__(self, name, parent, offset, channels, channel_start):
        self.name = name
        self.parent = parent
        self.offset = offset
        self.channels = channels
        self.channel_start = channel_start


class BvhFile:
    """Parsed hierarchy and raw channel values, frame_time in seconds."""

    def __init__(self, joints, frame_time, values):
        self.joints = joints
        self.frame_time = frame_time
        self.values = values

    @property
    def fps(self):
        return 1.0 / self.frame_time

    @property
    def num_frames(self):
        return self.values.shape[0]


class _Tokens:
    def __init__(self, text):
        self.items = []
        for ln, line in enumerate(text.splitlines(), 1):
            spaced = line.replace("{", " { ").replace("}", " } ")
            for tok in spaced.split():
                self.items.append((tok, ln))
        self.pos = 0
        self.last_line = self.items[-1][1] if self.items else 1

    def peek(self):
        if self.pos < len(self.items):
            return self.items[self.pos]
        return None, self.last_line

    def take(self, expect=None):
        tok, line = self.peek()
        if tok is None:
            raise ParseError("unexpected end of file (wanted %s)"
                             % (expect or "more input"), line)
        if expect is not None and tok != expect:
            raise ParseError("expected '%s', got '%s'" % (expect, tok), line)
        self.pos += 1
        return tok, line

    def take_float(self):
        tok, line = self.take(None)
        try:
            return float(tok), line
        except ValueError:
            raise ParseError("expected a number, got '%s'" % tok, line)

    def take_int(self):
        val, line = self.take_float()
        if val != int(val):
            raise ParseError("expected an integer, got %r" % val, line)
        return int(val), line


def parse_bvh(text):
    toks = _Tokens(text)
    toks.take("HIERARCHY")
    toks.take("ROOT")
    joints = []
    _parse_joint(toks, joints, parent=-1)

    toks.take("MOTION")
    toks.take("Frames:")
    declared, _ = toks.take_int()
    toks.take("Frame")
    toks.take("Time:")
    frame_time, ft_line = toks.take_float()
    if frame_time <= 0:
        raise ParseError("frame time must be positive", ft_line)

    width = sum(len(j.channels) for j in joints)
    rows = _frame_rows(toks, width)
    if len(rows) != declared:
        raise ParseError("declared %d frames but found %d"
                         % (declared, len(rows)), toks.last_line)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return BvhFile(joints, frame_time, values)


def _parse_joint(toks, joints, parent):
    name, line = toks.take(None)
    if name in ("{", "}"):
        raise ParseError("missing joint name", line)
    index = len(joints)
    toks.take("{")
    toks.take("OFFSET")
    off = np.array([toks.take_float()[0] for _ in range(3)])
    toks.take("CHANNELS")
    count, cline = toks.take_int()
    channels = []
    for _ in range(count):
        ch, chl = toks.take(None)
        if ch not in _ROT and ch not in _POS:
            raise ParseError("unknown channel '%s'" % ch, chl)
        channels.append(ch)
    start = sum(len(j.channels) for j in joints)
    joints.append(BvhJoint(name, parent, off, channels, start))

    while True:
        tok, line = toks.peek()
        if tok == "JOINT":
            toks.take("JOINT")
            _parse_joint(toks, joints, index)
        elif tok == "End":
            toks.take("End")
            toks.take("Site")
            toks.take("{")
            toks.take("OFFSET")
            for _ in range(3):
                toks.take_float()
            toks.take("}")
        elif tok == "}":
            toks.take("}")
            return
        else:
            raise ParseError("expected JOINT, End Site or '}', got '%s'"
                             % tok, line)


def _frame_rows(toks, width):
    # one frame per source line; count mismatches report that line
    rows = []
    while toks.peek()[0] is not None:
        _, line = toks.peek()
        row = []
        while toks.peek()[0] is not None and toks.peek()[1] == line:
            row.append(toks.take_float()[0])
        if len(row) != width:
            raise ParseError("frame has %d values, expected %d"
                             % (len(row), width), line)
        rows.append(row)
    return rows


def _axis_rotation(axis, degrees):
    """[T,3,3] right-handed rotation about a coordinate axis."""
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    t = len(rad)
    m = np.zeros((t, 3, 3))
    i, j = {0: (1, 2), 1: (2, 0), 2: (0, 1)}[axis]
    m[:, axis, axis] = 1.0
    m[:, i, i] = c
    m[:, j, j] = c
    m[:, i, j] = -s
    m[:, j, i] = s
    return m


def forward_kinematics(bvh):
    """World joint positions [T, J, 3] from parsed channel values."""
    t_total = bvh.num_frames
    j_total = len(bvh.joints)
    pos = np.zeros((t_total, j_total, 3))
    rot = np.zeros((t_total, j_total, 3, 3))
    for idx, joint in enumerate(bvh.joints):
        local = np.broadcast_to(np.eye(3), (t_total, 3, 3)).copy()
        trans = np.zeros((t_total, 3))
        for k, ch in enumerate(joint.channels):
            col = bvh.values[:, joint.channel_start + k]
            if ch in _POS:
                trans[:, _POS[ch]] = col
            else:
                local = local @ _axis_rotation(_ROT[ch], col)
        offset = joint.offset + trans
        if joint.parent < 0:
            pos[:, idx] = offset
            rot[:, idx] = local
        else:
            p_rot = rot[:, joint.parent]
            pos[:, idx] = pos[:, joint.parent] \
                + np.einsum("tij,tj->ti", p_rot, offset)
            rot[:, idx] = p_rot @ local
    return pos


def infer_mirror_map(names):
    """Left/right partner indices by name substitution, self elsewhere."""
    lookup = {n: i for i, n in enumerate(names)}
    table = list(range(len(names)))
    for i, name in enumerate(names):
        for a, b in (("Left", "Right"), ("left", "right"), ("LEFT", "RIGHT")):
            if a in name:
                other = name.replace(a, b)
            elif b in name:
                other = name.replace(b, a)
            else:
                continue
            if other in lookup and other != name:
                table[i] = lookup[other]
                break
    return table


def bvh_skeleton(bvh):
    names = [j.name for j in bvh.joints]
    parents = [j.parent for j in bvh.joints]
    offsets = np.stack([j.offset for j in bvh.joints])
    return Skeleton(names, parents, offsets, infer_mirror_map(names))
