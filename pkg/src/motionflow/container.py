"""Canonical binary motion container.

Layout (all little-endian):
  magic "MGMC" | u32 version | f32 fps | u32 J | u32 D | u32 C | u64 T
  per joint: u16 name length + UTF-8 name
  i32 parent index * J (root = -1)
  u32 mirror-pair count, then (u32, u32) per pair
  f32 rest offsets * J*3
  f32 poses * T*D (row-major)
  f32 control * T*C            (present iff C > 0)
  f32 world_root * T*3         (optional; presence inferred from length)
  u32 CRC32 over everything above

Writes are deterministic: the same clip always produces the same bytes, and
write(read(blob)) == blob.
"""

import struct
import zlib

import numpy as np

from .data import MotionClip, Skeleton
from .errors import CheckpointError

MAGIC = b"MGMC"
VERSION = 1


def clip_to_bytes(clip):
    skel = clip.skeleton
    j = skel.num_joints
    t = clip.num_frames
    c = 0 if clip.control is None else clip.control.shape[1]
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IfIIIQ", VERSION, clip.fps, j, clip.pose_dim, c, t)
    for name in skel.names:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    out += np.asarray(skel.parents, dtype="<i4").tobytes()
    pairs = skel.mirror_pairs()
    out += struct.pack("<I", len(pairs))
    for a, b in pairs:
        out += struct.pack("<II", a, b)
    out += np.asarray(skel.offsets, dtype="<f4").tobytes()
    out += np.asarray(clip.poses, dtype="<f4").tobytes()
    if c:
        out += np.asarray(clip.control, dtype="<f4").tobytes()
    if clip.world_root is not None:
        out += np.asarray(clip.world_root, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, blob, kind="container"):
        self.blob = blob
        self.kind = kind
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                "%s truncated reading %s" % (self.kind, what))
        piece = self.blob[self.pos:self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt, what):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype, count, what):
        raw = self.take(np.dtype(dtype).itemsize * count, what)
        return np.frombuffer(raw, dtype=dtype).astype(np.float64) \
            if np.dtype(dtype).kind == "f" \
            else np.frombuffer(raw, dtype=dtype)


def clip_from_bytes(blob):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("bad container magic")
    stored_crc, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("container CRC mismatch")
    r = _Reader(blob[:-4])
    r.take(4, "magic")
    version, fps, j, d, c, t = r.unpack("IfIIIQ", "header")
    if version != VERSION:
        raise CheckpointError("unsupported container version %d" % version)
    names = []
    for _ in range(j):
        n, = r.unpack("H", "name length")
        names.append(r.take(n, "joint name").decode("utf-8"))
    parents = r.array("<i4", j, "parents")
    npairs, = r.unpack("I", "mirror pair count")
    mirror_map = np.arange(j)
    for _ in range(npairs):
        a, b = r.unpack("II", "mirror pair")
        mirror_map[a], mirror_map[b] = b, a
    offsets = r.array("<f4", j * 3, "rest offsets").reshape(j, 3)
    skel = Skeleton(names, parents, offsets, mirror_map)
    poses = r.array("<f4", t * d, "poses").reshape(t, d)
    control = None
    if c:
        control = r.array("<f4", t * c, "control").reshape(t, c)
    remaining = len(r.blob) - r.pos
    world_root = None
    if remaining == t * 3 * 4:
        world_root = r.array("<f4", t * 3, "world_root").reshape(t, 3)
    elif remaining != 0:
        raise CheckpointError(
            "container has %d trailing bytes" % remaining)
    return MotionClip(fps, skel, poses, control, world_root)


def write_clip(path, clip):
    with open(path, "wb") as fh:
        fh.write(clip_to_bytes(clip))


def read_clip(path):
    with open(path, "rb") as fh:
        return clip_from_bytes(fh.read())
