"""Model checkpoints: everything needed to resume training bit-exactly.

Layout (all little-endian):
  magic "MGCK" | u32 version | u64 header length | header JSON (UTF-8)
  u32 array count
  per array: u16 name length + UTF-8 name | u8 ndim | u32 dims...
  f64 array payloads, C order, in manifest order
  u32 CRC32 over everything above

The header is canonical JSON (sorted keys, no whitespace) holding the model
config, fps, the skeleton topology, optimizer scalars and an open "extra"
dict for trainer state (step counter, RNG states, best held-out NLL). The
arrays section holds flow parameters, Adam moments, the scaler statistics
and the skeleton rest offsets. Identical state always serializes to
identical bytes, and save(load(blob)) == blob.
"""

import json
import struct
import zlib

import numpy as np

from .container import _Reader
from .data import Scaler, Skeleton
from .errors import CheckpointError
from .model import ModelConfig, MoGlowModel

MAGIC = b"MGCK"
VERSION = 1


def _array_entries(model, optimizer_state):
    entries = {}
    for name, p in model.params().items():
        entries["param." + name] = p.data
    # the diagonal signs of the LU mix are frozen at construction, not
    # trained, so they have to ride along explicitly
    for n, step in enumerate(model.steps):
        entries["state.step%d.linear.sign" % n] = step.linear.sign
    sc = model.scaler
    entries["scaler.pose_mean"] = sc.pose_mean
    entries["scaler.pose_std"] = sc.pose_std
    entries["scaler.control_mean"] = sc.control_mean
    entries["scaler.control_std"] = sc.control_std
    if model.skeleton is not None:
        entries["skeleton.offsets"] = model.skeleton.offsets
    if optimizer_state is not None:
        for name, m in optimizer_state["m"].items():
            entries["adam.m." + name] = m
        for name, v in optimizer_state["v"].items():
            entries["adam.v." + name] = v
    return entries


def checkpoint_bytes(model, optimizer_state=None, extra=None):
    """Serialize a model (plus optional Adam state and trainer extras).

    optimizer_state is the dict returned by training.Adam.state_dict();
    extra may be any JSON-serializable dict and is returned untouched by
    load_checkpoint_bytes.
    """
    header = {
        "config": model.config.to_dict(),
        "fps": model.fps,
        "ready": bool(model.ready),
        "skeleton": None if model.skeleton is None else {
            "names": list(model.skeleton.names),
            "parents": [int(p) for p in model.skeleton.parents],
            "mirror_map": [int(m) for m in model.skeleton.mirror_map],
        },
        "adam": None if optimizer_state is None else {
            "t": int(optimizer_state["t"]),
            "beta1": optimizer_state["beta1"],
            "beta2": optimizer_state["beta2"],
            "eps": optimizer_state["eps"],
        },
        "extra": {} if extra is None else extra,
    }
    raw_header = json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    entries = _array_entries(model, optimizer_state)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IQ", VERSION, len(raw_header))
    out += raw_header
    out += struct.pack("<I", len(entries))
    names = sorted(entries)
    for name in names:
        arr = np.ascontiguousarray(entries[name], dtype=np.float64)
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack("<%dI" % arr.ndim, *arr.shape)
    for name in names:
        arr = np.ascontiguousarray(entries[name], dtype=np.float64)
        out += arr.astype("<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def _take_header(r):
    r.take(4, "magic")
    version, header_len = r.unpack("IQ", "header size")
    if version != VERSION:
        raise CheckpointError(
            "unsupported checkpoint version %d" % version)
    raw = r.take(header_len, "header")
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("checkpoint header is not valid JSON: %s"
                              % exc) from exc


def _header_get(header, key):
    if key not in header:
        raise CheckpointError("checkpoint header missing field '%s'" % key)
    return header[key]


def load_checkpoint_bytes(blob):
    """Rebuild (model, optimizer_state or None, extra dict) from bytes."""
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    stored_crc, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch")
    r = _Reader(blob[:-4], kind="checkpoint")
    header = _take_header(r)
    count, = r.unpack("I", "array count")
    manifest = []
    for i in range(count):
        n, = r.unpack("H", "array name length")
        name = r.take(n, "array name").decode("utf-8")
        ndim, = r.unpack("B", "rank of '%s'" % name)
        shape = r.unpack("%dI" % ndim, "shape of '%s'" % name)
        manifest.append((name, shape))
    arrays = {}
    for name, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        flat = r.array("<f8", size, "array '%s'" % name)
        arrays[name] = flat.reshape(shape)
    if r.pos != len(r.blob):
        raise CheckpointError("checkpoint has %d trailing bytes"
                              % (len(r.blob) - r.pos))

    config = ModelConfig.from_dict(_header_get(header, "config"))
    scaler = Scaler(_pop_array(arrays, "scaler.pose_mean"),
                    _pop_array(arrays, "scaler.pose_std"),
                    _pop_array(arrays, "scaler.control_mean"),
                    _pop_array(arrays, "scaler.control_std"))
    skel_info = _header_get(header, "skeleton")
    skeleton = None
    if skel_info is not None:
        offsets = _pop_array(arrays, "skeleton.offsets")
        skeleton = Skeleton(skel_info["names"], skel_info["parents"],
                            offsets, skel_info["mirror_map"])
    model = MoGlowModel(config, scaler=scaler, skeleton=skeleton,
                        fps=_header_get(header, "fps"))
    for name, p in model.params().items():
        arr = _pop_array(arrays, "param." + name)
        if arr.shape != p.data.shape:
            raise CheckpointError(
                "array 'param.%s' has shape %s, model expects %s"
                % (name, arr.shape, p.data.shape))
        p.data = arr
    for n, step in enumerate(model.steps):
        sign = _pop_array(arrays, "state.step%d.linear.sign" % n)
        if sign.shape != step.linear.sign.shape:
            raise CheckpointError(
                "array 'state.step%d.linear.sign' has shape %s, model "
                "expects %s" % (n, sign.shape, step.linear.sign.shape))
        step.linear.sign = sign
    if _header_get(header, "ready"):
        for step in model.steps:
            step.actnorm.initialized = True
        model.ready = True

    adam_info = _header_get(header, "adam")
    optimizer_state = None
    if adam_info is not None:
        m, v = {}, {}
        for name in model.params():
            m[name] = _pop_array(arrays, "adam.m." + name)
            v[name] = _pop_array(arrays, "adam.v." + name)
        optimizer_state = {"t": adam_info["t"], "beta1": adam_info["beta1"],
                           "beta2": adam_info["beta2"],
                           "eps": adam_info["eps"], "m": m, "v": v}
    if arrays:
        raise CheckpointError("checkpoint has unexpected arrays: %s"
                              % ", ".join(sorted(arrays)))
    return model, optimizer_state, _header_get(header, "extra")


def _pop_array(arrays, name):
    if name not in arrays:
        raise CheckpointError("checkpoint missing array '%s'" % name)
    return arrays.pop(name)


def save_checkpoint(path, model, optimizer_state=None, extra=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, optimizer_state, extra))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
