"""WebSocket steering service: one causal sampler per connected client.

The server is purely reactive. Every control message triggers exactly one
sampler step and one pose reply, so the client owns the clock and the
algorithmic latency is zero frames. Control values arrive in cm/s and
rad/s and are converted to per-frame deltas at the model's frame rate.

Message schema (JSON text frames):
  client: {"type":"open","checkpoint":str,"temperature":num,"seed":int}
          {"type":"control","fwd":num,"lat":num,"rot":num}
          {"type":"temp","t":num}
          {"type":"close"}
  server: {"type":"skeleton","joints":[...],"parents":[...],
           "offsets":[[x,y,z],...],"fps":num,"units":"cm"}
          {"type":"pose","frame":int,"root":{"x":num,"z":num,"theta":num},
           "joints":[[x,y,z],...]}
          {"type":"ack","t":num}
          {"type":"error","msg":str}

Checkpoints are resolved inside the directory the app was built with, and
their models are shared read-only across sessions. Idle sessions are
reaped lazily on the next open (and on demand via app.state.reap).
"""

import itertools
import json
import os
import time

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .checkpoint import load_checkpoint
from .errors import CheckpointError, MotionFlowError, NumericError

DEFAULT_REAP_S = 300.0


class SteeringSession:
    """Sampler state plus a private noise stream for one client."""

    def __init__(self, model, temperature, seed):
        if model.config.control_dim != 3:
            raise CheckpointError(
                "steering needs a (fwd, lat, rot) model; checkpoint has "
                "control_dim %d" % model.config.control_dim)
        if temperature < 0:
            raise NumericError("temperature must be >= 0")
        self.model = model
        self.state = model.init_state()
        self.rng = np.random.default_rng(seed)
        self.temperature = float(temperature)
        self.frame = 0
        self.last_active = time.monotonic()

    def skeleton_message(self):
        skel = self.model.skeleton
        return {"type": "skeleton", "joints": list(skel.names),
                "parents": [int(p) for p in skel.parents],
                "offsets": skel.offsets.tolist(),
                "fps": self.model.fps, "units": "cm"}

    def set_temperature(self, t):
        t = float(t)
        if not np.isfinite(t) or t < 0:
            raise NumericError("temperature must be finite and >= 0")
        self.temperature = t

    def step(self, fwd, lat, rot):
        """One control frame in, one pose out; cm/s and rad/s in."""
        control = np.array([fwd, lat, rot], dtype=np.float64)
        if not np.all(np.isfinite(control)):
            raise NumericError("non-finite control values")
        self.last_active = time.monotonic()
        # the noise draw happens only after validation so a rejected
        # message leaves the stream untouched
        z = self.rng.standard_normal(self.model.config.pose_dim) \
            * self.temperature
        pose = self.model.sample_step(self.state, control / self.model.fps,
                                      z)
        reply = {"type": "pose", "frame": self.frame,
                 "root": {"x": float(self.state.root[0]),
                          "z": float(self.state.root[1]),
                          "theta": float(self.state.root[2])},
                 "joints": pose.reshape(-1, 3).tolist()}
        self.frame += 1
        return reply


def make_app(checkpoint_dir=".", reap_after_s=DEFAULT_REAP_S):
    app = FastAPI()
    models = {}
    sessions = {}
    ids = itertools.count(1)

    def load_model(name):
        path = name if os.path.isabs(name) \
            else os.path.join(checkpoint_dir, name)
        if path not in models:
            if not os.path.exists(path):
                raise CheckpointError("unknown checkpoint %r" % name)
            model, _, _ = load_checkpoint(path)
            if model.skeleton is None:
                raise CheckpointError(
                    "checkpoint %r has no skeleton; cannot stream poses"
                    % name)
            models[path] = model
        return models[path]

    def reap(now=None):
        now = time.monotonic() if now is None else now
        for sid in [sid for sid, s in sessions.items()
                    if now - s.last_active > reap_after_s]:
            del sessions[sid]
        return len(sessions)

    app.state.sessions = sessions
    app.state.reap = reap

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = None
        sid = None
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_json({"type": "error",
                                        "msg": "malformed JSON"})
                    continue
                kind = msg.get("type")
                try:
                    if kind == "open":
                        if session is not None:
                            raise MotionFlowError("session already open")
                        reap()
                        model = load_model(str(msg.get("checkpoint", "")))
                        session = SteeringSession(
                            model, float(msg.get("temperature", 1.0)),
                            int(msg.get("seed", 0)))
                        sid = next(ids)
                        sessions[sid] = session
                        await ws.send_json(session.skeleton_message())
                    elif kind == "control":
                        if session is None:
                            raise MotionFlowError("no open session")
                        reply = session.step(float(msg.get("fwd", 0.0)),
                                             float(msg.get("lat", 0.0)),
                                             float(msg.get("rot", 0.0)))
                        await ws.send_json(reply)
                    elif kind == "temp":
                        if session is None:
                            raise MotionFlowError("no open session")
                        session.set_temperature(msg.get("t", 1.0))
                        await ws.send_json({"type": "ack",
                                            "t": session.temperature})
                    elif kind == "close":
                        break
                    else:
                        raise MotionFlowError(
                            "unknown message type %r" % kind)
                except (MotionFlowError, ValueError, TypeError) as exc:
                    await ws.send_json({"type": "error", "msg": str(exc)})
        except WebSocketDisconnect:
            pass
        finally:
            if sid is not None:
                sessions.pop(sid, None)

    return app
