import numpy as np
import pytest
from starlette.testclient import TestClient

from motionflow.checkpoint import save_checkpoint
from motionflow.model import ModelConfig, MoGlowModel
from motionflow.service import make_app
from motionflow.toywalker import walker_skeleton


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    cfg = ModelConfig(n_steps=2, history=2, pose_dim=21, control_dim=3,
                      hidden=8, dropout_rate=0.95)
    model = MoGlowModel(cfg, skeleton=walker_skeleton(), fps=20.0, seed=0)
    model.init_from_data(np.random.default_rng(1).normal(size=(64, 21)))
    save_checkpoint(root / "walker.mgck", model)

    from motionflow.data import Skeleton
    flat = MoGlowModel(ModelConfig(n_steps=1, history=2, pose_dim=6,
                                   control_dim=2, hidden=4),
                       skeleton=Skeleton(["hip", "head"], [-1, 0],
                                         np.zeros((2, 3))), seed=1)
    flat.init_identity()
    save_checkpoint(root / "flat.mgck", flat)

    app = make_app(str(root), reap_after_s=60.0)
    return app


def open_session(ws, seed=0, temperature=1.0, checkpoint="walker.mgck"):
    ws.send_json({"type": "open", "checkpoint": checkpoint,
                  "temperature": temperature, "seed": seed})
    return ws.receive_json()


def drive(ws, controls):
    out = []
    for fwd, lat, rot in controls:
        ws.send_json({"type": "control", "fwd": fwd, "lat": lat,
                      "rot": rot})
        out.append(ws.receive_json())
    return out


def test_open_returns_skeleton(env):
    skel = walker_skeleton()
    with TestClient(env).websocket_connect("/ws") as ws:
        msg = open_session(ws)
        assert msg["type"] == "skeleton"
        assert msg["joints"] == skel.names
        assert msg["parents"] == [int(p) for p in skel.parents]
        assert np.allclose(msg["offsets"], skel.offsets)
        assert msg["fps"] == 20.0
        assert msg["units"] == "cm"


def test_missing_checkpoint_then_recovery(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        msg = open_session(ws, checkpoint="nope.mgck")
        assert msg["type"] == "error"
        assert "nope.mgck" in msg["msg"]
        assert open_session(ws)["type"] == "skeleton"


def test_control_requires_open_session(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        ws.send_json({"type": "control", "fwd": 0, "lat": 0, "rot": 0})
        assert ws.receive_json()["type"] == "error"


def test_one_pose_per_control_in_order(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        open_session(ws)
        replies = drive(ws, [(0.0, 0.0, 0.0)] * 5)
        assert [r["type"] for r in replies] == ["pose"] * 5
        assert [r["frame"] for r in replies] == [0, 1, 2, 3, 4]
        assert all(len(r["joints"]) == 7 for r in replies)


def test_forward_control_advances_root_exactly(env):
    # 100 cm/s at 20 fps with heading locked straight: 5 cm per frame
    with TestClient(env).websocket_connect("/ws") as ws:
        open_session(ws, seed=3)
        replies = drive(ws, [(100.0, 0.0, 0.0)] * 8)
        for k, r in enumerate(replies):
            assert r["root"]["z"] == 5.0 * (k + 1)
            assert r["root"]["x"] == 0.0
            assert r["root"]["theta"] == 0.0


def test_same_seed_same_stream(env):
    controls = [(100.0, 0.0, 0.0), (80.0, 10.0, 0.2), (0.0, 0.0, 0.0)] * 3
    streams = []
    for _ in range(2):
        with TestClient(env).websocket_connect("/ws") as ws:
            open_session(ws, seed=11)
            streams.append(drive(ws, controls))
    assert streams[0] == streams[1]


def test_interleaved_sessions_are_isolated(env):
    controls = [(60.0, 0.0, 0.1)] * 6
    with TestClient(env).websocket_connect("/ws") as solo:
        open_session(solo, seed=7)
        alone = drive(solo, controls)
    client = TestClient(env)
    with client.websocket_connect("/ws") as a, \
            client.websocket_connect("/ws") as b:
        open_session(a, seed=7)
        open_session(b, seed=99)
        got_a, got_b = [], []
        for fwd, lat, rot in controls:
            a.send_json({"type": "control", "fwd": fwd, "lat": lat,
                         "rot": rot})
            b.send_json({"type": "control", "fwd": fwd, "lat": lat,
                         "rot": rot})
            got_a.append(a.receive_json())
            got_b.append(b.receive_json())
    assert got_a == alone
    assert got_a != got_b  # different noise stream


def test_zero_temperature_ignores_seed(env):
    streams = []
    for seed in (1, 2):
        with TestClient(env).websocket_connect("/ws") as ws:
            open_session(ws, seed=seed, temperature=0.0)
            streams.append(drive(ws, [(50.0, 0.0, 0.0)] * 4))
    assert streams[0] == streams[1]


def test_temperature_restore_brings_noise_back(env):
    streams = []
    for seed in (1, 2):
        with TestClient(env).websocket_connect("/ws") as ws:
            open_session(ws, seed=seed, temperature=0.0)
            first = drive(ws, [(50.0, 0.0, 0.0)] * 2)
            ws.send_json({"type": "temp", "t": 1.0})
            ack = ws.receive_json()
            assert ack == {"type": "ack", "t": 1.0}
            streams.append((first, drive(ws, [(50.0, 0.0, 0.0)] * 2)))
    assert streams[0][0] == streams[1][0]  # cold part matches
    assert streams[0][1] != streams[1][1]  # noise is back


def test_negative_temperature_rejected(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        open_session(ws)
        ws.send_json({"type": "temp", "t": -1.0})
        assert ws.receive_json()["type"] == "error"
        assert drive(ws, [(0.0, 0.0, 0.0)])[0]["type"] == "pose"


def test_open_with_negative_temperature_makes_no_session(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        msg = open_session(ws, temperature=-0.5)
        assert msg["type"] == "error"
        ws.send_json({"type": "control", "fwd": 0, "lat": 0, "rot": 0})
        assert ws.receive_json()["type"] == "error"


def test_non_finite_control_rejected_without_state_change(env):
    controls = [(40.0, 0.0, 0.0)] * 3
    with TestClient(env).websocket_connect("/ws") as clean:
        open_session(clean, seed=5)
        want = drive(clean, controls)
    with TestClient(env).websocket_connect("/ws") as ws:
        open_session(ws, seed=5)
        got = drive(ws, controls[:1])
        ws.send_json({"type": "control", "fwd": float("nan"), "lat": 0.0,
                      "rot": 0.0})
        assert ws.receive_json()["type"] == "error"
        got += drive(ws, controls[1:])
    assert got == want


def test_wrong_model_shape_rejected(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        msg = open_session(ws, checkpoint="flat.mgck")
        assert msg["type"] == "error"
        assert "control_dim" in msg["msg"]


def test_malformed_and_unknown_messages(env):
    with TestClient(env).websocket_connect("/ws") as ws:
        ws.send_text("{not json")
        assert ws.receive_json()["msg"] == "malformed JSON"
        ws.send_json({"type": "dance"})
        assert "unknown message type" in ws.receive_json()["msg"]


def test_close_message_ends_session(env):
    client = TestClient(env)
    with client.websocket_connect("/ws") as ws:
        open_session(ws)
        assert len(env.state.sessions) == 1
        ws.send_json({"type": "close"})
    assert len(env.state.sessions) == 0


def test_idle_sessions_reaped(env):
    import time
    client = TestClient(env)
    with client.websocket_connect("/ws") as ws:
        open_session(ws)
        assert env.state.reap() == 1  # fresh session survives
        for s in env.state.sessions.values():
            s.last_active = time.monotonic() - 3600.0
        assert env.state.reap() == 0
