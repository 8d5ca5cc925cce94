"""Autoregressive conditional flow over pose frames.

A stack of flow steps maps each standardized pose frame to a latent under a
condition built from the previous `history` poses and the control deltas up
to and including the current frame. Log-likelihoods are exact; sampling
runs the stack backwards one frame at a time, so streaming generation sees
only the past.

History poses in the condition can be dropped (zeroed, which in
standardized space means the mean pose) with some probability during
training; at rate 1.0 the model never sees pose context at all, so the
same zeroing applies when sampling and the model becomes control-driven
only.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import MotionClip, Scaler, integrate_control, step_root
from .errors import ContractError, DimensionError, NumericError
from .flows import CouplingState, FlowStep

LN_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    """Architecture and training-time behaviour of the flow."""

    n_steps: int
    history: int
    pose_dim: int
    control_dim: int
    hidden: int
    dropout_rate: float = 0.95
    eps: float = 0.05
    split_lo: int = None

    def __post_init__(self):
        if min(self.n_steps, self.history, self.pose_dim, self.hidden) < 1:
            raise ContractError("model dimensions must be positive")
        if self.control_dim < 0:
            raise ContractError("control_dim must be >= 0")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ContractError("dropout_rate outside [0, 1]")

    @property
    def cond_dim(self):
        return self.history * self.pose_dim \
            + (self.history + 1) * self.control_dim

    def to_dict(self):
        return {"n_steps": self.n_steps, "history": self.history,
                "pose_dim": self.pose_dim, "control_dim": self.control_dim,
                "hidden": self.hidden, "dropout_rate": self.dropout_rate,
                "eps": self.eps,
                "split_lo": -1 if self.split_lo is None else self.split_lo}

    @staticmethod
    def from_dict(d):
        d = dict(d)
        if d.get("split_lo", -1) < 0:
            d["split_lo"] = None
        return ModelConfig(**d)


class SamplerState:
    """Causal sampling state: pose/control history (standardized), the
    recurrent conditioner states per step, and the integrated world root."""

    def __init__(self, pose_hist, ctrl_hist, coupling_states, root):
        self.pose_hist = pose_hist
        self.ctrl_hist = ctrl_hist
        self.coupling_states = coupling_states
        self.root = root
        self.frame = 0


class MoGlowModel:
    def __init__(self, config, scaler=None, skeleton=None, fps=20.0, seed=0):
        self.config = config
        self.scaler = scaler if scaler is not None else \
            Scaler.identity(config.pose_dim, config.control_dim)
        self.skeleton = skeleton
        self.fps = float(fps)
        rng = np.random.default_rng(seed)
        self.steps = [FlowStep(config.pose_dim, config.cond_dim,
                               config.hidden, rng, eps=config.eps,
                               split_lo=config.split_lo)
                      for _ in range(config.n_steps)]
        self.ready = False

    # -- parameters -------------------------------------------------------

    def params(self):
        out = {}
        for n, step in enumerate(self.steps):
            for name, p in step.params():
                out["step%d.%s" % (n, name)] = p
        return out

    # -- initialisation ---------------------------------------------------

    def init_identity(self):
        """Accept the identity actnorm; the whole flow starts volume
        preserving (couplings are exact identities, the mix is a rotation)."""
        for step in self.steps:
            step.actnorm.initialize_identity()
        self.ready = True

    def init_from_data(self, poses_std):
        """Data-dependent actnorm init, one step after another.

        poses_std: [M, D] standardized frames from the first batch. The
        couplings start as exact identities, so propagating through actnorm
        and the linear mix alone reproduces each step's input distribution.
        """
        x = np.asarray(poses_std, dtype=np.float64)
        if x.ndim == 3:
            x = x.reshape(-1, x.shape[-1])
        for step in self.steps:
            step.actnorm.initialize(x)
            s = np.exp(step.actnorm.log_s.data)
            x = x * s + step.actnorm.t.data
            x = x @ step.linear.weight().T
        self.ready = True

    def _require_ready(self):
        if not self.ready:
            raise ContractError("actnorm not initialised; call "
                                "init_from_data or init_identity first")

    # -- condition building ----------------------------------------------

    def _conditions(self, poses, control, dropout_rng):
        """All per-frame condition rows, frame major: [(W-tau)*B, cond]."""
        cfg = self.config
        b, w, _ = poses.shape
        tau = cfg.history
        frames_out = w - tau
        hist = np.stack([poses[:, i:i + tau].reshape(b, -1)
                         for i in range(frames_out)])  # [F, B, tau*D]
        if dropout_rng is not None:
            keep = dropout_rng.random((frames_out, b, tau)) >= \
                cfg.dropout_rate
            hist = hist * np.repeat(keep, cfg.pose_dim, axis=2)
        if cfg.dropout_rate >= 1.0:
            hist = np.zeros_like(hist)
        ctrl = np.stack([control[:, i:i + tau + 1].reshape(b, -1)
                         for i in range(frames_out)])
        cond = np.concatenate([hist, ctrl], axis=2)
        return cond.reshape(frames_out * b, cfg.cond_dim)

    def _cond_projections(self, cond_all):
        """Per step, the condition rows premultiplied into the first LSTM
        layer's input weights (one big matmul instead of one per frame)."""
        out = []
        for step in self.steps:
            cpl = step.coupling
            tail = ad.slice_rows(cpl.cell1.wx, cpl.d_lo,
                                 cpl.d_lo + cpl.cond_dim)
            out.append(ad.matmul(ad.tensor(cond_all), tail))
        return out

    # -- likelihood -------------------------------------------------------

    def loss_batch(self, poses_std, control_std, dropout_rng=None,
                   collect_z=False):
        """Mean negative log-likelihood in nats per frame per dimension.

        poses_std [B, W, D] and control_std [B, W, C], both standardized;
        frames before `history` only ever condition. Returns (loss Tensor,
        info dict); info carries the float nll and optionally z [B, W-tau, D].
        """
        self._require_ready()
        cfg = self.config
        poses_std = np.asarray(poses_std, dtype=np.float64)
        control_std = np.asarray(control_std, dtype=np.float64)
        if poses_std.ndim != 3 or poses_std.shape[2] != cfg.pose_dim:
            raise DimensionError("poses_std must be [B, W, %d]"
                                 % cfg.pose_dim)
        if control_std.shape != poses_std.shape[:2] + (cfg.control_dim,):
            raise DimensionError("control_std shape mismatch")
        b, w, d = poses_std.shape
        tau = cfg.history
        if w <= tau:
            raise ContractError("window of %d frames cannot cover a %d-frame"
                                " history" % (w, tau))
        frames_out = w - tau

        cond_all = self._conditions(poses_std, control_std, dropout_rng)
        cond_projs = self._cond_projections(cond_all)
        preps = [step.prepare() for step in self.steps]
        states = [CouplingState.zeros(b, cfg.hidden) for _ in self.steps]

        quad = None
        coupling_ld = None
        z_frames = []
        for i in range(frames_out):
            value = ad.tensor(poses_std[:, tau + i])
            for n, step in enumerate(self.steps):
                proj = ad.slice_rows(cond_projs[n], i * b, (i + 1) * b)
                value, (_, _, ld_cpl), states[n] = step.normalize(
                    value, None, states[n], prep=preps[n], cond_proj=proj)
                coupling_ld = ld_cpl if coupling_ld is None \
                    else ad.add(coupling_ld, ld_cpl)
            sq = ad.sum_all(ad.mul(value, value))
            quad = sq if quad is None else ad.add(quad, sq)
            if collect_z:
                z_frames.append(value.data)

        static_ld = None
        for (_, ld_an), (_, ld_lin) in preps:
            part = ad.add(ld_an, ld_lin)
            static_ld = part if static_ld is None \
                else ad.add(static_ld, part)

        count = float(frames_out * b)
        loglik = ad.add(
            ad.add(ad.mul(ad.tensor(-0.5), quad),
                   ad.mul(ad.tensor(count), static_ld)),
            coupling_ld)
        norm = 1.0 / (count * d)
        loss = ad.mul(ad.tensor(-norm),
                      ad.add(loglik, ad.tensor(-0.5 * count * d * LN_2PI)))
        if not np.isfinite(loss.data):
            raise NumericError("non-finite log-likelihood (inputs or "
                               "parameters have diverged)")
        info = {"nll": float(loss.data)}
        if collect_z:
            info["z"] = np.stack(z_frames, axis=1)
        return loss, info

    def infer_z(self, poses_std, control_std, dropout_rng=None):
        """Single sequence [W, D]/[W, C] to (z [W-tau, D], loglik float)."""
        loss, info = self.loss_batch(poses_std[None], control_std[None],
                                     dropout_rng=dropout_rng, collect_z=True)
        w = poses_std.shape[0] - self.config.history
        total = -float(loss.data) * w * self.config.pose_dim
        return info["z"][0], total

    def nll_sequences(self, clips_std):
        """Mean nats per frame per dim over (poses_std, control_std) pairs,
        weighted by modelled frame count."""
        total = 0.0
        frames = 0
        for poses_std, control_std in clips_std:
            _, loglik = self.infer_z(poses_std, control_std)
            n = poses_std.shape[0] - self.config.history
            total -= loglik
            frames += n
        return total / (frames * self.config.pose_dim)

    # -- sampling ---------------------------------------------------------

    def init_state(self, init_poses=None, init_control=None):
        """Fresh causal sampler state.

        init_poses [history, D] raw; defaults to the mean pose (standardized
        zero). init_control [history, C] raw; defaults to raw zero deltas,
        standardized.
        """
        cfg = self.config
        self._require_ready()
        if init_poses is None:
            pose_hist = np.zeros((cfg.history, cfg.pose_dim))
        else:
            init_poses = np.asarray(init_poses, dtype=np.float64)
            if init_poses.shape != (cfg.history, cfg.pose_dim):
                raise DimensionError("init_poses must be [history, D]")
            pose_hist = self.scaler.standardize_poses(init_poses)
        if init_control is None:
            init_control = np.zeros((cfg.history, cfg.control_dim))
        else:
            init_control = np.asarray(init_control, dtype=np.float64)
            if init_control.shape != (cfg.history, cfg.control_dim):
                raise DimensionError("init_control must be [history, C]")
        ctrl_hist = self.scaler.standardize_control(init_control)
        states = [CouplingState.zeros(1, cfg.hidden) for _ in self.steps]
        return SamplerState(pose_hist, ctrl_hist, states, np.zeros(3))

    def sample_step(self, state, control_frame, z_frame):
        """Advance one frame; returns the raw pose for the new frame.

        control_frame [C] raw; z_frame [D] latent draw. Mutates `state`.
        """
        cfg = self.config
        c_std = self.scaler.standardize_control(
            np.asarray(control_frame, dtype=np.float64)[None])[0]
        ctrl_hist = np.concatenate([state.ctrl_hist, c_std[None]])
        pose_part = state.pose_hist
        if cfg.dropout_rate >= 1.0:
            pose_part = np.zeros_like(pose_part)
        cond = np.concatenate([pose_part.reshape(-1),
                               ctrl_hist.reshape(-1)])[None]
        cond_t = ad.tensor(cond)

        value = ad.tensor(np.asarray(z_frame, dtype=np.float64)[None])
        new_states = list(state.coupling_states)
        for n in range(len(self.steps) - 1, -1, -1):
            value, _, new_states[n] = self.steps[n].generate(
                value, cond_t, state.coupling_states[n])
        x_std = value.data[0]
        if not np.all(np.isfinite(x_std)):
            raise NumericError("non-finite sample at frame %d" % state.frame)

        state.coupling_states = new_states
        state.pose_hist = np.concatenate([state.pose_hist[1:], x_std[None]])
        state.ctrl_hist = ctrl_hist[1:]
        if cfg.control_dim == 3:
            # the locomotion (fwd, lat, rot) triple drives the root
            state.root = step_root(state.root, control_frame)
        state.frame += 1
        return self.scaler.unstandardize_poses(x_std[None])[0]

    def sample_sequence(self, control, init_poses=None, temperature=1.0,
                        seed=0):
        """Generate a full clip under a raw control track [T, C].

        The first `history` frames hold the initial poses (mean pose by
        default); frames history..T-1 are sampled causally with latents
        drawn N(0, temperature^2). Requires an attached skeleton.
        """
        cfg = self.config
        if self.skeleton is None:
            raise ContractError("model has no skeleton; cannot build a clip")
        control = np.asarray(control, dtype=np.float64)
        if control.ndim != 2 or control.shape[1] != cfg.control_dim:
            raise DimensionError("control must be [T, %d]" % cfg.control_dim)
        t_total = control.shape[0]
        if t_total <= cfg.history:
            raise ContractError("control track shorter than the history")

        state = self.init_state(init_poses, control[:cfg.history])
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((t_total - cfg.history, cfg.pose_dim)) \
            * temperature
        poses = np.empty((t_total, cfg.pose_dim))
        if init_poses is None:
            poses[:cfg.history] = self.scaler.mean_pose()
        else:
            poses[:cfg.history] = init_poses
        for t in range(cfg.history, t_total):
            poses[t] = self.sample_step(state, control[t],
                                        z[t - cfg.history])
        if cfg.control_dim == 3:
            world_root = integrate_control(np.zeros(3), control)
        else:
            world_root = np.zeros((t_total, 3))
        return MotionClip(self.fps, self.skeleton, poses, control.copy(),
                          world_root)
