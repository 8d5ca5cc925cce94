"""Adam optimisation with warmup scheduling and a deterministic train loop.

The loop draws batches and dropout masks from two independently seeded RNG
streams, so changing the dropout rate never changes which windows are
sampled. Everything needed to resume (parameters, Adam moments, both RNG
states, the step counter) goes into the checkpoint, and resuming reproduces
the next step's loss bit for bit.

All NLL figures here are in nats per frame per dimension.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import checkpoint_bytes
from .data import window_slices
from .errors import CheckpointError, ContractError, DegenerateDataError, \
    NumericError
from .model import LN_2PI


def noam_lr(step, warmup, peak):
    """Linear warmup to `peak` at `step == warmup`, then 1/sqrt decay."""
    if step < 1:
        raise ContractError("schedule step must be >= 1, got %d" % step)
    if warmup < 1:
        raise ContractError("warmup must be >= 1, got %d" % warmup)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    """Bias-corrected Adam over a name -> parameter dict.

    Moments are keyed by parameter name so that optimizer state survives a
    round trip through a checkpoint regardless of graph identity.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr=None):
        """Apply one update from the grads currently on the parameters.

        A missing grad counts as zero. Any non-finite grad aborts the whole
        step before any parameter is touched.
        """
        if lr is None:
            lr = self.lr
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient in '%s'" % name)
            grads[name] = g
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2)
                                                  + self.eps)

    def zero_grad(self):
        ad.zero_grad(self.params.values())

    def state_dict(self):
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps,
                "m": {k: m.copy() for k, m in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state(self, state):
        for key in ("m", "v"):
            have = set(state[key])
            want = set(self.params)
            if have != want:
                raise CheckpointError(
                    "optimizer state '%s' does not match the parameter set "
                    "(missing %s, unexpected %s)"
                    % (key, sorted(want - have), sorted(have - want)))
        for name, p in self.params.items():
            for key, store in (("m", self.m), ("v", self.v)):
                arr = np.asarray(state[key][name], dtype=np.float64)
                if arr.shape != p.data.shape:
                    raise CheckpointError(
                        "optimizer moment '%s.%s' has shape %s, parameter "
                        "has %s" % (key, name, arr.shape, p.data.shape))
                store[name] = arr.copy()
        self.t = int(state["t"])
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.eps = state["eps"]


def clip_gradients(params, max_norm):
    """Scale all grads in place so their global norm is at most max_norm.

    Returns (norm_before, clipped).
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
        return norm, True
    return norm, False


def gaussian_baseline_nll(poses_std):
    """NLL per frame per dim of the best diagonal unit-variance Gaussian
    fit, evaluated on standardized frames. The reference point a trained
    model has to beat."""
    poses_std = np.asarray(poses_std, dtype=np.float64)
    return 0.5 * LN_2PI + 0.5 * float(np.mean(poses_std ** 2))


def build_windows(sequences, window, overlap=0.5):
    """Cut standardized (poses, control) sequences into equal windows.

    Returns ([N, window, D], [N, window, C]) stacks; sequences shorter than
    one window are skipped.
    """
    pos, ctl = [], []
    for poses, control in sequences:
        poses = np.asarray(poses, dtype=np.float64)
        control = np.asarray(control, dtype=np.float64)
        if len(poses) != len(control):
            raise ContractError("poses and control lengths differ: %d vs %d"
                                % (len(poses), len(control)))
        for a, b in window_slices(len(poses), window, overlap):
            pos.append(poses[a:b])
            ctl.append(control[a:b])
    if not pos:
        raise DegenerateDataError(
            "no sequence is long enough for a %d-frame window" % window)
    return np.stack(pos), np.stack(ctl)


@dataclass
class TrainConfig:
    """Everything the train loop needs beyond the model itself.

    lr is the constant rate, or the peak for the noam schedule. A dropout
    rate of None keeps whatever the model config says. grad_clip is a global
    norm bound, disabled by default. precision is fixed at float64; the
    field exists so configs can state it explicitly.
    """

    steps: int
    batch_size: int = 32
    window: int = 40
    lr: float = 1e-4
    schedule: str = "constant"
    warmup: int = 1000
    dropout_rate: float | None = None
    seed: int = 0
    eval_every: int = 250
    grad_clip: float | None = None
    target_nll: float | None = None
    precision: str = "float64"

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.window < 2:
            raise ContractError("window must be >= 2")
        if self.schedule not in ("constant", "noam"):
            raise ContractError("schedule must be 'constant' or 'noam', "
                                "got %r" % (self.schedule,))
        if self.warmup < 1:
            raise ContractError("warmup must be >= 1")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")
        if self.precision != "float64":
            raise ContractError("only float64 precision is supported")

    def to_dict(self):
        return {"steps": self.steps, "batch_size": self.batch_size,
                "window": self.window, "lr": self.lr,
                "schedule": self.schedule, "warmup": self.warmup,
                "dropout_rate": self.dropout_rate, "seed": self.seed,
                "eval_every": self.eval_every, "grad_clip": self.grad_clip,
                "target_nll": self.target_nll, "precision": self.precision}


@dataclass
class TrainResult:
    checkpoint: bytes
    best_nll: float
    steps_done: int
    aborted: bool
    interrupted: bool = False
    metrics: list = field(default_factory=list)
    clip_events: list = field(default_factory=list)


def _rng_state(gen):
    return gen.bit_generator.state


def _rng_from_state(state):
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def _metrics_line(step, train_nll, heldout_nll, lr):
    held = "nan" if heldout_nll is None else "%.10f" % heldout_nll
    return "%d\t%.10f\t%s\t%.6e" % (step, train_nll, held, lr)


def train(model, windows, heldout, config, log_path=None,
          checkpoint_path=None, resume=None, progress=None):
    """Run the training loop; returns a TrainResult.

    windows: ([N, W, D], [N, W, C]) standardized training windows.
    heldout: list of standardized (poses, control) sequences; may be empty,
    in which case no evaluation happens and the final state is retained.
    resume: the (optimizer_state, extra) pair from a loaded checkpoint;
    training continues from extra["step"] with restored RNG streams.
    progress: optional callable fed each metrics line that carries a
    held-out evaluation.

    The retained checkpoint is the best-held-out one. On a numeric abort
    (non-finite loss or gradient) the loop stops early and the result keeps
    the last good state, flagged with aborted=True.
    """
    win_poses, win_control = windows
    win_poses = np.asarray(win_poses, dtype=np.float64)
    win_control = np.asarray(win_control, dtype=np.float64)
    if win_poses.ndim != 3 or win_control.ndim != 3:
        raise ContractError("windows must be rank-3 [N, W, dim] stacks")
    n_windows = win_poses.shape[0]

    if config.dropout_rate is not None:
        model.config.dropout_rate = config.dropout_rate
    opt = Adam(model.params(), lr=config.lr)
    start_step = 0
    if resume is not None:
        opt_state, extra = resume
        if opt_state is not None:
            opt.load_state(opt_state)
        start_step = int(extra["step"])
        batch_rng = _rng_from_state(extra["rng"]["batch"])
        dropout_rng = _rng_from_state(extra["rng"]["dropout"])
        best_nll = extra.get("best_nll")
    else:
        batch_rng, dropout_rng = np.random.default_rng(config.seed).spawn(2)
        best_nll = None

    def snapshot(step):
        extra = {"step": step, "best_nll": best_nll,
                 "rng": {"batch": _rng_state(batch_rng),
                         "dropout": _rng_state(dropout_rng)},
                 "train_config": config.to_dict()}
        return checkpoint_bytes(model, opt.state_dict(), extra)

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    result = TrainResult(checkpoint=b"", best_nll=math.inf,
                         steps_done=start_step, aborted=False)
    if best_nll is not None:
        result.best_nll = best_nll
    best_bytes = None
    try:
        for step in range(start_step + 1, config.steps + 1):
            lr = noam_lr(step, config.warmup, config.lr) \
                if config.schedule == "noam" else config.lr
            idx = batch_rng.integers(0, n_windows, size=config.batch_size)
            batch_poses = win_poses[idx]
            batch_control = win_control[idx]
            if not model.ready:
                model.init_from_data(
                    batch_poses.reshape(-1, batch_poses.shape[2]))
            try:
                loss, _ = model.loss_batch(batch_poses, batch_control,
                                           dropout_rng=dropout_rng)
                train_nll = float(loss.data)
                ad.backward(loss)
                if config.grad_clip is not None:
                    norm, clipped = clip_gradients(
                        list(opt.params.values()), config.grad_clip)
                    if clipped:
                        result.clip_events.append((step, norm))
                opt.step(lr)
            except NumericError:
                result.aborted = True
                break
            finally:
                opt.zero_grad()
            result.steps_done = step

            heldout_nll = None
            if heldout and (step % config.eval_every == 0
                            or step == config.steps):
                heldout_nll = model.nll_sequences(heldout)
                if best_nll is None or heldout_nll < best_nll:
                    best_nll = heldout_nll
                    result.best_nll = best_nll
                    best_bytes = snapshot(step)
                    if checkpoint_path:
                        with open(checkpoint_path, "wb") as fh:
                            fh.write(best_bytes)
            line = _metrics_line(step, train_nll, heldout_nll, lr)
            result.metrics.append(line)
            if log_fh:
                log_fh.write(line + "\n")
                log_fh.flush()
            if progress is not None and heldout_nll is not None:
                progress(line)
            if heldout_nll is not None and config.target_nll is not None \
                    and heldout_nll <= config.target_nll:
                break
    except KeyboardInterrupt:
        # Ctrl-C still leaves a usable checkpoint behind
        result.interrupted = True
    finally:
        if log_fh:
            log_fh.close()

    if best_bytes is None:
        # no evaluation happened (or we aborted before one): keep the
        # current parameters, which are the last good ones
        best_bytes = snapshot(result.steps_done)
        if checkpoint_path:
            with open(checkpoint_path, "wb") as fh:
                fh.write(best_bytes)
    result.checkpoint = best_bytes
    return result
