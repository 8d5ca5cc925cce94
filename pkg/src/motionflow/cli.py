"""Command-line front end tying the pipeline together.

Subcommands: preprocess (BVH to canonical clip), toygen (synthetic walker
data), train, sample, eval and serve. Every run echoes its resolved
configuration and seed, and every artifact gets a `<out>.run.txt` sidecar
recording both, so a rerun with the same inputs reproduces the same bytes.

Config files are `key = value` text; `--set key=value` flags override file
values, which override the profile defaults. Human-facing speeds are cm/s
and rad/s; they are converted to per-frame control deltas at the boundary.

Exit codes: 0 ok, 2 usage, 3 data problem, 4 numeric failure.
"""

import argparse
import csv
import difflib
import os
import sys

import numpy as np

from . import container
from .bvh import bvh_skeleton, forward_kinematics, parse_bvh
from .checkpoint import load_checkpoint
from .data import MotionClip, apply_scaler, augment, downsample, \
    extract_root_and_control, fit_scaler, mirror
from .errors import CheckpointError, ContractError, DegenerateDataError, \
    DimensionError, NumericError, ParseError, UndefinedResultError
from .evaluation import bone_length_rmse, curve_csv, curve_svg, \
    footstep_report, report_text, stillness_metric
from .model import ModelConfig, MoGlowModel
from .toywalker import default_train_spec, generate_toy_walker
from .training import TrainConfig, build_windows, gaussian_baseline_nll, \
    train

DEFAULT_SEED = 1234
DATA_DIR_ENV = "MOTIONFLOW_DATA"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# model size and training shape per named profile; everything here can be
# overridden by a config file or --set
PROFILES = {
    "desk": dict(n_steps=4, history=4, hidden=64, dropout_rate=0.95,
                 eps=0.05, steps=3000, batch_size=24, window=30, lr=1e-3,
                 schedule="constant", warmup=1000, eval_every=200,
                 grad_clip=None, target_nll=None, precision="float64",
                 heldout_frac=0.1, overlap=0.5, augment="none"),
    "paper": dict(n_steps=16, history=10, hidden=512, dropout_rate=0.95,
                  eps=0.05, steps=80000, batch_size=100, window=80,
                  lr=1e-4, schedule="constant", warmup=1000,
                  eval_every=1000, grad_clip=None, target_nll=None,
                  precision="float64", heldout_frac=0.05, overlap=0.5,
                  augment="mirror"),
}

CONFIG_TYPES = {
    "n_steps": int, "history": int, "hidden": int, "dropout_rate": float,
    "eps": float, "steps": int, "batch_size": int, "window": int,
    "lr": float, "schedule": str, "warmup": int, "eval_every": int,
    "grad_clip": float, "target_nll": float, "precision": str,
    "heldout_frac": float, "overlap": float, "augment": str,
}

CONTROL_PATTERNS = ("straight", "turn", "stopgo", "zero")


# ---------------------------------------------------------------------------
# configuration plumbing

def parse_config_file(path):
    """`key = value` lines, '#' comments, blanks ignored. Values stay raw
    strings; coercion happens against the key table."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value', got %r" % line,
                                 line=lineno)
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values


def coerce(key, text):
    if key not in CONFIG_TYPES:
        hint = difflib.get_close_matches(key, CONFIG_TYPES, n=1)
        extra = "; did you mean '%s'?" % hint[0] if hint else ""
        raise ContractError("unknown config key '%s'%s" % (key, extra))
    want = CONFIG_TYPES[key]
    if want is not str and str(text).lower() == "none":
        return None
    try:
        return want(text)
    except ValueError:
        raise ContractError("config key '%s' expects %s, got %r"
                            % (key, want.__name__, text)) from None


def resolve_config(profile, config_path=None, overrides=()):
    """Profile defaults, then config-file values, then --set flags."""
    values = dict(PROFILES[profile])
    if config_path:
        for key, text in parse_config_file(config_path).items():
            values[key] = coerce(key, text)
    for pair in overrides:
        if "=" not in pair:
            raise ContractError("--set expects key=value, got %r" % pair)
        key, text = pair.split("=", 1)
        values[key.strip()] = coerce(key.strip(), text.strip())
    return values


def config_echo_text(values, seed):
    lines = ["%s = %s" % (k, values[k]) for k in sorted(values)]
    lines.append("seed = %d" % seed)
    return "\n".join(lines) + "\n"


def echo_config(values, seed):
    print("resolved configuration:")
    for line in config_echo_text(values, seed).splitlines():
        print("  " + line)


def write_sidecar(out_path, command, values, seed):
    with open(str(out_path) + ".run.txt", "w", encoding="utf-8") as fh:
        fh.write("command = %s\n" % command)
        fh.write(config_echo_text(values, seed))


def resolve_input(path):
    """Literal path, else relative to $MOTIONFLOW_DATA."""
    if os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        alt = os.path.join(base, path)
        if os.path.exists(alt):
            return alt
    raise DegenerateDataError("no such file: %s" % path)


# ---------------------------------------------------------------------------
# control signals

def control_pattern(name, seconds, fps):
    """Named synthetic steering, as per-frame (fwd, lat, rot) deltas."""
    frames = int(round(seconds * fps))
    if frames < 2:
        raise ContractError("pattern needs at least 2 frames")

    def block(sec, fwd, lat, rot):
        n = int(round(sec * fps))
        return np.tile(np.array([fwd, lat, rot]) / fps, (n, 1))

    if name == "straight":
        control = block(seconds, 100.0, 0.0, 0.0)
    elif name == "turn":
        control = block(seconds, 80.0, 0.0, 0.5)
    elif name == "zero":
        control = block(seconds, 0.0, 0.0, 0.0)
    elif name == "stopgo":
        parts = []
        while sum(len(p) for p in parts) < frames:
            parts.append(block(3.0, 100.0, 0.0, 0.0))
            parts.append(block(2.0, 0.0, 0.0, 0.0))
        control = np.concatenate(parts)
    else:
        raise ContractError("unknown control pattern %r; choose from %s"
                            % (name, ", ".join(CONTROL_PATTERNS)))
    control = control[:frames].copy()
    control[0] = 0.0
    return control


def read_control_csv(path, fps):
    """Rows of t, forward, lateral, rotation (cm/s, cm/s, rad/s)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError("non-numeric control row", line=lineno) \
                    from None
            if len(rows[-1]) != 4:
                raise ParseError(
                    "expected 4 columns (t, forward, lateral, rotation), "
                    "got %d" % len(rows[-1]), line=lineno)
    if len(rows) < 2:
        raise DegenerateDataError("control file has %d rows; need at least 2"
                                  % len(rows))
    control = np.asarray(rows, dtype=np.float64)[:, 1:4] / fps
    control[0] = 0.0
    return control


# ---------------------------------------------------------------------------
# subcommands

def cmd_toygen(args):
    spec = default_train_spec(args.seconds)
    clip, meta = generate_toy_walker(spec, seed=args.seed)
    values = {"seconds": args.seconds, "fps": spec.fps,
              "step_count": meta["step_count"],
              "detectable_steps": meta["detectable_steps"]}
    echo_config(values, args.seed)
    container.write_clip(args.out, clip)
    write_sidecar(args.out, "toygen", values, args.seed)
    print("wrote %s (%d frames at %g fps)"
          % (args.out, clip.num_frames, clip.fps))
    return EXIT_OK


def cmd_preprocess(args):
    path = resolve_input(args.bvh)
    with open(path, "r", encoding="utf-8") as fh:
        bvh = parse_bvh(fh.read())
    skel = bvh_skeleton(bvh)
    hip = 0
    if args.hip:
        matches = skel.joints_matching(args.hip)
        if not matches:
            raise DegenerateDataError("no joint name contains %r" % args.hip)
        hip = matches[0]
    values = {"bvh": args.bvh, "fps": args.fps,
              "sigma_frames": args.sigma_frames,
              "hip": skel.names[hip]}
    echo_config(values, args.seed)
    positions = forward_kinematics(bvh)
    world_root, control, poses = extract_root_and_control(
        positions, bvh.fps, sigma_frames=args.sigma_frames, hip_index=hip,
        skeleton=skel)
    clip = MotionClip(bvh.fps, skel, poses, control, world_root)
    if args.fps < bvh.fps - 1e-9:
        clip = downsample(clip, args.fps)
    container.write_clip(args.out, clip)
    write_sidecar(args.out, "preprocess", values, args.seed)
    print("wrote %s (%d frames at %g fps, %d joints)"
          % (args.out, clip.num_frames, clip.fps, skel.num_joints))
    return EXIT_OK


def _split_heldout(clip, frac, min_tail):
    cut = int(round(clip.num_frames * (1.0 - frac)))
    cut = max(2, min(clip.num_frames, cut))
    head = MotionClip(clip.fps, clip.skeleton, clip.poses[:cut],
                      clip.control[:cut],
                      None if clip.world_root is None
                      else clip.world_root[:cut])
    tail = None
    if clip.num_frames - cut >= min_tail:
        tail = (clip.poses[cut:], clip.control[cut:])
    return head, tail


def cmd_train(args):
    values = resolve_config(args.profile, args.config, args.set or [])
    echo_config(values, args.seed)
    clips = [container.read_clip(resolve_input(p)) for p in args.data]
    for clip in clips:
        if clip.control is None:
            raise DegenerateDataError("training clips need control tracks")

    min_tail = values["history"] + 2
    train_clips, heldout_raw = [], []
    for clip in clips:
        head, tail = _split_heldout(clip, values["heldout_frac"], min_tail)
        train_clips.append(head)
        if tail is not None:
            heldout_raw.append(tail)
    if values["augment"] == "mirror":
        train_clips += [mirror(c) for c in train_clips]
    elif values["augment"] == "all":
        train_clips = [x for c in train_clips for x in augment(c)]
    elif values["augment"] != "none":
        raise ContractError("augment must be none, mirror or all")

    resume = None
    if args.resume:
        model, opt_state, extra = load_checkpoint(resolve_input(args.resume))
        scaler = model.scaler
        resume = (opt_state, extra)
    else:
        scaler = fit_scaler(train_clips)
        mcfg = ModelConfig(n_steps=values["n_steps"],
                           history=values["history"],
                           pose_dim=clips[0].pose_dim,
                           control_dim=clips[0].control.shape[1],
                           hidden=values["hidden"],
                           dropout_rate=values["dropout_rate"],
                           eps=values["eps"])
        model = MoGlowModel(mcfg, scaler=scaler,
                            skeleton=clips[0].skeleton,
                            fps=clips[0].fps, seed=args.seed)

    std = [apply_scaler(c, scaler) for c in train_clips]
    windows = build_windows([(c.poses, c.control) for c in std],
                            values["window"], values["overlap"])
    heldout = [(scaler.standardize_poses(p), scaler.standardize_control(c))
               for p, c in heldout_raw]
    tcfg = TrainConfig(steps=values["steps"],
                       batch_size=values["batch_size"],
                       window=values["window"], lr=values["lr"],
                       schedule=values["schedule"], warmup=values["warmup"],
                       seed=args.seed, eval_every=values["eval_every"],
                       grad_clip=values["grad_clip"],
                       target_nll=values["target_nll"],
                       precision=values["precision"])

    print("%d training windows, %d held-out sequences"
          % (windows[0].shape[0], len(heldout)))
    if heldout:
        baseline = gaussian_baseline_nll(np.concatenate(
            [p for p, _ in heldout]))
        print("held-out diagonal-gaussian baseline: %.4f nats/frame/dim"
              % baseline)
    result = train(model, windows, heldout, tcfg, log_path=args.log,
                   resume=resume, progress=print)
    with open(args.out, "wb") as fh:
        fh.write(result.checkpoint)
    write_sidecar(args.out, "train", values, args.seed)
    if result.aborted:
        print("training aborted on a numeric failure after step %d; kept "
              "the last good checkpoint" % result.steps_done)
        return EXIT_NUMERIC
    if result.interrupted:
        print("interrupted; wrote checkpoint at step %d" % result.steps_done)
    done = "best held-out NLL %.4f" % result.best_nll \
        if np.isfinite(result.best_nll) else "no held-out evaluation"
    print("finished %d steps; %s; wrote %s"
          % (result.steps_done, done, args.out))
    return EXIT_OK


def cmd_sample(args):
    model, _, _ = load_checkpoint(resolve_input(args.checkpoint))
    if args.control:
        control = read_control_csv(resolve_input(args.control), model.fps)
        source = args.control
    else:
        control = control_pattern(args.pattern, args.seconds, model.fps)
        source = args.pattern
    values = {"checkpoint": args.checkpoint, "control": source,
              "temperature": args.temperature,
              "frames": len(control), "fps": model.fps}
    echo_config(values, args.seed)
    clip = model.sample_sequence(control, temperature=args.temperature,
                                 seed=args.seed)
    container.write_clip(args.out, clip)
    write_sidecar(args.out, "sample", values, args.seed)
    print("wrote %s (%d frames)" % (args.out, clip.num_frames))
    return EXIT_OK


def _parse_feet(spec_text, skeleton):
    if spec_text == "heels":
        return None  # evaluation picks joints named *heel*
    feet = []
    for part in spec_text.split(","):
        part = part.strip()
        if part.isdigit():
            feet.append(int(part))
            continue
        matches = skeleton.joints_matching(part)
        if not matches:
            raise DegenerateDataError("no joint name contains %r" % part)
        feet += matches
    return feet


def cmd_eval(args):
    clip = container.read_clip(resolve_input(args.clip))
    values = {"clip": args.clip, "feet": args.feet,
              "tol_step": args.tol_step, "max_tol": args.max_tol}
    echo_config(values, args.seed)
    feet = _parse_feet(args.feet, clip.skeleton)
    report = footstep_report(clip, foot_joints=feet,
                             tol_step=args.tol_step, max_tol=args.max_tol)
    text = report_text(report)
    text += "bone_length_rmse_cm\t%.6f\n" % bone_length_rmse(clip)
    text += "stillness_cm_s\t%.6f\n" % stillness_metric(clip)
    print(text, end="")
    if args.out:
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        with open(args.out + ".csv", "w", encoding="utf-8") as fh:
            fh.write(curve_csv(report))
        with open(args.out + ".svg", "w", encoding="utf-8") as fh:
            fh.write(curve_svg(report))
        write_sidecar(args.out, "eval", values, args.seed)
        print("wrote %s.txt, %s.csv, %s.svg"
              % (args.out, args.out, args.out))
    return EXIT_OK


def cmd_serve(args):
    from . import service
    import uvicorn
    app = service.make_app(args.checkpoint_dir)
    values = {"checkpoint_dir": args.checkpoint_dir, "host": args.host,
              "port": args.port}
    echo_config(values, args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing

def build_parser():
    parser = argparse.ArgumentParser(
        prog="motionflow",
        description="Controllable motion synthesis with normalising flows.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help="RNG seed (default %d)" % DEFAULT_SEED)

    p = sub.add_parser("toygen", help="generate synthetic walker data")
    p.add_argument("--seconds", type=float, default=60.0)
    p.add_argument("-o", "--out", required=True)
    common(p)

    p = sub.add_parser("preprocess", help="BVH to canonical motion clip")
    p.add_argument("--bvh", required=True)
    p.add_argument("--fps", type=float, default=20.0,
                   help="target frame rate after downsampling")
    p.add_argument("--sigma-frames", type=float, default=10.0,
                   dest="sigma_frames")
    p.add_argument("--hip", default=None,
                   help="name fragment of the root-tracking joint")
    p.add_argument("-o", "--out", required=True)
    common(p)

    p = sub.add_parser("train", help="train a model on motion clips")
    p.add_argument("--data", action="append", required=True,
                   help="training clip (repeatable)")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    p.add_argument("--log", help="metrics log path (tab separated)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("-o", "--out", required=True)
    common(p)

    p = sub.add_parser("sample", help="sample motion from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--control",
                       help="CSV of t, forward, lateral, rotation")
    group.add_argument("--pattern", choices=CONTROL_PATTERNS,
                       default="straight")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("-o", "--out", required=True)
    common(p)

    p = sub.add_parser("eval", help="footstep / skeleton quality report")
    p.add_argument("--clip", required=True)
    p.add_argument("--feet", default="heels",
                   help="'heels' or comma-separated joint names/indices")
    p.add_argument("--tol-step", type=float, default=1.0, dest="tol_step")
    p.add_argument("--max-tol", type=float, default=40.0, dest="max_tol")
    p.add_argument("-o", "--out", help="report file prefix")
    common(p)

    p = sub.add_parser("serve", help="real-time steering service")
    p.add_argument("--checkpoint-dir", default=".", dest="checkpoint_dir")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    common(p)

    return parser


HANDLERS = {"toygen": cmd_toygen, "preprocess": cmd_preprocess,
            "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "serve": cmd_serve}


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return HANDLERS[args.command](args)
    except (ContractError, DimensionError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CheckpointError, DegenerateDataError,
            UndefinedResultError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
