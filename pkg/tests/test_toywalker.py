import numpy as np
import pytest

from motionflow.data import integrate_control
from motionflow.errors import DegenerateDataError
from motionflow.toywalker import (WalkerSpec, default_train_spec,
                                  generate_toy_walker, walker_skeleton,
                                  HIP, CHEST, HEAD, L_HEEL, R_HEEL)


def world_joints(clip):
    return clip.world_positions().reshape(clip.num_frames, -1, 3)


def heel_speed(clip, joint):
    pos = world_joints(clip)[:, joint, [0, 2]]
    return np.linalg.norm(np.diff(pos, axis=0), axis=1) * clip.fps


# --- skeleton ------------------------------------------------------------

def test_skeleton_structure():
    skel = walker_skeleton()
    assert skel.num_joints == 7
    assert skel.parents[HIP] == -1
    assert np.array_equal(skel.mirror_map[skel.mirror_map],
                          np.arange(7))
    assert skel.mirror_map[L_HEEL] == R_HEEL


def test_skeleton_rest_bone_lengths():
    spec = WalkerSpec([(1.0, 0.0, 0.0)])
    skel = walker_skeleton(spec)
    lengths = skel.bone_lengths()
    assert abs(lengths[CHEST] - spec.chest_len) < 1e-9
    assert abs(lengths[HEAD] - spec.head_len) < 1e-9
    # thigh + shin chains
    assert abs(lengths[3] - spec.thigh) < 1e-9
    assert abs(lengths[4] - spec.shin) < 1e-9


# --- standing ------------------------------------------------------------

def test_standing_profile_never_steps():
    clip, meta = generate_toy_walker(WalkerSpec([(3.0, 0.0, 0.0)]), seed=1)
    assert meta["step_count"] == 0
    assert np.array_equal(clip.world_root, np.zeros((60, 3)))
    assert np.array_equal(clip.control, np.zeros((60, 3)))
    pos = world_joints(clip)
    for heel in (L_HEEL, R_HEEL):
        track = pos[:, heel]
        assert np.abs(track - track[0]).max() < 1e-9
        assert np.abs(track[:, 1]).max() < 1e-9


# --- steady walk ---------------------------------------------------------

@pytest.fixture(scope="module")
def steady():
    spec = WalkerSpec([(10.0, 100.0, 0.0)])
    return generate_toy_walker(spec, seed=2)


def test_steady_walk_step_rate(steady):
    clip, meta = steady
    # stride 50 cm at 100 cm/s: very close to 2 plants per second
    rate = meta["step_count"] / 10.0
    assert abs(rate - 2.0) <= 0.2


def test_steady_walk_travels_forward(steady):
    clip, _ = steady
    # 0.5 s acceleration ramp costs 25 cm of the nominal 1000
    assert abs(clip.world_root[-1, 1] - 975.0) < 5.0
    assert np.abs(clip.world_root[:, 0]).max() < 1e-9
    assert np.abs(clip.world_root[:, 2]).max() < 1e-9


def test_stance_frames_are_exactly_still(steady):
    clip, meta = steady
    pos = world_joints(clip)
    for name, joint in (("left", L_HEEL), ("right", R_HEEL)):
        speeds = heel_speed(clip, joint)
        for a, b in meta["stance_intervals"][name]:
            if b - a < 2:
                continue
            track = pos[a:b, joint]
            assert np.array_equal(track, np.tile(track[0], (b - a, 1)))
            assert np.abs(track[:, 1]).max() == 0.0
            assert np.abs(speeds[a:b - 1]).max() < 1e-9


def test_swing_frames_clear_the_floor(steady):
    clip, meta = steady
    pos = world_joints(clip)
    spec = WalkerSpec([(10.0, 100.0, 0.0)])
    for name, joint in (("left", L_HEEL), ("right", R_HEEL)):
        ivs = meta["stance_intervals"][name]
        for (_, lift), (land, _) in zip(ivs[:-1], ivs[1:]):
            swing_y = pos[lift:land, joint, 1]
            assert swing_y.min() > 0.0
            assert swing_y.max() <= spec.swing_height + 1e-9


def test_stance_intervals_partition_per_foot(steady):
    clip, meta = steady
    for ivs in meta["stance_intervals"].values():
        flat = [f for iv in ivs for f in iv]
        assert flat == sorted(flat)
        assert all(0 <= a < b <= clip.num_frames for a, b in ivs)


def test_integration_identity(steady):
    clip, _ = steady
    rebuilt = integrate_control(clip.world_root[0], clip.control)
    assert np.abs(rebuilt - clip.world_root).max() < 1e-9


# --- geometry ------------------------------------------------------------

def test_bone_lengths_exact_without_jitter():
    spec = WalkerSpec([(4.0, 100.0, 0.3), (2.0, 0.0, 0.0)], jitter=0.0)
    clip, _ = generate_toy_walker(spec, seed=3)
    pos = world_joints(clip)
    skel = clip.skeleton
    rest = skel.bone_lengths()
    for child in range(1, 7):
        seen = np.linalg.norm(pos[:, child] - pos[:, skel.parents[child]],
                              axis=1)
        assert np.abs(seen - rest[child]).max() < 1e-9


def test_jitter_never_touches_heels():
    spec = WalkerSpec([(4.0, 80.0, 0.0)])
    a, _ = generate_toy_walker(spec, seed=4)
    b, _ = generate_toy_walker(spec, seed=5)
    pa, pb = world_joints(a), world_joints(b)
    assert np.array_equal(pa[:, [L_HEEL, R_HEEL]], pb[:, [L_HEEL, R_HEEL]])
    assert not np.array_equal(pa[:, HIP], pb[:, HIP])


def test_same_seed_is_bitwise_deterministic():
    spec = default_train_spec(20.0)
    a, _ = generate_toy_walker(spec, seed=6)
    b, _ = generate_toy_walker(spec, seed=6)
    assert np.array_equal(a.poses, b.poses)
    assert np.array_equal(a.control, b.control)
    assert np.array_equal(a.world_root, b.world_root)


def test_overspeed_profile_rejected():
    with pytest.raises(DegenerateDataError):
        generate_toy_walker(WalkerSpec([(2.0, 200.0, 0.0)]), seed=7)


def test_turning_walk_changes_heading():
    spec = WalkerSpec([(6.0, 80.0, 0.5)])
    clip, meta = generate_toy_walker(spec, seed=8)
    assert clip.world_root[-1, 2] > 2.0
    assert meta["step_count"] > 6


# --- stops ---------------------------------------------------------------

def test_walk_stop_walk_pauses_the_gait():
    spec = WalkerSpec([(3.0, 100.0, 0.0), (2.0, 0.0, 0.0),
                       (3.0, 100.0, 0.0)])
    clip, meta = generate_toy_walker(spec, seed=9)
    # stop interior: root frozen
    stop = slice(75, 95)
    root = clip.world_root
    assert np.abs(root[stop] - root[75]).max() < 1e-9
    durations = np.array(meta["stance_durations_s"])
    assert durations.max() > 1.5  # a stance spanning the stop
    assert (np.abs(durations - 0.5) < 0.11).sum() >= 6  # walking stances


def test_resume_lifts_the_staler_foot_first():
    spec = WalkerSpec([(2.0, 100.0, 0.0), (2.0, 0.0, 0.0),
                       (2.0, 100.0, 0.0)])
    clip, meta = generate_toy_walker(spec, seed=10)
    ends = {name: max(b for _, b in ivs)
            for name, ivs in meta["stance_intervals"].items()}
    # both feet keep stepping after the stop
    assert min(ends.values()) > 80
