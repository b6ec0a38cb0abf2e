import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgesture.synthdata import (
    SkeletonSpec,
    bone_lengths,
    csv_header,
    forward_kinematics,
    generate_clip,
    inverse_kinematics,
    make_dataset,
    read_csv,
    split_sizes,
    write_csv,
)

SPEC = SkeletonSpec()
LENGTHS = np.array(SPEC.bone_lengths)


@pytest.fixture(scope="module")
def small():
    return make_dataset(100, seed=3)


# ---------------------------------------------------------------- kinematics


def test_straight_chain_along_x():
    pos = forward_kinematics(np.zeros(4))
    assert np.allclose(pos[:, 0], np.concatenate([[0], np.cumsum(LENGTHS)]), atol=0)
    assert np.all(pos[:, 1] == 0)


def test_quarter_turn_puts_chain_on_y():
    pos = forward_kinematics(np.array([np.pi / 2, 0, 0, 0]))
    assert np.allclose(pos[:, 0], 0, atol=1e-15)
    assert np.allclose(pos[:, 1], np.concatenate([[0], np.cumsum(LENGTHS)]), atol=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_fk_is_an_isometry(seed):
    ang = np.random.default_rng(seed).uniform(-np.pi, np.pi, size=(7, 4))
    assert np.abs(bone_lengths(forward_kinematics(ang)) - LENGTHS).max() < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_ik_inverts_fk(seed):
    ang = np.random.default_rng(seed).uniform(-3, 3, size=(5, 4))
    assert np.allclose(inverse_kinematics(forward_kinematics(ang)), ang, atol=1e-10)


def test_fk_shape_error_and_skeleton_validation():
    with pytest.raises(ValueError):
        forward_kinematics(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        SkeletonSpec((1.0, 0.0))
    with pytest.raises(ValueError):
        SkeletonSpec(())


# ---------------------------------------------------------------- clips


def test_generate_clip_is_deterministic():
    a, ta = generate_clip(42, 1)
    b, tb = generate_clip(42, 1)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert ta.key() == tb.key()


def test_generate_clip_invariants():
    for seed in range(40):
        clip, track = generate_clip(seed, seed % 4)
        assert clip.positions.shape == (80, 5, 2) and clip.frames == 80
        assert np.abs(bone_lengths(clip.positions) - LENGTHS).max() < 1e-9
        assert np.allclose(forward_kinematics(clip.angles), clip.positions, atol=0)
        env = track.beat_envelope
        assert env.min() >= 0 and env.max() <= 1
        for b in track.beat_frames:
            assert env[b] > env[b - 1] and env[b] > env[b + 1]
        assert np.array_equal(track.seed_frames, clip.positions[:8])


def test_beats_are_kinematically_visible():
    for seed in range(200):
        clip, track = generate_clip(seed, seed % 4)
        speed = np.abs(np.diff(clip.angles, axis=0)).mean(axis=1)
        med = np.median(speed)
        for b in track.beat_frames:
            lo, hi = max(b - 2, 0), min(b + 2, speed.size - 1)
            assert speed[lo : hi + 1].max() > med


def test_styles_are_distinguishable():
    # frozen after the first run of the generator: the smallest pairwise
    # gap over 50 seeds is well above 0.1 rad
    gaps = []
    for seed in range(50):
        a, _ = generate_clip(seed, 0)
        b, _ = generate_clip(seed, 1)
        gaps.append(np.abs(a.angles - b.angles).mean())
    assert min(gaps) > 0.1


@pytest.mark.parametrize("style", [-1, 4, 9])
def test_invalid_style(style):
    with pytest.raises(ValueError):
        generate_clip(0, style)


def test_invalid_seed_frames():
    with pytest.raises(ValueError):
        generate_clip(0, 0, N=10, seed_frames=10)


# ---------------------------------------------------------------- datasets


def test_split_sizes():
    assert make_dataset(100)["train"].positions.shape[0] == 80
    d = make_dataset(100)
    assert (len(d["train"]), len(d["val"]), len(d["test"])) == (80, 10, 10)
    assert split_sizes(1000, (0.8, 0.1, 0.1)) == (800, 100, 100)
    with pytest.raises(ValueError):
        split_sizes(9, (0.8, 0.1, 0.1))
    with pytest.raises(ValueError):
        split_sizes(10, (1.0, 0.0, 0.0))


def test_dataset_determinism_and_disjointness(small):
    again = make_dataset(100, seed=3)
    for k in ("train", "val", "test"):
        assert again[k].positions.tobytes() == small[k].positions.tobytes()
    ids = [set(small[k].clip_ids.tolist()) for k in ("train", "val", "test")]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert make_dataset(100, seed=4)["train"].positions.tobytes() != small["train"].positions.tobytes()


@pytest.mark.parametrize("count", [100, 1000, 37])
def test_style_balance(count):
    for split in make_dataset(count).values():
        hist = np.bincount(split.styles, minlength=4)
        assert np.abs(hist - len(split) / 4).max() <= 1


def test_features_and_tracks(small):
    tr = small["train"]
    assert tr.features().shape == (80, 80, 10)
    t = tr.track(5)
    assert t.style_id == tr.styles[5]
    assert np.array_equal(t.seed_frames, tr.positions[5, :8])
    sub = tr.subset([3, 1])
    assert np.array_equal(sub.clip_ids, tr.clip_ids[[3, 1]])


def test_csv_round_trip(tmp_path, small):
    ds = small["val"]
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    back = read_csv(path)
    assert back.positions.tobytes() == ds.positions.tobytes()
    assert back.envelopes.tobytes() == ds.envelopes.tobytes()
    assert np.array_equal(back.styles, ds.styles) and np.array_equal(back.clip_ids, ds.clip_ids)
    assert all(np.array_equal(a, b) for a, b in zip(back.beat_frames, ds.beat_frames))
    with path.open() as fh:
        assert fh.readline().strip().split(",") == csv_header(5)


def test_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_csv(p)
