"""Feature IO, grid conversion, window sampling, synthetic generation."""

import struct

import numpy as np
import pytest

from momentdet.data import (FeatureFileError, FeatureSequence, SyntheticSpec,
                            VideoAnnotation, actions_to_grid,
                            generate_synthetic, load_dataset,
                            load_features_array, resize_fixed, sample_window,
                            save_features, stride_downsample, write_dataset)


def make_seq(t_len, dim=4, stride=1.0, fps=1.0, video_id="v"):
    feats = np.arange(t_len * dim, dtype=np.float32).reshape(t_len, dim)
    return FeatureSequence(video_id, feats, fps, stride)


# ---- binary feature files -----------------------------------------------------

def test_feature_file_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(37, 8)).astype(np.float32)
    path = tmp_path / "x.afmt"
    save_features(path, arr)
    back = load_features_array(path)
    assert back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_feature_file_size_formula(tmp_path):
    path = tmp_path / "x.afmt"
    save_features(path, np.zeros((11, 5), dtype=np.float32))
    assert path.stat().st_size == 16 + 4 * 11 * 5
    # The full-scale case, by the same arithmetic.
    assert 16 + 4 * 2304 * 2048 == 18_874_384


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "x.afmt"
    path.write_bytes(b"NOPE" + b"\x00" * 28)
    with pytest.raises(FeatureFileError, match="magic"):
        load_features_array(path)


def test_feature_file_bad_version(tmp_path):
    path = tmp_path / "x.afmt"
    path.write_bytes(b"AFMT" + struct.pack("<III", 9, 1, 1) + b"\x00" * 4)
    with pytest.raises(FeatureFileError, match="version"):
        load_features_array(path)


def test_feature_file_truncated(tmp_path):
    path = tmp_path / "x.afmt"
    save_features(path, np.zeros((4, 4), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FeatureFileError, match="truncated"):
        load_features_array(path)


def test_feature_file_rejects_non_finite(tmp_path):
    path = tmp_path / "x.afmt"
    arr = np.zeros((3, 3), dtype=np.float32)
    arr[1, 1] = np.nan
    save_features(path, arr)
    with pytest.raises(FeatureFileError, match="finite"):
        load_features_array(path)


def test_feature_file_rejects_empty():
    with pytest.raises(FeatureFileError):
        save_features("/dev/null", np.zeros((0, 4), dtype=np.float32))


# ---- grid conversion ----------------------------------------------------------

def test_actions_to_grid_floor_start_ceil_end():
    seq = make_seq(100, stride=4.0, fps=2.0)  # 1 grid unit = 2 seconds
    ann = VideoAnnotation("v", 200.0, [(3.0, 9.0, 1)])
    # start 3s -> 1.5 grid -> floor 1; end 9s -> 4.5 grid -> ceil 5.
    assert actions_to_grid(ann, seq) == [(1.0, 5.0, 1)]


def test_actions_to_grid_integer_boundaries_exact():
    seq = make_seq(50)
    ann = VideoAnnotation("v", 50.0, [(10.0, 20.0, 0)])
    assert actions_to_grid(ann, seq) == [(10.0, 20.0, 0)]


def test_actions_to_grid_clips_to_sequence():
    seq = make_seq(10)
    ann = VideoAnnotation("v", 100.0, [(8.5, 40.0, 0)])
    assert actions_to_grid(ann, seq) == [(8.0, 10.0, 0)]


def test_annotation_validate():
    with pytest.raises(ValueError):
        VideoAnnotation("v", 10.0, [(5.0, 3.0, 0)]).validate()
    with pytest.raises(ValueError):
        VideoAnnotation("v", 10.0, [(0.0, 5.0, 3)]).validate(num_classes=3)


# ---- window sampling ----------------------------------------------------------

def test_sample_window_pads_short_sequences():
    seq = make_seq(10)
    win = sample_window(seq, [(2.0, 6.0, 0)], 16, np.random.default_rng(0))
    assert win.features.shape == (16, 4)
    assert win.mask.sum() == 10 and win.mask[:10].all()
    assert not win.features[10:].any()
    assert win.actions == [(2.0, 6.0, 0)]


def test_sample_window_exact_length_identity():
    seq = make_seq(16)
    win = sample_window(seq, [(1.0, 4.0, 1)], 16, np.random.default_rng(0))
    assert win.mask.all()
    np.testing.assert_array_equal(win.features, seq.features)


def test_sample_window_crop_contains_action():
    seq = make_seq(100)
    actions = [(40.0, 48.0, 0)]
    for trial in range(20):
        win = sample_window(seq, actions, 32, np.random.default_rng(trial))
        assert win.mask.all()
        assert win.actions, "crop must keep at least one action"
        for s, e, _ in win.actions:
            assert 0.0 <= s < e <= 32.0
            # Window content really is the advertised slice of the source.
            col0 = win.features[:, 0]
            offset = int(col0[0] / 4)
            np.testing.assert_array_equal(
                win.features, seq.features[offset:offset + 32])


def test_sample_window_quarter_survival_rule():
    seq = make_seq(100)
    # Action of length 40; a crop keeping < 10 units must drop it.
    actions = [(0.0, 40.0, 0), (60.0, 70.0, 1)]
    rng = np.random.default_rng(3)
    for _ in range(50):
        win = sample_window(seq, actions, 20, rng)
        for s, e, label in win.actions:
            if label == 0:
                assert e - s >= 0.25 * 40.0


# ---- resizing -----------------------------------------------------------------

def test_resize_fixed_identity():
    seq = make_seq(12)
    assert resize_fixed(seq, 12) is seq


def test_resize_fixed_endpoints_and_stride():
    seq = make_seq(10, stride=2.0)
    out = resize_fixed(seq, 19)
    assert out.features.shape == (19, 4)
    np.testing.assert_allclose(out.features[0], seq.features[0], rtol=1e-6)
    np.testing.assert_allclose(out.features[-1], seq.features[-1], rtol=1e-6)
    assert out.feature_stride == pytest.approx(2.0 * 10 / 19)


def test_stride_downsample_arithmetic():
    seq = make_seq(2304, dim=2, stride=1.0)
    out = stride_downsample(seq, 4)
    assert out.num_steps == 576
    assert out.feature_stride == 4.0
    np.testing.assert_array_equal(out.features, seq.features[::4])
    assert stride_downsample(seq, 1) is seq


# ---- synthetic dataset --------------------------------------------------------

def small_spec(**kw):
    base = dict(num_videos=6, t_range=(48, 64), feature_dim=8, num_classes=3,
                instances_per_video=(1, 3), duration_range=(3.0, 24.0),
                noise_level=0.0, seed=5)
    base.update(kw)
    return SyntheticSpec(**base)


def test_synthetic_deterministic_bitwise():
    a_seqs, a_anns, a_sigs = generate_synthetic(small_spec())
    b_seqs, b_anns, b_sigs = generate_synthetic(small_spec())
    assert np.array_equal(a_sigs, b_sigs)
    for a, b in zip(a_seqs, b_seqs):
        assert a.features.tobytes() == b.features.tobytes()
    assert [x.actions for x in a_anns] == [x.actions for x in b_anns]


def test_synthetic_signatures_unit_norm():
    _, _, sigs = generate_synthetic(small_spec())
    np.testing.assert_allclose(np.linalg.norm(sigs, axis=1), 1.0, rtol=1e-12)


def test_synthetic_noise_free_instances_match_signature():
    seqs, anns, sigs = generate_synthetic(small_spec(noise_level=0.0))
    for seq, ann in zip(seqs, anns):
        assert ann.actions, "every video should contain an instance"
        for s, e, label in ann.actions:
            mid = int((s + e) // 2)
            frame = seq.features[mid].astype(np.float64)
            sims = sigs @ (frame / np.linalg.norm(frame))
            assert int(np.argmax(sims)) == label
        # Background frames are exactly zero without noise.
        occupied = np.zeros(seq.num_steps, dtype=bool)
        for s, e, _ in ann.actions:
            occupied[int(s):int(e)] = True
        assert not seq.features[~occupied].any()


def test_synthetic_instances_disjoint_and_in_range():
    seqs, anns, _ = generate_synthetic(small_spec(seed=9))
    for seq, ann in zip(seqs, anns):
        prev_end = -1.0
        for s, e, label in ann.actions:
            assert 0 <= s < e <= seq.num_steps
            assert s >= prev_end
            prev_end = e
            assert 0 <= label < 3


def test_synthetic_shared_signatures_across_splits():
    spec_a = small_spec(seed=5)
    spec_b = small_spec(seed=6)
    _, _, sigs = generate_synthetic(spec_a)
    _, _, sigs_b = generate_synthetic(spec_b, signatures=sigs)
    assert np.array_equal(sigs, sigs_b)
    with pytest.raises(ValueError):
        generate_synthetic(small_spec(feature_dim=4), signatures=sigs)


def test_synthetic_id_prefix():
    seqs, _, _ = generate_synthetic(small_spec(num_videos=2), id_prefix="test")
    assert [s.video_id for s in seqs] == ["test_0000", "test_0001"]


def test_write_and_load_dataset_roundtrip(tmp_path):
    seqs, anns, _ = generate_synthetic(small_spec(num_videos=3))
    write_dataset(tmp_path, seqs, anns)
    loaded = load_dataset(tmp_path)
    assert [s.video_id for s in loaded] == [s.video_id for s in seqs]
    for a, b in zip(loaded, seqs):
        assert a.features.tobytes() == b.features.tobytes()
        assert a.fps == b.fps and a.feature_stride == b.feature_stride
    assert (tmp_path / "ground_truth.json").exists()
