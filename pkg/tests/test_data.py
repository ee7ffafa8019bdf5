import numpy as np
import pytest

from dynavsr.data import (DatasetError, scan_dataset, sample_training_window, substream, synthetic_sequence,
                          task_batches, to_numpy, to_tensor, write_synthetic_dataset)
from dynavsr.degrade import write_frames


@pytest.fixture
def two_seqs(tmp_path):
    write_synthetic_dataset(tmp_path, 2, seed=0, frames=7, size=32)
    return tmp_path


def test_scan(two_seqs):
    m = scan_dataset(two_seqs, "train", patch_size=16)
    assert [e.id for e in m.entries] == ["seq0000", "seq0001"]
    assert [e.frame_count for e in m.entries] == [7, 7]
    assert (m.entries[0].height, m.entries[0].width) == (32, 32)
    assert scan_dataset(two_seqs, "train", patch_size=16) == m


def test_scan_errors(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        scan_dataset(tmp_path / "missing")
    with pytest.raises(DatasetError, match="no frame sequences"):
        scan_dataset(tmp_path)
    write_frames(np.zeros((5, 16, 16, 3)), tmp_path / "bad")
    write_frames(np.zeros((1, 8, 8, 3)), tmp_path / "tmp")
    (tmp_path / "tmp" / "00000000.png").rename(tmp_path / "bad" / "00000009.png")
    with pytest.raises(DatasetError, match="'bad'.*mixed"):
        scan_dataset(tmp_path, patch_size=8)


def test_scan_rejects_short_sequences_and_bad_patch(two_seqs):
    with pytest.raises(DatasetError, match="needs at least"):
        scan_dataset(two_seqs, frames_per_sample=9, patch_size=16)
    with pytest.raises(DatasetError, match="divisible"):
        scan_dataset(two_seqs, patch_size=18)


def test_full_frame_patch_is_the_raw_window(two_seqs):
    m = scan_dataset(two_seqs, "train", patch_size=32, frames_per_sample=7)
    w = sample_training_window(m, np.random.default_rng(0))
    assert any(np.array_equal(w.frames, m.load(e.id)) for e in m.entries)


def test_sampling_is_seeded(two_seqs):
    m = scan_dataset(two_seqs, "train", patch_size=16)
    a = sample_training_window(m, substream(3, "patch"))
    b = sample_training_window(m, substream(3, "patch"))
    assert np.array_equal(a.frames, b.frames)
    assert a.frames.shape == (5, 16, 16, 3)


def test_sequence_choice_is_uniform(tmp_path):
    write_frames(np.full((7, 16, 16, 3), 0.2), tmp_path / "dark")
    write_frames(np.full((9, 16, 16, 3), 0.8), tmp_path / "light")
    m = scan_dataset(tmp_path, "train", patch_size=8)
    rng = np.random.default_rng(1)
    dark = sum(sample_training_window(m, rng).frames[0, 0, 0, 0] < 0.5 for _ in range(10_000))
    assert abs(dark / 10_000 - 0.5) < 0.02


def test_substreams_are_independent_and_stable():
    assert substream(0, "kernel").random() == substream(0, "kernel").random()
    assert substream(0, "kernel").random() != substream(0, "patch").random()
    assert substream(0, "kernel").random() != substream(1, "kernel").random()


def test_task_batches_skip_resumes_the_stream(two_seqs):
    m = scan_dataset(two_seqs, "train", patch_size=16)
    modes = ("direct", "bicubic_after_blur")
    full = task_batches(m, 0, 2, kernel_size=5, modes=modes)
    batches = [next(full) for _ in range(3)]
    resumed = next(task_batches(m, 0, 2, kernel_size=5, modes=modes, skip=2))
    assert all(np.array_equal(a.slr, b.slr) for a, b in zip(batches[2], resumed))
    assert batches[0][0].lr.shape == (5, 3, 8, 8) and batches[0][0].slr.shape == (5, 3, 4, 4)


def test_tensor_layout_round_trip():
    x = np.random.default_rng(2).random((3, 4, 5, 3))
    t = to_tensor(x)
    assert tuple(t.shape) == (3, 3, 4, 5)
    np.testing.assert_allclose(to_numpy(t), x, atol=1e-7)


def test_synthetic_sequence_translates():
    seq = synthetic_sequence(np.random.default_rng(3), frames=5, size=24)
    assert seq.shape == (5, 24, 24, 3)
    assert 0 <= seq.min() and seq.max() <= 1
