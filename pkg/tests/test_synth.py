import numpy as np
import pytest

from bhmmdiar import ahc
from bhmmdiar import plda
from bhmmdiar import synth
from bhmmdiar import common
from bhmmdiar import framevb
from bhmmdiar import corpus_io


def test_sample_recording_deterministic():
    model = synth.random_plda_model(8, 10.0, seed=3)
    rec_a, labels_a = synth.sample_recording(model, 3, 50, 0.9, seed=7)
    rec_b, labels_b = synth.sample_recording(model, 3, 50, 0.9, seed=7)
    rec_c, _ = synth.sample_recording(model, 3, 50, 0.9, seed=8)

    np.testing.assert_array_equal(rec_a.vectors, rec_b.vectors)
    np.testing.assert_array_equal(labels_a, labels_b)
    assert not np.array_equal(rec_a.vectors, rec_c.vectors)


def test_sample_recording_layout():
    model = synth.random_plda_model(4, 10.0, seed=0)
    rec, labels = synth.sample_recording(model, 4, 20, 0.5, seed=1, recording_id="abc")
    assert rec.recording_id == "abc"
    assert rec.dim == 4
    assert rec.vectors.shape == (20, 4)
    assert len(labels) == 20
    assert labels[0] == 0
    assert set(labels) <= set(range(4))
    for idx, (onset, duration) in enumerate(rec.spans):
        assert onset == pytest.approx(idx * synth.SEGMENT_SHIFT)
        assert duration == pytest.approx(synth.SEGMENT_WINDOW)


def test_single_speaker():
    model = synth.random_plda_model(4, 10.0, seed=0)
    _, labels = synth.sample_recording(model, 1, 100, 0.1, seed=2)
    assert np.all(labels == 0)


def test_invalid_speaker_count():
    model = synth.random_plda_model(4, 10.0, seed=0)
    with pytest.raises(common.ConfigError):
        synth.sample_recording(model, 0, 10, 0.9, seed=0)
    with pytest.raises(common.ConfigError):
        synth.sample_frame_recording(synth.random_eigenvoice_model(2, 2, 1, seed=0), 0, 10, 0.9, seed=0)


def test_zero_within_class_noise():
    model = synth.random_plda_model(5, 10.0, seed=4)
    model = model._replace(within_class=np.zeros((5, 5)))
    rec, labels = synth.sample_recording(model, 3, 60, 0.8, seed=5)
    for label in set(labels):
        vecs = rec.vectors[labels == label]
        np.testing.assert_allclose(vecs, np.broadcast_to(vecs[0], vecs.shape), atol=1e-12)


def test_zero_noise_partition_recovered_by_ahc():
    model = synth.random_plda_model(5, 10.0, seed=4)._replace(within_class=np.zeros((5, 5)))
    rec, labels = synth.sample_recording(model, 4, 40, 0.7, seed=6)
    x = rec.vectors
    sim = common.SimilarityMatrix(-np.sum((x[:, np.newaxis] - x[np.newaxis]) ** 2, axis=-1))
    np.testing.assert_array_equal(ahc.upgma_cluster(sim, -1e-6), labels)


def test_loop_probability_one_keeps_speaker():
    model = synth.random_plda_model(4, 10.0, seed=0)
    _, labels = synth.sample_recording(model, 5, 80, 1.0, seed=9)
    assert np.all(labels == 0)


def test_total_covariance():
    dim = 3
    model = synth.random_plda_model(dim, 4.0, seed=6)
    samples = np.array([
        synth.sample_recording(model, 1, 1, 0.9, seed=seed)[0].vectors[0]
        for seed in synth.spawn_seeds(11, 2000)
    ])
    expected = model.across_class + model.within_class
    np.testing.assert_allclose(samples.mean(axis=0), model.mean, atol=0.3)
    cov = np.cov(samples, rowvar=False)
    np.testing.assert_allclose(np.diag(cov), np.diag(expected), rtol=0.15)
    off_diag = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off_diag)) < 0.8


def test_within_class_covariance():
    model = synth.random_plda_model(4, 10.0, seed=1)
    rec, _ = synth.sample_recording(model, 1, 4000, 0.9, seed=3)
    resid = rec.vectors - rec.vectors.mean(axis=0)
    np.testing.assert_allclose(np.cov(resid, rowvar=False), np.eye(4), atol=0.1)


def test_sample_frame_recording():
    model = synth.random_eigenvoice_model(4, 3, 2, seed=0)
    frames, labels = synth.sample_frame_recording(model, 2, 300, 0.99, seed=1)
    assert frames.shape == (300, 3)
    assert labels.shape == (300,)
    assert set(labels) <= {0, 1}
    again, _ = synth.sample_frame_recording(model, 2, 300, 0.99, seed=1)
    np.testing.assert_array_equal(frames, again)


def test_speaker_frame_means_shift():
    model = synth.random_eigenvoice_model(3, 2, 2, seed=5)
    coords = np.array([[0.0, 0.0], [1.0, -1.0]])
    means = synth.speaker_frame_means(model, coords)
    assert means.shape == (2, 3, 2)
    np.testing.assert_allclose(means[0], model.means)
    shift = (model.V @ coords[1]).reshape(3, 2)
    np.testing.assert_allclose(means[1], model.means + shift)


def test_write_synthetic_corpus(tmp_path):
    corpus = synth.write_synthetic_corpus(
        tmp_path, n_recordings=2, n_speakers=2, n_segments=30, dim=6, seed=4
    )
    assert corpus.recording_ids == ["rec000", "rec001"]
    assert corpus.features_dir is None
    assert not (tmp_path / "eigenvoice.csv").exists()

    model = plda.load_model(corpus.plda)
    assert model.dim == 6
    refs = corpus_io.read_rttm_corpus(corpus.reference)
    assert sorted(refs) == corpus.recording_ids

    for rec_id in corpus.recording_ids:
        rec = corpus_io.read_embeddings(corpus.embeddings_dir / f"{rec_id}.csv")
        assert rec.vectors.shape == (30, 6)
        regions = corpus_io.read_vad(corpus.vad_dir / f"{rec_id}.lab")
        assert len(regions) == 1
        assert regions[0].onset == 0.0
        ref_end = max(seg.offset for seg in refs[rec_id].segments)
        assert regions[0].offset == pytest.approx(ref_end)


def test_write_synthetic_corpus_deterministic(tmp_path):
    synth.write_synthetic_corpus(tmp_path / "a", n_recordings=2, n_segments=20, seed=5)
    synth.write_synthetic_corpus(tmp_path / "b", n_recordings=2, n_segments=20, seed=5)
    for name in ("ref.rttm", "plda.csv", "embeddings/rec000.csv", "embeddings/rec001.csv", "vad/rec001.lab"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()


def test_write_synthetic_corpus_with_frames(tmp_path):
    eigenvoice = synth.random_eigenvoice_model(4, 3, 2, seed=0)
    corpus = synth.write_synthetic_corpus(
        tmp_path, n_recordings=1, n_speakers=2, n_segments=12, dim=4, seed=1, eigenvoice=eigenvoice
    )
    assert corpus.features_dir is not None
    loaded = framevb.load_eigenvoice_model(tmp_path / "eigenvoice.csv")
    np.testing.assert_allclose(loaded.V, eigenvoice.V)

    frames = corpus_io.read_frame_features(corpus.features_dir / "rec000.csv")
    # 11 shifts of 0.25 s plus a 1.5 s window at 100 frames per second
    assert abs(frames.shape[0] - 425) <= 1
    assert frames.shape[1] == 3


def test_sample_gaussian_diagonal_is_scaled_standard_normal():
    mean = np.array([1.0, -2.0, 0.5])
    cov = np.diag([4.0, 0.25, 0.0])
    samples = synth.sample_gaussian(synth.make_rng(12), mean, cov, 5)
    expected = mean + synth.make_rng(12).standard_normal((5, 3)) * np.array([2.0, 0.5, 0.0])
    np.testing.assert_array_equal(samples, expected)


def test_sample_gaussian_full_covariance():
    cov = np.array([[2.0, 1.2], [1.2, 1.0]])
    samples = synth.sample_gaussian(synth.make_rng(13), np.zeros(2), cov, 20000)
    assert samples.shape == (20000, 2)
    np.testing.assert_allclose(np.cov(samples, rowvar=False), cov, atol=0.08)


def test_sample_recording_known_values():
    model = common.PldaModel(np.zeros(2), np.eye(2), np.zeros((2, 2)))
    rec, _ = synth.sample_recording(model, 1, 3, 0.9, seed=14)
    rng = synth.make_rng(14)
    synth._speaker_chain(rng, 1, 3, 0.9)
    speaker = rng.standard_normal((1, 2))
    np.testing.assert_array_equal(rec.vectors, np.repeat(speaker, 3, axis=0))
