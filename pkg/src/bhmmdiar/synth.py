# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Synthetic recordings sampled from known PLDA, HMM and eigenvoice models.

Every sampler takes an integer seed and draws from a Philox4x64-10
counter based generator, so output is bit identical across runs and
platforms. Independent streams are derived with SeedSequence.spawn.
"""

import math
import logging
import typing as typ

import numpy as np
import pathlib2 as pl

from . import plda
from . import utils
from . import common
from . import framevb
from . import corpus_io


logger = logging.getLogger(__name__)


SEGMENT_SHIFT = 0.25

SEGMENT_WINDOW = 1.5

DEFAULT_FRAME_RATE = 100.0

Seed = typ.Union[int, np.random.SeedSequence]


def make_rng(seed: Seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed: int, n: int) -> typ.List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _speaker_chain(
    rng: np.random.Generator, n_speakers: int, length: int, loop_probability: float
) -> np.ndarray:
    """First order Markov chain: stay with loop_probability, else switch uniformly to another speaker."""
    labels = np.empty(length, dtype=int)
    if length == 0:
        return labels
    labels[0] = rng.integers(n_speakers)
    stays = rng.random(length) < loop_probability
    jumps = rng.integers(1, max(n_speakers, 2), size=length)
    for t in range(1, length):
        if stays[t] or n_speakers == 1:
            labels[t] = labels[t - 1]
        else:
            labels[t] = (labels[t - 1] + jumps[t]) % n_speakers
    return labels


def sample_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, size: int) -> np.ndarray:
    """size draws from N(mean, cov).

    Diagonal covariances scale standard normal draws directly and involve
    no LAPACK call, so the output is the same on every platform. Full
    covariances go through an eigendecomposition.
    """
    cov = np.asarray(cov, dtype=float)
    if np.array_equal(cov, np.diag(np.diag(cov))):
        std_dev = np.sqrt(np.diag(cov))
        return mean + rng.standard_normal((size, len(std_dev))) * std_dev
    return rng.multivariate_normal(mean, cov, size=size, method="eigh")


def sample_recording(
    model: common.PldaModel,
    n_speakers: int,
    n_segments: int,
    loop_probability: float,
    seed: Seed,
    recording_id: str = "synth",
) -> typ.Tuple[common.RecordingEmbeddings, common.ClusterLabels]:
    """Embeddings on a 0.25 s grid with their generating speaker labels."""
    if n_speakers < 1:
        raise common.ConfigError(f"n_speakers must be positive, got {n_speakers}")
    rng = make_rng(seed)
    labels = _speaker_chain(rng, n_speakers, n_segments, loop_probability)
    means = sample_gaussian(rng, model.mean, model.across_class, n_speakers)
    noise = sample_gaussian(rng, np.zeros(model.dim), model.within_class, n_segments)
    vectors = means[labels] + noise

    spans: typ.List[corpus_io.Span] = []
    if n_segments:
        region = common.SpeechRegion(0.0, (n_segments - 1) * SEGMENT_SHIFT + SEGMENT_WINDOW)
        spans = corpus_io.uniform_subsegmentation([region], SEGMENT_WINDOW, SEGMENT_SHIFT)
    assert len(spans) == n_segments
    segments = [
        common.SegmentEmbedding(onset, duration, vectors[idx])
        for idx, (onset, duration) in enumerate(spans)
    ]
    rec = common.RecordingEmbeddings(recording_id, model.dim, segments)
    return rec, utils.relabel_first_appearance(labels)


def speaker_frame_means(model: common.EigenvoiceModel, coords: np.ndarray) -> np.ndarray:
    """Component means shifted by each speaker's eigenvoice coordinate, S x C x F."""
    shifts = coords @ model.V.T
    return model.means[np.newaxis] + shifts.reshape(len(coords), model.n_components, model.feat_dim)


def sample_frames_for_labels(
    model: common.EigenvoiceModel,
    coords: np.ndarray,
    frame_labels: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    spk_means = speaker_frame_means(model, coords)
    comps = rng.choice(model.n_components, size=len(frame_labels), p=model.weights)
    noise = rng.standard_normal((len(frame_labels), model.feat_dim))
    return spk_means[frame_labels, comps] + noise * np.sqrt(model.diag_covs[comps])


def sample_frame_recording(
    model: common.EigenvoiceModel,
    n_speakers: int,
    n_frames: int,
    loop_probability: float,
    seed: Seed,
) -> typ.Tuple[np.ndarray, common.ClusterLabels]:
    if n_speakers < 1:
        raise common.ConfigError(f"n_speakers must be positive, got {n_speakers}")
    rng = make_rng(seed)
    labels = _speaker_chain(rng, n_speakers, n_frames, loop_probability)
    coords = rng.standard_normal((n_speakers, model.rank))
    return sample_frames_for_labels(model, coords, labels, rng), labels


def random_plda_model(dim: int, separation: float, seed: int) -> common.PldaModel:
    """Diagonal across-class covariance around `separation`, identity within-class."""
    rng = make_rng(seed)
    mean = rng.normal(0.0, 1.0, size=dim)
    across = np.diag(separation * rng.uniform(0.5, 1.5, size=dim))
    return common.PldaModel(mean, across, np.eye(dim))


def random_eigenvoice_model(
    n_components: int, feat_dim: int, rank: int, seed: int, spread: float = 1.0
) -> common.EigenvoiceModel:
    rng = make_rng(seed)
    weights = rng.uniform(0.5, 1.5, size=n_components)
    weights /= weights.sum()
    means = rng.normal(0.0, 3.0, size=(n_components, feat_dim))
    diag_covs = rng.uniform(0.5, 1.5, size=(n_components, feat_dim))
    v_mat = rng.normal(0.0, spread, size=(n_components * feat_dim, rank))
    return common.EigenvoiceModel(weights, means, diag_covs, v_mat)


class SyntheticCorpus(typ.NamedTuple):

    recording_ids: typ.List[str]
    embeddings_dir: pl.Path
    vad_dir: pl.Path
    reference: pl.Path
    plda: pl.Path
    features_dir: typ.Optional[pl.Path]


def _frame_labels(hyp: common.DiarizationHypothesis, n_frames: int, frame_rate: float) -> np.ndarray:
    speakers = {name: idx for idx, name in enumerate(sorted(hyp.speakers))}
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    labels = np.zeros(n_frames, dtype=int)
    for seg in sorted(hyp.segments, key=lambda s: s.onset, reverse=True):
        labels[(centers >= seg.onset) & (centers < seg.offset)] = speakers[seg.speaker]
    return labels


def write_synthetic_corpus(
    out_dir: corpus_io.PathLike,
    n_recordings: int = 3,
    n_speakers: int = 3,
    n_segments: int = 200,
    dim: int = 16,
    separation: float = 25.0,
    loop_probability: float = 0.9,
    seed: int = 0,
    eigenvoice: common.EigenvoiceModel = None,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> SyntheticCorpus:
    """Embeddings, reference RTTM, VAD and the generating PLDA model.

    With an eigenvoice model, frame features are sampled along the
    reference speaker turns as well.
    """
    out_dir = pl.Path(out_dir)
    emb_dir = out_dir / "embeddings"
    vad_dir = out_dir / "vad"
    feat_dir = out_dir / "features" if eigenvoice is not None else None
    for path in (emb_dir, vad_dir, feat_dir):
        if path is not None:
            path.mkdir(parents=True, exist_ok=True)

    model = random_plda_model(dim, separation, seed)
    plda.save_model(model, out_dir / "plda.csv")
    if eigenvoice is not None:
        framevb.save_eigenvoice_model(eigenvoice, out_dir / "eigenvoice.csv")

    rec_ids = [f"rec{idx:03d}" for idx in range(n_recordings)]
    references = []
    for rec_id, rec_seed in zip(rec_ids, spawn_seeds(seed, n_recordings)):
        emb_seed, frame_seed = rec_seed.spawn(2)
        rec, labels = sample_recording(model, n_speakers, n_segments, loop_probability, emb_seed, rec_id)
        corpus_io.write_embeddings(rec, emb_dir / f"{rec_id}.csv")
        ref = corpus_io.labels_to_hypothesis(rec_id, rec.spans, labels)
        references.append(ref)
        end = max(seg.offset for seg in ref.segments)
        corpus_io.write_vad([common.SpeechRegion(0.0, end)], vad_dir / f"{rec_id}.lab")

        if eigenvoice is not None and feat_dir is not None:
            rng = make_rng(frame_seed)
            coords = rng.standard_normal((n_speakers, eigenvoice.rank))
            frame_labels = _frame_labels(ref, int(math.floor(end * frame_rate)), frame_rate)
            frames = sample_frames_for_labels(eigenvoice, coords, frame_labels, rng)
            corpus_io.write_csv_rows(feat_dir / f"{rec_id}.csv", frames)

    corpus_io.write_rttm_corpus(references, out_dir / "ref.rttm")
    logger.info(f"wrote {n_recordings} synthetic recording(s) to {out_dir}")
    return SyntheticCorpus(rec_ids, emb_dir, vad_dir, out_dir / "ref.rttm", out_dir / "plda.csv", feat_dir)
