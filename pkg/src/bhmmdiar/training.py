# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Supervised training of the PLDA model and the overlap detector.

Training embeddings are labelled from a reference RTTM and go through the
same centering, whitening and length normalization as at diarization
time.
"""

import glob
import logging
import typing as typ

import numpy as np
import pathlib2 as pl

from . import plda
from . import common
from . import overlap
from . import corpus_io
from . import transforms


logger = logging.getLogger(__name__)


PLDA_ITERATIONS = 10

# Class labels are the recording id and the reference speaker joined by this.
CLASS_SEPARATOR = ":"


class TrainingSet(typ.NamedTuple):

    # N x D centered, whitened and length normalized embeddings
    vectors: np.ndarray
    # PLDA class of every row, None for rows without reference speech
    classes: typ.List[typ.Optional[str]]
    # 0/1 overlap label of every row
    overlapped: np.ndarray
    whiten: common.AffineTransform


def span_speakers(
    spans: typ.Sequence[corpus_io.Span], reference: common.DiarizationHypothesis
) -> typ.List[typ.Optional[str]]:
    """Reference speaker with the most speech inside each span.

    Ties go to the speaker that sorts first, spans without reference
    speech get None.
    """
    speakers = sorted(reference.speakers)
    index = {name: idx for idx, name in enumerate(speakers)}
    result: typ.List[typ.Optional[str]] = []
    for onset, duration in spans:
        offset = onset + duration
        covered = np.zeros(len(speakers))
        for seg in reference.segments:
            covered[index[seg.speaker]] += max(0.0, min(offset, seg.offset) - max(onset, seg.onset))
        if not np.any(covered > 0):
            result.append(None)
            continue
        result.append(speakers[int(np.argmax(covered))])
    return result


def _expand_globs(patterns: typ.Sequence[str]) -> typ.List[pl.Path]:
    return [pl.Path(path) for pattern in patterns for path in sorted(glob.glob(pattern))]


def load_training_set(
    embedding_globs: typ.Sequence[str],
    reference_path: corpus_io.PathLike,
    whiten_globs: typ.Sequence[str] = (),
) -> TrainingSet:
    """Embeddings of every matched file labelled from the reference.

    The whitening transform is estimated on the files matched by
    whiten_globs, or on the training files when none are given.
    """
    paths = _expand_globs(embedding_globs)
    if not paths:
        raise common.EmptyInputError(f"no embedding files match {', '.join(embedding_globs)}")
    refs = corpus_io.read_rttm_corpus(reference_path)

    recs = []
    for path in paths:
        rec = corpus_io.read_embeddings(path)
        if rec.recording_id not in refs:
            logger.warning(f"{rec.recording_id}: not in reference {reference_path}, skipped")
            continue
        recs.append(rec)
    if not recs:
        raise common.EmptyInputError(f"none of {len(paths)} embedding files has a reference")

    dims = {rec.dim for rec in recs}
    if len(dims) != 1:
        raise common.DimensionError(f"training embeddings disagree in dimension: {sorted(dims)}")

    whiten_paths = _expand_globs(whiten_globs)
    if whiten_globs and not whiten_paths:
        raise common.EmptyInputError(f"no whitening files match {', '.join(whiten_globs)}")
    if whiten_paths:
        pool = np.vstack([corpus_io.read_embeddings(path).vectors for path in whiten_paths])
    else:
        pool = np.vstack([rec.vectors for rec in recs])
    whiten = transforms.estimate_center_whiten(pool)

    classes: typ.List[typ.Optional[str]] = []
    overlapped = []
    for rec in recs:
        ref = refs[rec.recording_id]
        for speaker in span_speakers(rec.spans, ref):
            classes.append(None if speaker is None else f"{rec.recording_id}{CLASS_SEPARATOR}{speaker}")
        overlapped.append(overlap.overlap_training_labels(rec.spans, ref))

    vectors = transforms.length_normalize(
        transforms.apply_transform(whiten, np.vstack([rec.vectors for rec in recs]))
    )
    logger.info(f"{len(vectors)} training embeddings from {len(recs)} recording(s)")
    return TrainingSet(vectors, classes, np.concatenate(overlapped), whiten)


def train_plda(train_set: TrainingSet, iterations: int = PLDA_ITERATIONS) -> common.PldaModel:
    keep = [idx for idx, name in enumerate(train_set.classes) if name is not None]
    if not keep:
        raise common.EmptyInputError("no training embedding overlaps reference speech")
    labels = [train_set.classes[idx] for idx in keep]
    logger.info(f"training PLDA on {len(keep)} embeddings of {len(set(labels))} classes")

    def log_iteration(it: int, model: common.PldaModel) -> None:
        logger.debug(f"PLDA EM iteration {it + 1} of {iterations}")

    return plda.train_em(train_set.vectors[keep], labels, iterations, log_iteration)


def train_overlap_detector(train_set: TrainingSet, l2: float = 1.0) -> overlap.LogRegModel:
    n_overlapped = int(train_set.overlapped.sum())
    logger.info(
        f"training overlap detector on {len(train_set.overlapped)} embeddings, {n_overlapped} overlapped"
    )
    return overlap.train_logreg(train_set.vectors, train_set.overlapped, l2)
