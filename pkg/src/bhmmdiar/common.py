# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Types and errors shared by all stages of the pipeline."""

import typing as typ

import numpy as np


EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_DATA_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class DiarizationError(Exception):

    exit_code: int = EXIT_DATA_ERROR


class ConfigError(DiarizationError):

    exit_code = EXIT_CONFIG_ERROR


class DataError(DiarizationError):

    exit_code = EXIT_DATA_ERROR


class ParseError(DataError):

    path: typ.Optional[str]
    lineno: typ.Optional[int]

    def __init__(self, msg: str, path: str = None, lineno: int = None) -> None:
        self.path = path
        self.lineno = lineno
        if path is not None and lineno is not None:
            msg = f"{path}:{lineno}: {msg}"
        elif path is not None:
            msg = f"{path}: {msg}"
        super().__init__(msg)


class FormatError(ParseError):
    pass


class EmptyInputError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DimensionError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class TrainingError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericalError(DiarizationError):

    exit_code = EXIT_NUMERICAL_ERROR


# Integer cluster ids, shape (n,), contiguous from 0.
ClusterLabels = np.ndarray

# Responsibilities, shape (T, S), rows sum to one.
SoftAssignment = np.ndarray


class SegmentEmbedding(typ.NamedTuple):

    onset: float
    duration: float
    vector: np.ndarray


class RecordingEmbeddings(typ.NamedTuple):

    recording_id: str
    dim: int
    segments: typ.List[SegmentEmbedding]

    @property
    def vectors(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, self.dim))
        return np.vstack([seg.vector for seg in self.segments])

    @property
    def spans(self) -> typ.List[typ.Tuple[float, float]]:
        return [(seg.onset, seg.duration) for seg in self.segments]


class SpeechRegion(typ.NamedTuple):

    onset: float
    offset: float


class SpeakerSegment(typ.NamedTuple):

    onset: float
    duration: float
    speaker: str

    @property
    def offset(self) -> float:
        return self.onset + self.duration


class DiarizationHypothesis(typ.NamedTuple):

    recording_id: str
    segments: typ.List[SpeakerSegment]

    @property
    def speakers(self) -> typ.List[str]:
        """Speaker labels ordered by their first onset."""
        seen: typ.Dict[str, None] = {}
        for seg in sorted(self.segments, key=lambda s: (s.onset, s.speaker)):
            seen.setdefault(seg.speaker, None)
        return list(seen)


class AffineTransform(typ.NamedTuple):
    """Maps x to matrix @ (x - shift)."""

    shift: np.ndarray
    matrix: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]


class PldaModel(typ.NamedTuple):
    """Two-covariance PLDA model.

    Speaker means are drawn from N(mean, across_class) and observations of a
    speaker from N(speaker_mean, within_class).
    """

    mean: np.ndarray
    across_class: np.ndarray
    within_class: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)


class SimilarityMatrix(typ.NamedTuple):
    """Pairwise log-likelihood ratios, the diagonal holds +inf."""

    scores: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[0]


class EigenvoiceModel(typ.NamedTuple):
    """Diagonal UBM-GMM with a low rank speaker subspace.

    Row block ``V[c * F:(c + 1) * F]`` shifts the mean of component c.
    """

    weights: np.ndarray
    means: np.ndarray
    diag_covs: np.ndarray
    V: np.ndarray

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.means.shape[1]

    @property
    def rank(self) -> int:
        return self.V.shape[1]


def as_matrix(vectors: typ.Any, name: str = "vectors") -> np.ndarray:
    """Coerce a sequence of vectors to a 2-D float array."""
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis] if len(arr) else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise DimensionError(f"Expected 2-D {name}, got shape {arr.shape}")
    return arr
