# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Presets, configuration and per-recording orchestration of the diarization pipeline."""

import io
import glob
import logging
import functools
import typing as typ
import concurrent.futures

import numpy as np
import pathlib2 as pl

from . import ahc
from . import plda
from . import vbhmm
from . import common
from . import framevb
from . import overlap
from . import corpus_io
from . import transforms


logger = logging.getLogger(__name__)


WHITEN_SCOPES = ("pooled", "recording")

REPORT_FILENAME = "diarize_report.txt"

REPORT_COLUMNS = ("recording_id", "n_embeddings", "ahc_threshold", "ahc_clusters", "speakers")


class PipelineConfig(typ.NamedTuple):

    pca_fraction: float = 0.35
    threshold_bias: float = 0.0
    # None selects the per-recording calibrated threshold
    fixed_threshold: typ.Optional[float] = None
    multichannel: bool = False
    whiten_scope: str = "pooled"
    plda_weight: float = 0.5
    adapt_plda: bool = False
    adaptation_threshold: float = 0.0

    use_vb: bool = True
    lda_dim: int = 220
    loop_probability: float = 0.8
    acoustic_scale: float = 0.4
    speaker_regularization: float = 11.0
    init_smoothing: float = 5.0
    vb_max_iterations: int = 40
    elbo_tolerance: float = 1e-4
    prune_threshold: float = 0.05

    use_frame_vb: bool = True
    frame_rate: float = 100.0
    frame_acoustic_scale: float = 0.1
    frame_loop_probability: float = 0.95
    min_duration: int = 1
    downsample: int = 5

    use_overlap: bool = True
    overlap_threshold: float = 0.7

    workers: int = 1

    @property
    def vb_config(self) -> vbhmm.VbConfig:
        return vbhmm.VbConfig(
            loop_probability=self.loop_probability,
            acoustic_scale=self.acoustic_scale,
            speaker_regularization=self.speaker_regularization,
            init_smoothing=self.init_smoothing,
            max_iterations=self.vb_max_iterations,
            elbo_tolerance=self.elbo_tolerance,
            prune_threshold=self.prune_threshold,
        )

    @property
    def frame_vb_config(self) -> framevb.FrameVbConfig:
        return framevb.FrameVbConfig(
            acoustic_scale=self.frame_acoustic_scale,
            loop_probability=self.frame_loop_probability,
            min_duration=self.min_duration,
            downsample=self.downsample,
        )


_MCCLANE = {
    # F_A and smoothing are not stated for this system and stay at the system1 values.
    "pca_fraction"           : 0.22,
    "threshold_bias"         : 0.2,
    "lda_dim"                : 250,
    "loop_probability"       : 0.95,
    "speaker_regularization" : 12.0,
}

_SYSTEM2 = {
    # F_A and smoothing are not stated for this system and stay at the system1 values.
    "pca_fraction"           : 0.30,
    "threshold_bias"         : 0.2,
    "lda_dim"                : 250,
    "loop_probability"       : 0.7,
    "speaker_regularization" : 12.0,
    "overlap_threshold"      : 0.8,
}

_MULTICHANNEL_AHC = {
    "multichannel" : True,
    "adapt_plda"   : True,
    "use_vb"       : False,
    "use_frame_vb" : False,
    "use_overlap"  : False,
}

PRESETS: typ.Dict[str, typ.Dict[str, typ.Any]] = {
    "system1"  : {},
    "mcclane"  : _MCCLANE,
    "system2"  : _SYSTEM2,
    "system2b" : dict(_SYSTEM2, use_overlap=False),
    "system3"  : dict(_MULTICHANNEL_AHC, fixed_threshold=2.1),
    "system4"  : dict(_MULTICHANNEL_AHC, fixed_threshold=1.8),
}

DEFAULT_PRESET = "system1"


_TRUE_VALUES = {"1", "true", "yes", "on"}
_FALSE_VALUES = {"0", "false", "no", "off"}


def _parse_value(key: str, raw: str) -> typ.Any:
    field_type = typ.get_type_hints(PipelineConfig)[key]
    text = raw.strip()
    try:
        if field_type is bool:
            if text.lower() in _TRUE_VALUES:
                return True
            if text.lower() in _FALSE_VALUES:
                return False
            raise ValueError(text)
        if field_type == typ.Optional[float]:
            return None if text.lower() in ("", "none") else float(text)
        if field_type is int:
            return int(text)
        if field_type is float:
            return float(text)
        return text
    except ValueError:
        raise common.ConfigError(f"invalid value {raw!r} for '{key}'")


def parse_assignments(lines: typ.Iterable[str], source: str = "<options>") -> typ.Dict[str, typ.Any]:
    """Parse `key = value` lines; blank lines and `#` comments are skipped."""
    values: typ.Dict[str, typ.Any] = {}
    for lineno, line in enumerate(lines, start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise common.ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in content.split("=", 1))
        if key not in PipelineConfig._fields:
            raise common.ConfigError(f"{source}:{lineno}: unknown configuration key '{key}'")
        values[key] = _parse_value(key, raw)
    return values


def resolve_config(
    preset: str = DEFAULT_PRESET,
    config_path: corpus_io.PathLike = None,
    overrides: typ.Sequence[str] = (),
) -> PipelineConfig:
    """Defaults < preset < config file < `key=value` overrides."""
    if preset not in PRESETS:
        raise common.ConfigError(f"unknown preset '{preset}', choose from {', '.join(PRESETS)}")
    values: typ.Dict[str, typ.Any] = dict(PRESETS[preset])
    if config_path is not None:
        path = pl.Path(config_path)
        if not path.exists():
            raise common.ConfigError(f"config file {path} does not exist")
        with io.open(str(path), mode="r", encoding="utf-8") as fh:
            values.update(parse_assignments(fh, str(path)))
    values.update(parse_assignments(overrides, "--set"))
    return PipelineConfig(**values)


def validate_config(config: PipelineConfig) -> None:
    if not 0 < config.pca_fraction <= 1:
        raise common.ConfigError(f"pca_fraction must be in (0, 1], got {config.pca_fraction}")
    if config.whiten_scope not in WHITEN_SCOPES:
        raise common.ConfigError(f"whiten_scope must be one of {WHITEN_SCOPES}, got '{config.whiten_scope}'")
    if not 0 <= config.plda_weight <= 1:
        raise common.ConfigError(f"plda_weight must be in [0, 1], got {config.plda_weight}")
    if config.lda_dim < 1:
        raise common.ConfigError(f"lda_dim must be positive, got {config.lda_dim}")
    if config.frame_rate <= 0:
        raise common.ConfigError(f"frame_rate must be positive, got {config.frame_rate}")
    if not 0 <= config.overlap_threshold < 1:
        raise common.ConfigError(f"overlap_threshold must be in [0, 1), got {config.overlap_threshold}")
    if config.workers < 1:
        raise common.ConfigError(f"workers must be positive, got {config.workers}")
    vbhmm.validate_vb_config(config.vb_config)
    framevb.validate_frame_vb_config(config.frame_vb_config)


def format_config(config: PipelineConfig, preset: str) -> str:
    lines = [f"# preset = {preset}\n"]
    lines.extend(f"# {key} = {value}\n" for key, value in config._asdict().items())
    return "".join(lines)


class DiarizeInputs(typ.NamedTuple):

    embedding_globs: typ.List[str]
    vad_dir: pl.Path
    plda_path: pl.Path
    out_dir: pl.Path
    plda2_path: typ.Optional[pl.Path] = None
    eigenvoice_path: typ.Optional[pl.Path] = None
    features_dir: typ.Optional[pl.Path] = None
    overlap_model_path: typ.Optional[pl.Path] = None
    whiten_globs: typ.Sequence[str] = ()
    adapt_globs: typ.Sequence[str] = ()
    whiten_path: typ.Optional[pl.Path] = None
    dump_dir: typ.Optional[pl.Path] = None


class RecordingJob(typ.NamedTuple):

    recording_id: str
    channel_paths: typ.List[pl.Path]
    vad_path: pl.Path
    features_path: typ.Optional[pl.Path]


class PipelineContext(typ.NamedTuple):
    """Everything a worker needs besides the recording itself."""

    config: PipelineConfig
    model: common.PldaModel
    # None with the per-recording whitening scope
    whiten: typ.Optional[common.AffineTransform]
    eigenvoice: typ.Optional[common.EigenvoiceModel]
    logreg: typ.Optional[overlap.LogRegModel]
    dump_dir: typ.Optional[pl.Path]


class RecordingOutcome(typ.NamedTuple):

    hypothesis: common.DiarizationHypothesis
    n_embeddings: int
    ahc_threshold: float
    ahc_clusters: int


def _expand_glob(pattern: str) -> typ.List[pl.Path]:
    return [pl.Path(path) for path in sorted(glob.glob(pattern))]


def check_inputs(config: PipelineConfig, inputs: DiarizeInputs) -> None:
    """Reject contradictory configurations before any processing starts."""
    validate_config(config)
    if not inputs.embedding_globs:
        raise common.ConfigError("at least one --embeddings pattern is required")
    if len(inputs.embedding_globs) > 1 and not config.multichannel:
        raise common.ConfigError("several --embeddings patterns given but multichannel is disabled")
    if config.use_frame_vb and (inputs.eigenvoice_path is None or inputs.features_dir is None):
        raise common.ConfigError("frame level VB needs --eigenvoice and --features")
    if config.use_overlap and inputs.overlap_model_path is None:
        raise common.ConfigError("overlap post-processing needs --overlap-model")
    if inputs.whiten_globs and config.whiten_scope != "pooled":
        raise common.ConfigError("--whiten-embeddings requires whiten_scope = pooled")
    if inputs.whiten_path is not None and inputs.whiten_globs:
        raise common.ConfigError("--whiten-transform and --whiten-embeddings are exclusive")
    if inputs.whiten_path is not None and config.whiten_scope != "pooled":
        raise common.ConfigError("--whiten-transform requires whiten_scope = pooled")
    if inputs.adapt_globs and not config.adapt_plda:
        raise common.ConfigError("--adapt-embeddings requires adapt_plda = true")


def collect_jobs(config: PipelineConfig, inputs: DiarizeInputs) -> typ.List[RecordingJob]:
    channels = [_expand_glob(pattern) for pattern in inputs.embedding_globs]
    if not channels[0]:
        raise common.EmptyInputError(f"no embedding files match {inputs.embedding_globs[0]}")
    by_stem = [{path.stem: path for path in paths} for paths in channels]

    jobs = []
    for path in channels[0]:
        rec_id = path.stem
        channel_paths = []
        for pattern, stems in zip(inputs.embedding_globs, by_stem):
            if rec_id not in stems:
                raise common.DataError(f"{rec_id}: missing from channel pattern {pattern}")
            channel_paths.append(stems[rec_id])

        vad_path = pl.Path(inputs.vad_dir) / f"{rec_id}.lab"
        if not vad_path.exists():
            raise common.DataError(f"{rec_id}: VAD file {vad_path} does not exist")
        features_path = None
        if config.use_frame_vb and inputs.features_dir is not None:
            features_path = pl.Path(inputs.features_dir) / f"{rec_id}.csv"
            if not features_path.exists():
                raise common.DataError(f"{rec_id}: frame features {features_path} do not exist")
        jobs.append(RecordingJob(rec_id, channel_paths, vad_path, features_path))
    return jobs


def _load_channels(job: RecordingJob) -> typ.List[common.RecordingEmbeddings]:
    recs = [corpus_io.read_embeddings(path, job.recording_id) for path in job.channel_paths]
    for rec in recs[1:]:
        if rec.spans != recs[0].spans or rec.dim != recs[0].dim:
            raise common.DimensionError(f"{job.recording_id}: channels disagree in segments or dimension")
    return recs


def _normalized(whiten: common.AffineTransform, vectors: np.ndarray) -> np.ndarray:
    return transforms.length_normalize(transforms.apply_transform(whiten, vectors))


def _recording_whiten(recs: typ.Sequence[common.RecordingEmbeddings]) -> common.AffineTransform:
    return transforms.estimate_center_whiten(np.vstack([rec.vectors for rec in recs]))


def _adaptation_sets(
    inputs: DiarizeInputs, jobs: typ.Sequence[RecordingJob], whiten: typ.Optional[common.AffineTransform]
) -> typ.Iterator[np.ndarray]:
    """Normalized embeddings of every adaptation recording, one array each.

    Without --adapt-embeddings every channel of the recordings being
    diarized is used.
    """
    adapt_paths = [path for pattern in inputs.adapt_globs for path in _expand_glob(pattern)]
    if inputs.adapt_globs and not adapt_paths:
        raise common.EmptyInputError(f"no adaptation files match {', '.join(inputs.adapt_globs)}")
    if adapt_paths:
        logger.info(f"adapting PLDA on {len(adapt_paths)} adaptation file(s)")
        channel_sets = ([corpus_io.read_embeddings(path)] for path in adapt_paths)
    else:
        channel_sets = (_load_channels(job) for job in jobs)
    for recs in channel_sets:
        rec_whiten = whiten if whiten is not None else _recording_whiten(recs)
        for rec in recs:
            yield _normalized(rec_whiten, rec.vectors)


def prepare_context(
    config: PipelineConfig, inputs: DiarizeInputs, jobs: typ.Sequence[RecordingJob]
) -> PipelineContext:
    """Load models and estimate the corpus level transforms."""
    model = plda.load_model(inputs.plda_path)
    if inputs.plda2_path is not None:
        model = plda.interpolate(model, plda.load_model(inputs.plda2_path), config.plda_weight)

    whiten = None
    if inputs.whiten_path is not None:
        whiten = transforms.load_transform(inputs.whiten_path)
        logger.info(f"centering and whitening loaded from {inputs.whiten_path}")
    elif config.whiten_scope == "pooled":
        pool = [path for job in jobs for path in job.channel_paths]
        pool.extend(path for pattern in inputs.whiten_globs for path in _expand_glob(pattern))
        vectors = np.vstack([corpus_io.read_embeddings(path).vectors for path in pool])
        whiten = transforms.estimate_center_whiten(vectors)
        logger.info(f"centering and whitening estimated on {len(vectors)} embeddings from {len(pool)} files")

    if config.adapt_plda:
        adapt_sets = _adaptation_sets(inputs, jobs, whiten)
        model = plda.adapt_unsupervised(model, adapt_sets, config.adaptation_threshold)

    eigenvoice = framevb.load_eigenvoice_model(inputs.eigenvoice_path) if config.use_frame_vb else None
    logreg = overlap.load_logreg(inputs.overlap_model_path) if config.use_overlap else None
    return PipelineContext(config, model, whiten, eigenvoice, logreg, inputs.dump_dir)


def _ahc_threshold(rec_id: str, sim: common.SimilarityMatrix, config: PipelineConfig) -> float:
    if config.fixed_threshold is not None:
        return config.fixed_threshold
    try:
        return ahc.calibrated_threshold(sim, config.threshold_bias)
    except (common.InsufficientDataError, common.DegenerateInputError) as ex:
        # a single cluster absorbs everything
        logger.warning(f"{rec_id}: threshold calibration failed ({ex}), assuming one speaker")
        return -np.inf


def _similarity(
    channels: typ.Sequence[np.ndarray], model: common.PldaModel, config: PipelineConfig
) -> common.SimilarityMatrix:
    mats = []
    for x in channels:
        pca = transforms.per_recording_pca(x, config.pca_fraction)
        reduced = transforms.length_normalize(transforms.apply_transform(pca, x))
        mats.append(plda.llr_matrix(plda.project(model, pca), reduced))
    return ahc.average_similarities(mats)


def _bhmm(
    rec_id: str,
    x: np.ndarray,
    labels: common.ClusterLabels,
    ctx: PipelineContext,
) -> common.ClusterLabels:
    config = ctx.config
    lda_dim = min(config.lda_dim, ctx.model.dim)
    lda = transforms.lda_from_plda(ctx.model, lda_dim)
    observations = transforms.apply_transform(lda, x)
    init = vbhmm.init_soft(labels, config.init_smoothing)
    result = vbhmm.run_vb(observations, init, plda.project(ctx.model, lda), config.vb_config)
    logger.info(
        f"{rec_id}: VB kept {result.speaker_count} of {init.shape[1]} speakers "
        f"after {len(result.elbo_trace)} iterations"
    )
    if ctx.dump_dir is not None:
        rows = [
            [it, elbo, count]
            for it, (elbo, count) in enumerate(zip(result.elbo_trace, result.speaker_count_trace))
        ]
        corpus_io.write_csv_rows(pl.Path(ctx.dump_dir) / f"{rec_id}.elbo.csv", rows)
    return vbhmm.hard_labels(result.gamma)


def _resegment(
    hyp: common.DiarizationHypothesis,
    regions: typ.Sequence[common.SpeechRegion],
    features_path: pl.Path,
    ctx: PipelineContext,
) -> common.DiarizationHypothesis:
    assert ctx.eigenvoice is not None
    frame_rate = ctx.config.frame_rate
    frames = corpus_io.read_frame_features(features_path)
    centers = (np.arange(len(frames)) + 0.5) / frame_rate
    speech = np.zeros(len(frames), dtype=bool)
    for region in regions:
        speech |= (centers >= region.onset) & (centers < region.offset)
    if not hyp.segments or not np.any(speech):
        logger.warning(f"{hyp.recording_id}: nothing to resegment at frame level")
        return hyp

    speakers = hyp.speakers
    init = framevb.frame_init_from_segments(hyp, frame_rate, len(frames))
    gamma = framevb.single_vb_pass(frames[speech], init[speech], ctx.eigenvoice, ctx.config.frame_vb_config)
    frame_labels = np.full(len(frames), -1)
    frame_labels[speech] = np.argmax(gamma, axis=1)
    out = corpus_io.frame_labels_to_hypothesis(
        hyp.recording_id, frame_labels, frame_rate, lambda idx: speakers[idx]
    )
    return corpus_io.clip_to_regions(out, regions)


def diarize_recording(ctx: PipelineContext, job: RecordingJob) -> RecordingOutcome:
    config = ctx.config
    rec_id = job.recording_id
    recs = _load_channels(job)
    regions = corpus_io.read_vad(job.vad_path)
    spans = recs[0].spans
    n_embeddings = len(spans)

    whiten = ctx.whiten if ctx.whiten is not None else _recording_whiten(recs)
    channels = [_normalized(whiten, rec.vectors) for rec in recs]
    logger.info(f"{rec_id}: {n_embeddings} embeddings in {len(channels)} channel(s)")

    if n_embeddings < 2:
        threshold = np.inf
        labels = np.zeros(n_embeddings, dtype=int)
    else:
        sim = _similarity(channels, ctx.model, config)
        if ctx.dump_dir is not None:
            corpus_io.write_csv_rows(pl.Path(ctx.dump_dir) / f"{rec_id}.sim.csv", sim.scores)
        threshold = _ahc_threshold(rec_id, sim, config)
        labels = ahc.upgma_cluster(sim, threshold)
    n_clusters = int(labels.max()) + 1 if len(labels) else 0
    logger.info(f"{rec_id}: AHC threshold {threshold:.3f} gave {n_clusters} cluster(s)")

    if config.use_vb and n_clusters > 0:
        labels = _bhmm(rec_id, channels[0], labels, ctx)

    hyp = corpus_io.labels_to_hypothesis(rec_id, spans, labels)
    hyp = corpus_io.clip_to_regions(hyp, regions)

    if config.use_frame_vb and job.features_path is not None:
        hyp = _resegment(hyp, regions, job.features_path, ctx)

    if config.use_overlap and ctx.logreg is not None:
        flags = overlap.detect(ctx.logreg, channels[0], config.overlap_threshold)
        found = intersect_regions(overlap.flags_to_regions(spans, flags), regions)
        logger.info(f"{rec_id}: {len(found)} overlap region(s) detected")
        hyp = overlap.assign_two_closest(hyp, found).hypothesis

    return RecordingOutcome(hyp, n_embeddings, float(threshold), n_clusters)


def intersect_regions(
    found: typ.Sequence[common.SpeechRegion], regions: typ.Sequence[common.SpeechRegion]
) -> typ.List[common.SpeechRegion]:
    """Intersection of detected overlap regions with the speech regions."""
    clipped = []
    for reg in found:
        for speech in regions:
            start, end = max(reg.onset, speech.onset), min(reg.offset, speech.offset)
            if end > start:
                clipped.append(common.SpeechRegion(start, end))
    return corpus_io.merge_regions(clipped)


def _report_row(outcome: RecordingOutcome) -> str:
    hyp = outcome.hypothesis
    return (
        f"{hyp.recording_id},{outcome.n_embeddings},{outcome.ahc_threshold:.6f},"
        f"{outcome.ahc_clusters},{len(hyp.speakers)}\n"
    )


def write_diarize_report(
    path: corpus_io.PathLike, config: PipelineConfig, preset: str, outcomes: typ.Sequence[RecordingOutcome]
) -> None:
    with io.open(str(path), mode="w", encoding="utf-8") as fh:
        fh.write(format_config(config, preset))
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for outcome in outcomes:
            fh.write(_report_row(outcome))


def diarize(
    config: PipelineConfig, inputs: DiarizeInputs, preset: str = DEFAULT_PRESET
) -> typ.List[RecordingOutcome]:
    """Run the full pipeline and write one RTTM per recording plus the report."""
    check_inputs(config, inputs)
    jobs = collect_jobs(config, inputs)
    ctx = prepare_context(config, inputs, jobs)

    out_dir = pl.Path(inputs.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if inputs.dump_dir is not None:
        pl.Path(inputs.dump_dir).mkdir(parents=True, exist_ok=True)

    worker = functools.partial(diarize_recording, ctx)
    if config.workers == 1 or len(jobs) == 1:
        outcomes = [worker(job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(worker, jobs))

    for outcome in outcomes:
        corpus_io.write_rttm(outcome.hypothesis, out_dir / f"{outcome.hypothesis.recording_id}.rttm")
    write_diarize_report(out_dir / REPORT_FILENAME, config, preset, outcomes)
    logger.info(f"diarized {len(outcomes)} recording(s) into {out_dir}")
    return outcomes
