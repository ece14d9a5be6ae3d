#!/usr/bin/env python
# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT

import io
import sys
import logging
import functools
import typing as typ

import click
import pathlib2 as pl

from . import plda
from . import synth
from . import common
from . import metrics
from . import overlap
from . import framevb
from . import pipeline
from . import training
from . import corpus_io
from . import transforms


logger = logging.getLogger(__name__)


LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s - %(message)s"


def _configure_logging(verbose: bool, quiet: bool) -> None:
    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("bhmmdiar").setLevel(level)


def _exits_on_error(func: typ.Callable[..., None]) -> typ.Callable[..., None]:
    """Map library errors to the documented process exit codes."""

    @functools.wraps(func)
    def wrapper(*args: typ.Any, **kwargs: typ.Any) -> None:
        try:
            func(*args, **kwargs)
        except common.DiarizationError as ex:
            logger.error(str(ex))
            sys.exit(ex.exit_code)
        except (IOError, OSError) as ex:
            logger.error(str(ex))
            sys.exit(common.EXIT_DATA_ERROR)

    return wrapper


def _opt_path(value: typ.Optional[str]) -> typ.Optional[pl.Path]:
    return None if value is None else pl.Path(value)


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False, help="Log debug messages.")
@click.option("-q", "--quiet", is_flag=True, default=False, help="Only log warnings and errors.")
def cli(verbose: bool, quiet: bool) -> None:
    """Speaker diarization with AHC and Bayesian HMM clustering of x-vectors."""
    _configure_logging(verbose, quiet)


@cli.command()
@click.option(
    "--preset",
    default=pipeline.DEFAULT_PRESET,
    metavar="<name>",
    help="Named system configuration: " + ", ".join(pipeline.PRESETS) + ".",
)
@click.option(
    "--embeddings",
    "embedding_globs",
    multiple=True,
    required=True,
    metavar="<glob>",
    help="Embedding CSV files, repeat once per channel.",
)
@click.option("--vad", "vad_dir", required=True, metavar="<dir>", help="Directory of <recording>.lab files.")
@click.option("--plda", "plda_path", required=True, metavar="<path>", help="PLDA model file.")
@click.option(
    "--plda2", "plda2_path", default=None, metavar="<path>", help="Second PLDA model to interpolate with."
)
@click.option(
    "--eigenvoice", "eigenvoice_path", default=None, metavar="<path>", help="Eigenvoice model file."
)
@click.option(
    "--features", "features_dir", default=None, metavar="<dir>", help="Directory of frame feature files."
)
@click.option(
    "--overlap-model", "overlap_model_path", default=None, metavar="<path>", help="Overlap detector."
)
@click.option(
    "--whiten-embeddings",
    "whiten_globs",
    multiple=True,
    metavar="<glob>",
    help="Additional files for the pooled centering and whitening estimate.",
)
@click.option(
    "--whiten-transform",
    "whiten_path",
    default=None,
    metavar="<path>",
    help="Stored centering and whitening transform, e.g. from train-plda.",
)
@click.option(
    "--adapt-embeddings",
    "adapt_globs",
    multiple=True,
    metavar="<glob>",
    help="Unlabelled recordings for PLDA adaptation, default the diarized ones.",
)
@click.option(
    "--config", "config_path", default=None, metavar="<path>", help="Config file of key = value lines."
)
@click.option(
    "--set", "overrides", multiple=True, metavar="<key=value>", help="Override a configuration key."
)
@click.option("--workers", default=None, type=int, metavar="<n>", help="Recordings processed in parallel.")
@click.option("--dump-dir", default=None, metavar="<dir>", help="Write similarity matrices and ELBO traces.")
@click.option("--out", "out_dir", required=True, metavar="<dir>", help="Output directory.")
@_exits_on_error
def diarize(
    preset: str,
    embedding_globs: typ.Tuple[str, ...],
    vad_dir: str,
    plda_path: str,
    plda2_path: typ.Optional[str],
    eigenvoice_path: typ.Optional[str],
    features_dir: typ.Optional[str],
    overlap_model_path: typ.Optional[str],
    whiten_globs: typ.Tuple[str, ...],
    whiten_path: typ.Optional[str],
    adapt_globs: typ.Tuple[str, ...],
    config_path: typ.Optional[str],
    overrides: typ.Tuple[str, ...],
    workers: typ.Optional[int],
    dump_dir: typ.Optional[str],
    out_dir: str,
) -> None:
    """Diarize every recording matched by the embedding patterns."""
    overrides = tuple(overrides) + ((f"workers={workers}",) if workers is not None else ())
    config = pipeline.resolve_config(preset, config_path, overrides)
    inputs = pipeline.DiarizeInputs(
        embedding_globs=list(embedding_globs),
        vad_dir=pl.Path(vad_dir),
        plda_path=pl.Path(plda_path),
        out_dir=pl.Path(out_dir),
        plda2_path=_opt_path(plda2_path),
        eigenvoice_path=_opt_path(eigenvoice_path),
        features_dir=_opt_path(features_dir),
        overlap_model_path=_opt_path(overlap_model_path),
        whiten_globs=list(whiten_globs),
        adapt_globs=list(adapt_globs),
        whiten_path=_opt_path(whiten_path),
        dump_dir=_opt_path(dump_dir),
    )
    pipeline.diarize(config, inputs, preset)


@cli.command()
@click.option("--ref", "ref_path", required=True, metavar="<path>", help="Reference RTTM.")
@click.option(
    "--hyp", "hyp_paths", required=True, multiple=True, metavar="<path>", help="Hypothesis RTTM(s)."
)
@click.option("--collar", default=0.0, type=float, metavar="<seconds>", help="No-score collar.")
@click.option("--ignore-overlaps", is_flag=True, default=False, help="Exclude overlapped reference speech.")
@click.option("--out", "out_path", default=None, metavar="<path>", help="Report file, default stdout.")
@_exits_on_error
def score(
    ref_path: str,
    hyp_paths: typ.Tuple[str, ...],
    collar: float,
    ignore_overlaps: bool,
    out_path: typ.Optional[str],
) -> None:
    """Score hypothesis RTTM files against a reference."""
    refs = corpus_io.read_rttm_corpus(ref_path)
    hyps: typ.Dict[str, common.DiarizationHypothesis] = {}
    for hyp_path in hyp_paths:
        hyps.update(corpus_io.read_rttm_corpus(hyp_path))

    rows = metrics.score_corpus(refs, hyps, collar, score_overlaps=not ignore_overlaps)
    if out_path is None:
        buf = io.StringIO()
        metrics.write_report(rows, buf)
        click.echo(buf.getvalue(), nl=False)
    else:
        metrics.write_report(rows, out_path)
    total = rows[-1]
    logger.info(f"DER {100 * total.der:.3f} %, JER {100 * total.jer:.3f} %")


def _training_options(func: typ.Callable[..., None]) -> typ.Callable[..., None]:
    options = [
        click.option(
            "--embeddings",
            "embedding_globs",
            multiple=True,
            required=True,
            metavar="<glob>",
            help="Training embedding CSV files named <recording>.csv.",
        ),
        click.option(
            "--ref", "ref_path", required=True, metavar="<path>", help="Reference RTTM with the labels."
        ),
        click.option(
            "--whiten-embeddings",
            "whiten_globs",
            multiple=True,
            metavar="<glob>",
            help="Files for the centering and whitening estimate, default the training files.",
        ),
        click.option("--out", "out_path", required=True, metavar="<path>", help="Model file to write."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@cli.command(name="train-plda")
@_training_options
@click.option(
    "--iterations", default=training.PLDA_ITERATIONS, type=int, show_default=True, help="EM iterations."
)
@click.option(
    "--whiten-out", "whiten_out", default=None, metavar="<path>", help="Also write the whitening transform."
)
@_exits_on_error
def train_plda(
    embedding_globs: typ.Tuple[str, ...],
    ref_path: str,
    whiten_globs: typ.Tuple[str, ...],
    out_path: str,
    iterations: int,
    whiten_out: typ.Optional[str],
) -> None:
    """Train a PLDA model on embeddings labelled by a reference RTTM."""
    train_set = training.load_training_set(embedding_globs, ref_path, whiten_globs)
    plda.save_model(training.train_plda(train_set, iterations), out_path)
    if whiten_out is not None:
        transforms.save_transform(train_set.whiten, whiten_out)
    logger.info(f"PLDA model written to {out_path}")


@cli.command(name="train-overlap")
@_training_options
@click.option("--l2", default=1.0, type=float, show_default=True, help="L2 penalty of the weights.")
@_exits_on_error
def train_overlap(
    embedding_globs: typ.Tuple[str, ...],
    ref_path: str,
    whiten_globs: typ.Tuple[str, ...],
    out_path: str,
    l2: float,
) -> None:
    """Train the overlap detector on embeddings labelled by a reference RTTM."""
    train_set = training.load_training_set(embedding_globs, ref_path, whiten_globs)
    overlap.save_logreg(training.train_overlap_detector(train_set, l2), out_path)
    logger.info(f"overlap detector written to {out_path}")


@cli.command(name="synth")
@click.option("--out", "out_dir", required=True, metavar="<dir>", help="Output directory.")
@click.option("--recordings", default=3, type=int, show_default=True)
@click.option("--speakers", default=3, type=int, show_default=True)
@click.option("--segments", default=200, type=int, show_default=True)
@click.option("--dim", default=16, type=int, show_default=True)
@click.option(
    "--separation", default=25.0, type=float, show_default=True, help="Across to within class ratio."
)
@click.option("--loop-probability", default=0.9, type=float, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option(
    "--eigenvoice-shape",
    default=None,
    type=(int, int, int),
    metavar="<C F R>",
    help="Also sample frame features from a random eigenvoice model of this shape.",
)
@_exits_on_error
def synth_corpus(
    out_dir: str,
    recordings: int,
    speakers: int,
    segments: int,
    dim: int,
    separation: float,
    loop_probability: float,
    seed: int,
    eigenvoice_shape: typ.Optional[typ.Tuple[int, int, int]],
) -> None:
    """Write a synthetic corpus sampled from known models."""
    eigenvoice = None
    if eigenvoice_shape is not None:
        n_comp, feat_dim, rank = eigenvoice_shape
        eigenvoice = synth.random_eigenvoice_model(n_comp, feat_dim, rank, seed)
        framevb.validate_eigenvoice_model(eigenvoice)
    synth.write_synthetic_corpus(
        out_dir,
        n_recordings=recordings,
        n_speakers=speakers,
        n_segments=segments,
        dim=dim,
        separation=separation,
        loop_probability=loop_probability,
        seed=seed,
        eigenvoice=eigenvoice,
    )


if __name__ == '__main__':
    cli()      # type: ignore
