# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Speaker diarization of x-vector sequences with AHC and Bayesian HMM clustering."""

from .pipeline import diarize
from .pipeline import resolve_config
from .metrics import der
from .metrics import jer

__version__ = "0.1.0"

__all__ = [
    "diarize",
    "resolve_config",
    "der",
    "jer",
]
