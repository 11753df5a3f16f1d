"""Deterministic random streams.

Every source of randomness in the pipeline draws from a named stream so
stages can be toggled without perturbing each other's draws, and scans
can be processed in parallel without sharing generator state.

Stream id registry (one per pipeline stage):

====================  ====
stage                 id
====================  ====
model init            0
scene generation      1
augmentation          2
scan mixing           3
training order        4
====================  ====

Extra integer keys (scan index, iteration, pair index) further split a
stage stream into independent substreams. Standalone commands and the
adaptation loop key the augmentation and mixing streams by pair index
alike, so running the stages separately reproduces the fused loop's
draws for the same pair.
"""

from dataclasses import dataclass

import numpy as np

STREAM_INIT = 0
STREAM_SCENE = 1
STREAM_AUGMENT = 2
STREAM_MIX = 3
STREAM_TRAIN = 4


@dataclass(frozen=True)
class RandomStream:
    """A (seed, stream id) pair naming one deterministic random sequence."""

    seed: int
    stream: int = 0

    def generator(self, *keys: int) -> np.random.Generator:
        """Fresh generator for this stream, optionally split by extra keys.

        The same (seed, stream, keys) always yields the same sequence;
        distinct tuples yield statistically independent sequences.
        """
        ss = np.random.SeedSequence((self.seed, self.stream) + tuple(keys))
        return np.random.default_rng(ss)

    def child(self, stream: int) -> "RandomStream":
        """Same seed, different stage stream."""
        return RandomStream(self.seed, stream)
