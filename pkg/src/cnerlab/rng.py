"""Seeded, splittable random streams.

Every stochastic choice in the package draws from a stream keyed by
``(seed, purpose, index...)`` so that adding or removing one consumer (an
extra evaluation, a logging call) never perturbs any other stream.
"""

from __future__ import annotations

import numpy as np

# Fixed stream identifiers; order is part of the on-disk reproducibility
# contract, so only append.
POOLS = 1
TEMPLATES = 2
SRC_SENTENCE = 3
TGT_TRANSLATE = 4
UNLABELED_SENTENCE = 5
TEST_SENTENCE = 6
PARAM_INIT = 7
TRAIN_SHUFFLE = 8
STUDENT_INIT = 9
KD_SHUFFLE = 10


def substream(*entropy: int) -> np.random.Generator:
    """A generator whose state is a pure function of the entropy tuple."""
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(*entropy: int) -> int:
    """A storable 64-bit seed derived from the entropy tuple."""
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
