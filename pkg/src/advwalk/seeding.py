"""Deterministic, purpose-isolated RNG streams.

Every stochastic stage gets its own stream keyed by (master seed, purpose
tag, epoch), so adding or removing one stage never shifts the draws of
another. This is what makes a lambda=0 regularized run bit-identical to the
unregularized trainer.
"""

import numpy as np

INIT = 0
WALKS = 1
SHUFFLE = 2
NEGATIVES = 3
PERTURB = 4
EVAL_SPLIT = 5
EVAL_NEG = 6
CLASS_SPLIT = 7
ATTACK_WALKS = 8
ATTACK_NEGS = 9
ATTACK_NOISE = 10


def stream(seed, tag, epoch=0):
    """Independent generator for one (seed, purpose, epoch) cell."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(epoch)))
    return np.random.Generator(np.random.PCG64(ss))
