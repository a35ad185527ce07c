"""Named sub-seed derivation so every random stream traces back to one seed."""

import numpy as np

# purpose codes for SeedSequence([seed, purpose, index])
SPLIT = 1
INIT = 2
SHUFFLE = 3
SYNTH = 4
CALIB = 5


def rng_for(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Independent generator for one (seed, purpose, *indices) tuple."""
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, *indices]))
