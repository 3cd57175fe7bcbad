"""Deterministic random streams.

Every random draw in the package comes from a counter-based Philox 4x64-10
generator (numpy's implementation). A stream is identified by a
``(seed, purpose, index)`` triple, mixed into the Philox key through
numpy's ``SeedSequence`` spawn mechanism, so any stream can be rebuilt in
O(1) without consuming state from any other stream. This is what makes
training resumable bit-exactly: the randomness of iteration ``k`` depends
only on ``(seed, purpose, k)``, never on how many draws happened before.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. The values are part of the reproducibility contract:
# changing them changes every downstream random draw.
INIT = 1            # parameter initialization (index = layer counter)
EPOCH_ORDER = 2     # per-epoch sample permutation (index = epoch)
FLIP = 3            # per-epoch horizontal-flip coin flips (index = epoch)
TARGETS = 4         # per-iteration target-label shuffle (index = iteration)
GP_EPS = 5          # per-iteration interpolation coefficients (index = iteration)
SYNTH_LABELS = 6    # per-image attribute labels (index = image)
SYNTH_BACKGROUND = 7  # per-image background gradient (index = image)
SYNTH_ATTR = 8      # per-image, per-attribute appearance (index = image * 8 + attr)
UNIFORM_FILL = 9    # tensor uniform fills
CLS_INIT = 10       # oracle classifier init (index = layer counter)
CLS_ORDER = 11      # oracle classifier batch order (index = epoch)


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the Philox generator for ``(seed, purpose, index)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if purpose < 0 or index < 0:
        raise ValueError("purpose and index must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(purpose, index))
    return np.random.Generator(np.random.Philox(seed=ss))


def derive_seed(seed: int, purpose: int, index: int = 0) -> int:
    """Collapse a stream identity into a single child seed."""
    return int(stream(seed, purpose, index).integers(0, 2**62))
