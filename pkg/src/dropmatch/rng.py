"""Deterministic random streams keyed by structured integer tuples.

Every stochastic draw in the package comes from a counter-based Philox
generator whose key is ``(seed, domain, *indices)``. Streams with distinct
keys are independent, and a stream's output depends only on its own key,
never on how many draws other streams have consumed or on the order in
which streams are created. This makes parallel and sequential execution
produce identical results.
"""

from __future__ import annotations

import numpy as np

# Key domains. Fixed small integers; never renumber.
MASK = 0  # dropout masks, keyed (seed, MASK, position, head)
DRAFT = 1  # draft-model sampling, keyed (seed, DRAFT, step)
LOSSLESS = 2  # acceptance draws and residual sampling, keyed (seed, LOSSLESS, position)
BONUS = 3  # bonus-token sampling, keyed (seed, BONUS, step)
PARAMS = 4  # model parameter initialization, keyed (seed, PARAMS)
PERTURB = 5  # draft perturbation noise, keyed (seed, PERTURB)


def stream(seed: int, domain: int, *key: int) -> np.random.Generator:
    """Return an independent generator for a structured key."""
    entropy = [int(seed), int(domain), *(int(k) for k in key)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse ``(seed, *key)`` into a single u64 seed for nested runs."""
    entropy = [int(seed), *(int(k) for k in key)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a probability vector; consumes one uniform."""
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0  # guard against rounding shortfall at the tail
    return int(np.searchsorted(cdf, rng.random(), side="right"))
