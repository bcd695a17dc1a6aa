"""Deterministic random-stream derivation.

Every random draw in the package comes from a counter-based Philox
generator keyed by ``(experiment_seed, kind, round_index, item_index)``
through numpy's SeedSequence.  Identical keys reproduce identical draws;
distinct keys give statistically independent streams, so simulations keep
their outputs no matter how they are batched or scheduled.
"""

from __future__ import annotations

import numpy as np

# stream namespaces
OBSERVATION = 0
SIMULATION = 1
SHUFFLE = 2
DROPOUT = 3
ATOMS = 4
PROPOSAL = 5
INIT = 6
EVALUATION = 7


def stream(experiment_seed, kind=SIMULATION, round_index=0, item_index=0):
    """Philox generator for one (seed, kind, round, item) key."""
    ss = np.random.SeedSequence(
        entropy=int(experiment_seed),
        spawn_key=(int(kind), int(round_index), int(item_index)),
    )
    return np.random.Generator(np.random.Philox(ss))
