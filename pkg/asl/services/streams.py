"""Counter-based random streams: one independent generator per (master seed, stream, run id)."""

import numpy as np

OBSERVATIONS = 0
SERIES = 1
SYNTHETIC = 2


def run_stream(master_seed: int, run_id: int, stream: int = OBSERVATIONS) -> np.random.Generator:
    """
    Generator for one run.

    Depends only on its key, never on how many runs came before or which worker draws it,
    so results do not change with execution order or pool size.
    """
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(run_id))))
