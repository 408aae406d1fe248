"""Per-trajectory random streams.

Each trajectory owns independent Philox streams keyed by
``(master_seed, trajectory_index, purpose)`` through ``SeedSequence`` spawn
keys, so a trajectory's noise never depends on which worker ran it or on how
many other trajectories were simulated alongside.
"""

from __future__ import annotations

import numpy as np

DYNAMICS = 0
READOUT = 1


def stream(master_seed: int, index: int, purpose: int = DYNAMICS) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index), int(purpose)))
    return np.random.Generator(np.random.Philox(seq))


def streams(master_seed: int, indices, purpose: int = DYNAMICS) -> list[np.random.Generator]:
    return [stream(master_seed, i, purpose) for i in indices]


def normal_block(gens: list[np.random.Generator], shape: tuple[int, ...]) -> np.ndarray:
    """Stack one ``shape``-sized standard-normal draw from every generator.

    Successive calls continue each stream, so splitting a long draw into
    blocks gives the same numbers as drawing it at once.
    """
    out = np.empty((len(gens),) + tuple(shape))
    for i, g in enumerate(gens):
        out[i] = g.standard_normal(shape)
    return out
