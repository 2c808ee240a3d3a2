"""Independent counter-based RNG streams per run.

Each consumer (initial design, base samples, acquisition raw samples,
objective noise, minibatch shuffling, trust-region re-seeding) gets its own
Philox stream spawned from the run seed, so toggling one feature never
shifts another's draws.
"""

from __future__ import annotations

import numpy as np

STREAMS = ("init_design", "base_samples", "acq_samples", "objective_noise", "shuffle", "reseed")


class RngStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        root = np.random.SeedSequence(self.seed)
        children = root.spawn(len(STREAMS))
        self._gens = {
            name: np.random.Generator(np.random.Philox(child))
            for name, child in zip(STREAMS, children)
        }

    def __getattr__(self, name: str) -> np.random.Generator:
        try:
            return self._gens[name]
        except KeyError:
            raise AttributeError(name) from None
