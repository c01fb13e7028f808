"""Named random streams derived from one global seed."""

from typing import Dict

import numpy as np

from .errors import ConfigurationError

STREAMS: Dict[str, int] = {
    "weights-init": 0,
    "batch-shuffle": 1,
    "injection-values": 2,
    "fat2-layer-choice": 3,
    "eval-subset": 4,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream ``name`` of ``seed``.

    Each name has a fixed spawn key, so one component can change how many
    numbers it draws without shifting any other stream.
    """
    if name not in STREAMS:
        raise ConfigurationError(f"Unknown random stream '{name}'; expected one of",
                                 STREAMS.keys())
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.PCG64(seq))


def streams(seed: int) -> Dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}
