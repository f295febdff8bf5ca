import hashlib
import math
import json
from typing import Any, Callable

import numpy as np

__all__ = ('STREAMS', 'snapshot_rng', 'canonical_json', 'stable_hash',
           'get_cosine_schedule')

# Child streams of every synthetic snapshot, in spawn order
STREAMS = ("params", "snr", "noise")


def snapshot_rng(master_seed: int, index: int, stream: str) -> np.random.Generator:
    """Random stream `stream` of snapshot `index`.

    Depends only on (master_seed, index, stream), so snapshots can be
    regenerated individually and in any order.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    children = seq.spawn(len(STREAMS))
    return np.random.default_rng(children[STREAMS.index(stream)])


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stable_hash(obj: Any) -> str:
    "SHA-256 of the canonical JSON serialization of `obj`"
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def get_cosine_schedule(steps_per_cycle: int) -> Callable[[int], float]:
    def schedule(i: int) -> float:
        cycle_progress = (i % steps_per_cycle) / steps_per_cycle
        return 0.5 * (math.cos(math.pi * cycle_progress) + 1.)
    return schedule
