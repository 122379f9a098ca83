"""Per-run random streams.

One seed per run is expanded into independent generators so that, for
example, changing the exploration schedule never shifts the noise draws.
"""
from typing import NamedTuple

import numpy as np


class Streams(NamedTuple):
    noise: np.random.Generator
    env: np.random.Generator
    agent: np.random.Generator
    critic: np.random.Generator
    evaluation: np.random.Generator


def make_streams(seed: int) -> Streams:
    children = np.random.SeedSequence(seed).spawn(len(Streams._fields))
    return Streams(*(np.random.default_rng(child) for child in children))
