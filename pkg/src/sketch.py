"""Streaming percentile estimation of the reward range.

Backed by DDSketch: log-spaced buckets give every quantile a relative error
of at most `relative_accuracy`, with separate stores for negative values and
a zero lane.
"""
import numpy as np
from ddsketch import DDSketch

from src.errors import EmptyStreamError, UsageError

DEFAULT_RELATIVE_ACCURACY = 0.01


class PercentileSketch:
    def __init__(self, relative_accuracy: float = DEFAULT_RELATIVE_ACCURACY):
        if not 0.0 < relative_accuracy < 1.0:
            raise UsageError(f"relative accuracy must lie in (0, 1), got {relative_accuracy}")
        self.relative_accuracy = relative_accuracy
        self._sketch = DDSketch(relative_accuracy=relative_accuracy)

    @property
    def count(self) -> int:
        return int(self._sketch.count)

    def __len__(self):
        return self.count

    def insert(self, value: float):
        self._sketch.add(float(value))

    def insert_many(self, values):
        for value in np.asarray(values, dtype=float).reshape(-1):
            self._sketch.add(float(value))

    def quantile(self, q: float) -> float:
        if not 0.0 <= q <= 1.0:
            raise UsageError(f"quantile must lie in [0, 1], got {q}")
        if self.count == 0:
            raise EmptyStreamError("quantile queried on an empty sketch")
        return float(self._sketch.get_quantile_value(q))


def sketch_insert(sketch: PercentileSketch, r: float) -> PercentileSketch:
    sketch.insert(r)
    return sketch


def sketch_quantile(sketch: PercentileSketch, q: float) -> float:
    return sketch.quantile(q)


def exact_quantile(values, q: float) -> float:
    """Sort oracle with the sketch's rank convention: sorted[floor(q * (n - 1))]"""
    ordered = np.sort(np.asarray(values, dtype=float))
    if ordered.size == 0:
        raise EmptyStreamError("quantile of an empty stream")
    return float(ordered[int(np.floor(q * (ordered.size - 1)))])
