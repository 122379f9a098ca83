import numpy as np
import pytest

from src.errors import EmptyStreamError, UsageError
from src.sketch import PercentileSketch, exact_quantile, sketch_insert, sketch_quantile

ALPHA = 0.01


def _within(value: float, exact: float) -> bool:
    return abs(value - exact) <= ALPHA * abs(exact) * (1 + 1e-6) + 1e-12


def test_singleton_stream():
    sketch = sketch_insert(PercentileSketch(ALPHA), 7.0)
    assert sketch.count == 1
    for q in (0.0, 0.05, 0.5, 1.0):
        assert sketch_quantile(sketch, q) == pytest.approx(7.0, rel=ALPHA * 1.001)


def test_small_integer_stream():
    sketch = PercentileSketch(ALPHA)
    sketch.insert_many(np.arange(1, 101))
    assert _within(sketch.quantile(0.05), 5.0)
    assert _within(sketch.quantile(0.95), 95.0)


def test_empty_sketch_has_no_quantiles():
    with pytest.raises(EmptyStreamError):
        PercentileSketch().quantile(0.5)
    with pytest.raises(EmptyStreamError):
        exact_quantile([], 0.5)


@pytest.mark.parametrize("q", [-0.1, 1.5])
def test_quantile_outside_unit_interval(q):
    sketch = PercentileSketch()
    sketch.insert(1.0)
    with pytest.raises(UsageError):
        sketch.quantile(q)


def test_invalid_accuracy():
    with pytest.raises(UsageError):
        PercentileSketch(0.0)


def test_gaussian_stream_with_outliers():
    rng = np.random.default_rng(0)
    values = np.concatenate([rng.normal(0.0, 1.0, 10_000), np.full(10, 1e6), np.full(10, -1e6)])
    rng.shuffle(values)
    sketch = PercentileSketch(ALPHA)
    sketch.insert_many(values)
    for q in (0.05, 0.5, 0.95):
        assert _within(sketch.quantile(q), exact_quantile(values, q))


def test_negative_and_zero_values():
    sketch = PercentileSketch(ALPHA)
    values = np.array([-3.0, -2.0, 0.0, 0.0, 1.0])
    sketch.insert_many(values)
    assert sketch.quantile(0.0) == pytest.approx(-3.0, rel=ALPHA * 1.001)
    assert sketch.quantile(0.5) == 0.0
