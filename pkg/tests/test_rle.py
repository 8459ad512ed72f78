import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convogen import rle


def test_round_trip_simple():
    mask = np.zeros((4, 5), dtype=bool)
    mask[1:3, 2:4] = True
    encoded = rle.encode(mask)
    assert encoded.startswith("5x4:")
    assert np.array_equal(rle.decode(encoded), mask)


def test_all_background_and_all_foreground():
    empty = np.zeros((3, 3), dtype=bool)
    full = np.ones((3, 3), dtype=bool)
    assert rle.encode(empty) == "3x3:9"
    assert rle.encode(full) == "3x3:0 9"
    assert rle.foreground_area(rle.encode(empty)) == 0
    assert rle.foreground_area(rle.encode(full)) == 9


def test_grid_size_and_area():
    encoded = rle.from_bbox((1, 1, 2, 2), 5, 4)
    assert rle.grid_size(encoded) == (5, 4)
    assert rle.foreground_area(encoded) == 4


def test_bad_runs_rejected():
    with pytest.raises(ValueError):
        rle.decode("3x3:4")  # sums to 4, not 9
    with pytest.raises(ValueError):
        rle.decode("no-header")


@given(
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_round_trip_random(width, height, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((height, width)) > 0.5
    assert np.array_equal(rle.decode(rle.encode(mask)), mask)
