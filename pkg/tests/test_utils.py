"""Tests for utility functions."""

import csv
import json

import numpy as np
import pytest

from htbb.exceptions import RankTooLargeError
from htbb.utils import (
    capacity,
    dumps_json,
    format_float,
    row_keys,
    sample_distinct,
    write_csv,
)


class TestCapacity:
    """Test cases for capacity."""

    def test_product(self):
        """Test the product of mode sizes."""
        assert capacity([2, 3, 4]) == 24

    def test_empty(self):
        """Test that the empty mode set has one vector."""
        assert capacity([]) == 1

    def test_no_overflow(self):
        """Test that huge spaces stay exact integers."""
        assert capacity([8] * 256) == 8**256


class TestRowKeys:
    """Test cases for row_keys."""

    def test_equal_rows_equal_keys(self):
        """Test that keys identify rows by value."""
        keys = row_keys(np.array([[1, 2], [2, 1], [1, 2]]))
        assert keys[0] == keys[2]
        assert keys[0] != keys[1]

    def test_dtype_independent(self):
        """Test that int32 and int64 rows share keys."""
        a = np.array([[3, 4]], dtype=np.int32)
        b = np.array([[3, 4]], dtype=np.int64)
        assert row_keys(a) == row_keys(b)


class TestSampleDistinct:
    """Test cases for sample_distinct."""

    def test_distinct_and_in_bounds(self, rng):
        """Test drawn vectors on a small box."""
        values = sample_distinct(rng, [3, 4], 10)
        assert values.shape == (10, 2)
        assert len(set(row_keys(values))) == 10
        assert (values >= 0).all()
        assert (values < np.array([3, 4])).all()

    def test_exclusion(self, rng):
        """Test that excluded vectors are never drawn."""
        exclude = np.array([[0, 0], [1, 1], [2, 2]])
        values = sample_distinct(rng, [3, 3], 6, exclude)
        assert not set(row_keys(values)) & set(row_keys(exclude))
        assert len(set(row_keys(values))) == 6

    def test_exhausting_the_space(self, rng):
        """Test drawing every vector of the box."""
        values = sample_distinct(rng, [2, 2], 4)
        assert sorted(map(tuple, values.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_too_many(self, rng):
        """Test that asking for more than the box holds fails."""
        with pytest.raises(RankTooLargeError):
            sample_distinct(rng, [2, 2], 5)

    def test_too_many_after_exclusion(self, rng):
        """Test that excluded vectors reduce availability."""
        with pytest.raises(RankTooLargeError):
            sample_distinct(rng, [2], 2, np.array([[0]]))

    def test_empty_mode_set(self, rng):
        """Test the single empty vector."""
        assert sample_distinct(rng, [], 1).shape == (1, 0)

    def test_huge_space(self, rng):
        """Test the rejection path on a space beyond enumeration."""
        values = sample_distinct(rng, [10] * 7, 50)
        assert values.shape == (50, 7)
        assert len(set(row_keys(values))) == 50

    def test_reproducible(self):
        """Test that a seed fixes the draw."""
        a = sample_distinct(np.random.default_rng(5), [6, 6], 4)
        b = sample_distinct(np.random.default_rng(5), [6, 6], 4)
        np.testing.assert_array_equal(a, b)


class TestFormatting:
    """Test cases for float formatting and CSV output."""

    def test_format_float(self):
        """Test 17 significant digits."""
        assert format_float(0.1) == "0.10000000000000001"
        assert float(format_float(1 / 3)) == 1 / 3

    def test_write_csv(self, tmp_path):
        """Test header, integer and float cells."""
        path = tmp_path / "table.csv"
        write_csv(path, ["evals", "value"], [(100, 0.5), (200, 0.25)])
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["evals", "value"]
        assert rows[1] == ["100", "0.5"]
        assert rows[2] == ["200", "0.25"]

    def test_json_floats(self):
        """Test that JSON floats carry 17 significant digits and read back exactly."""
        text = dumps_json({"a": 0.1, "b": [1 / 3, 2.0, 1e20], "c": 3, "d": None})
        assert text == (
            '{"a": 0.10000000000000001, '
            '"b": [0.33333333333333331, 2.0, 1e+20], '
            '"c": 3, "d": null}'
        )
        loaded = json.loads(text)
        assert loaded["b"] == [1 / 3, 2.0, 1e20]
        assert isinstance(loaded["b"][1], float)
        assert isinstance(loaded["c"], int)

    def test_json_numpy_and_non_finite(self):
        """Test numpy scalars, arrays and non-finite values."""
        text = dumps_json([np.float64(0.5), np.int64(4), np.array([1, 2]), np.nan, -np.inf, True])
        assert text == "[0.5, 4, [1, 2], NaN, -Infinity, true]"

    def test_json_indent(self):
        """Test indented output matches the standard layout."""
        value = {"x": [1, {"y": 0.25}], "z": {}}
        assert dumps_json(value, indent=2) == json.dumps(value, indent=2)
