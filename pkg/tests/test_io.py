import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville.io import atomic_write_text, dumps, format_field, parse_field, read_field, write_field, write_json
from liouville.mesh import MeshFormatError

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40))
def test_field_round_trip_is_bit_exact(values):
    a = np.array(values)
    b = parse_field(format_field(a))
    assert np.array_equal(a.view(np.uint64), b.view(np.uint64)) or np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | finite | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=5), inner, max_size=4),
    max_leaves=12,
))
def test_dumps_is_valid_json_and_exact(obj):
    text = dumps(obj)
    assert json.loads(text) == json.loads(json.dumps(obj))
    assert dumps(obj) == text


def test_dumps_formats_floats_with_17_digits():
    assert dumps(0.1) == "0.10000000000000001"
    assert dumps(2.0) == "2.0"
    assert dumps(np.float64(np.pi)) == "3.1415926535897931"
    assert dumps([math.nan, math.inf]) == '[\n  "nan",\n  "inf"\n]'


def test_field_errors():
    with pytest.raises(MeshFormatError):
        parse_field("FIELD 2\n0 1.0\n")
    with pytest.raises(MeshFormatError):
        parse_field("FIELD 2\n0 1.0\n0 2.0\n")
    with pytest.raises(MeshFormatError):
        parse_field("FIELDS 1\n0 1.0\n")
    assert parse_field("# c\nFIELD 2\n1 2.5\n0 -1\n").tolist() == [-1.0, 2.5]


def test_atomic_writes(tmp_path):
    path = tmp_path / "sub" / "a.json"
    write_json(path, {"x": 1.5})
    assert json.loads(path.read_text()) == {"x": 1.5}
    atomic_write_text(path, "replaced")
    assert path.read_text() == "replaced"
    assert [p.name for p in path.parent.iterdir()] == ["a.json"]
    write_field(tmp_path / "f.field", [1.0, 2.0])
    assert read_field(tmp_path / "f.field").tolist() == [1.0, 2.0]
