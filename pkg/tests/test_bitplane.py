import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bitpim.bitplane import (
    BitPlaneSet,
    FixedPointQuantizer,
    QuantizedTensor,
    decompose,
    dequantize,
    from_bytes,
    load_pimq,
    quantize,
    recompose,
    save_pimq,
    to_bytes,
)
from bitpim.exceptions import DomainError, IntegrityError, StructuralError


def test_quantize_known_values():
    # round half away from zero: 3 * 0.5 = 1.5 -> 2, 3 * (1/6) = 0.5 -> 1
    assert quantize(np.array([0.0, 0.5, 1 / 6, 1.0]), 2).values.tolist() == [0, 2, 1, 3]
    assert quantize(np.array([0.49, 0.5]), 1).values.tolist() == [0, 1]
    assert quantize(np.array([1.0]), 8).values.tolist() == [255]


def test_quantize_out_of_range_names_index():
    with pytest.raises(DomainError, match=r"\(1, 0\)"):
        quantize(np.array([[0.1, 0.2], [1.5, 0.0]]), 4)
    with pytest.raises(DomainError):
        quantize(np.array([np.nan]), 4)


def test_bad_bit_width():
    with pytest.raises(DomainError):
        quantize(np.array([0.5]), 0)
    with pytest.raises(StructuralError):
        QuantizedTensor(np.array([4]), 2)


def test_decompose_lsb_first():
    b = decompose(QuantizedTensor(np.array([1, 2, 3, 0]), 2))
    assert b.plane(0).tolist() == [1, 0, 1, 0]
    assert b.plane(1).tolist() == [0, 1, 1, 0]


def test_from_planes_shape_mismatch():
    with pytest.raises(StructuralError):
        BitPlaneSet.from_planes([[1, 0, 1], [1, 1]])


@given(st.integers(1, 16).flatmap(
    lambda k: st.tuples(st.just(k), hnp.arrays(np.uint64, hnp.array_shapes(max_dims=3, max_side=9),
                                                elements=st.integers(0, 2 ** k - 1)))))
def test_decompose_recompose_roundtrip(args):
    k, values = args
    q = QuantizedTensor(values, k)
    b = decompose(q)
    assert b.planes().shape[0] == k
    assert recompose(b) == q


@given(st.integers(1, 12), hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 1)))
def test_quantize_error_bounded(k, real):
    q = quantize(real, k)
    assert np.all(np.abs(dequantize(q) - real) <= 0.5 / (2 ** k - 1) + 1e-12)


@given(st.integers(1, 32), hnp.arrays(np.uint64, hnp.array_shapes(max_dims=4, max_side=5),
                                      elements=st.integers(0, 2 ** 32 - 1)))
def test_pimq_roundtrip(k, values):
    values = values & np.uint64(2 ** k - 1)
    q = QuantizedTensor(values, k)
    assert from_bytes(to_bytes(q)) == q


def test_pimq_layout_frozen():
    data = to_bytes(QuantizedTensor(np.array([[1, 2, 3]]), 2))
    assert data.hex() == "50494d5101020201000000030000000100000002000000" "03000000"


def test_pimq_rejects_corruption(tmp_path):
    data = to_bytes(QuantizedTensor(np.array([1, 2, 3]), 2))
    with pytest.raises(IntegrityError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(IntegrityError):
        from_bytes(data[:-1])
    path = tmp_path / "t.pimq"
    save_pimq(path, QuantizedTensor(np.array([5, 6]), 3))
    assert load_pimq(path).values.tolist() == [5, 6]


def test_quantizer_estimator():
    X = np.array([[0.0, 0.5], [1.0, 0.25]])
    qt = FixedPointQuantizer(bit_width=2).fit(X)
    assert qt.get_params() == {"bit_width": 2}
    assert qt.transform(X).tolist() == [[0, 2], [3, 1]]
    assert np.allclose(qt.inverse_transform(qt.transform(X)), [[0, 2 / 3], [1, 1 / 3]])
    with pytest.raises(DomainError):
        qt.transform(np.array([[2.0]]))
