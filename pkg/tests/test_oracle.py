import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitpim.bitplane import QuantizedTensor
from bitpim.exceptions import DomainError
from bitpim.oracle import conv_int_oracle, eq1_scalar_oracle, popcount_oracle


def test_popcount_oracle():
    assert popcount_oracle([1, 0, 1, 1]) == 3
    assert popcount_oracle(np.zeros(9, np.uint8)) == 0


def test_conv_oracle_frozen():
    I = QuantizedTensor(np.arange(32).reshape(2, 4, 4) % 4, 2)
    W = QuantizedTensor((np.arange(54).reshape(3, 2, 3, 3) * 7) % 4, 2)
    assert np.asarray(conv_int_oracle(I, W)).tolist() == [
        [[31, 58], [31, 58]],
        [[23, 50], [23, 50]],
        [[31, 58], [31, 58]],
    ]


def test_dot_product():
    assert conv_int_oracle(QuantizedTensor(np.array([3, 1]), 2), QuantizedTensor(np.array([1, 2]), 2)) == 5


def test_eq1_frozen():
    assert eq1_scalar_oracle([3, 1, 2, 0], [1, 2, 3, 3], 2, 2) == 11
    assert eq1_scalar_oracle([15, 7], [1, 9], 4, 4) == 78
    with pytest.raises(DomainError):
        eq1_scalar_oracle([4], [1], 2, 2)


@given(st.integers(1, 8), st.integers(1, 8), st.data())
def test_eq1_equals_dot(m, n, data):
    size = data.draw(st.integers(1, 20))
    I = data.draw(st.lists(st.integers(0, 2 ** m - 1), min_size=size, max_size=size))
    W = data.draw(st.lists(st.integers(0, 2 ** n - 1), min_size=size, max_size=size))
    assert eq1_scalar_oracle(I, W, m, n) == sum(a * b for a, b in zip(I, W))
