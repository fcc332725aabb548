import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitpim.exceptions import MappingError, ParameterError
from bitpim.mapping import ConvLayerSpec, MemoryHierarchy, count_bits, expected_rows, map_layer


def test_capacity_is_512_mbit():
    h = MemoryHierarchy()
    assert h.n_mats == 4096
    assert h.capacity_bits == 512 * 2 ** 20


def test_coordinates():
    h = MemoryHierarchy()
    assert h.coordinates(0) == (0, 0, 0)
    assert h.coordinates(5) == (0, 1, 1)
    assert h.coordinates(256) == (1, 0, 0)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 2000))
def test_single_position_rows(n, m, length):
    layer = ConvLayerSpec(length, 1, weight_bits=n, input_bits=m)
    plan = map_layer(layer)
    assert plan.operand_rows == expected_rows(layer)


def test_long_vectors_tile_columns():
    plan = map_layer(ConvLayerSpec(1200, 2, weight_bits=1, input_bits=2))
    assert [(u.col_start, u.col_len) for u in plan.units] == [(0, 512), (512, 512), (1024, 176)] * 2
    assert [u.mat for u in plan.units] == [0, 1, 2, 3, 4, 5]
    assert all(u.weight_rows == (0,) and u.input_rows == (1, 2) for u in plan.units)


def test_short_vectors_pack_slots():
    layer = ConvLayerSpec(16, 8, 3, 3, 8, 8, padding=1, weight_bits=2, input_bits=2)
    plan = map_layer(layer)
    assert plan.slots_per_row == 512 // 144 == 3
    assert len(plan.units) == 8 * 22
    covered = sorted(p for u in plan.units if u.out_channel == 0 for p in u.positions.tolist())
    assert covered == list(range(64))


def test_rows_lowest_first_in_a_mat():
    h = MemoryHierarchy(mats_per_bank=1, banks_per_group=1, groups=1)
    plan = map_layer(ConvLayerSpec(4, 3, weight_bits=2, input_bits=1), h)
    assert [(u.weight_rows, u.input_rows) for u in plan.units] == [((0, 1), (2,)), ((3, 4), (5,)), ((6, 7), (8,))]
    assert plan.scratch_rows == {0: 9}


def test_capacity_overflow_reports_rows():
    h = MemoryHierarchy(rows_per_mat=8, mats_per_bank=1, banks_per_group=1, groups=1)
    with pytest.raises(MappingError) as exc:
        map_layer(ConvLayerSpec(4, 5, weight_bits=1, input_bits=1), h)
    assert exc.value.required_rows == 11 and exc.value.available_rows == 8


def test_mapping_deterministic():
    layer = ConvLayerSpec(3, 4, 3, 3, 6, 6, weight_bits=2, input_bits=2)
    assert map_layer(layer).signature() == map_layer(layer).signature()


def test_layer_validation():
    with pytest.raises(ParameterError):
        ConvLayerSpec(0, 1)
    with pytest.raises(ParameterError):
        ConvLayerSpec(1, 1, 5, 5, 3, 3)
    with pytest.raises(ParameterError):
        map_layer(ConvLayerSpec(1, 1), batch=0)


def test_count_bits():
    assert [count_bits(n) for n in (1, 7, 8, 512)] == [1, 3, 4, 10]
