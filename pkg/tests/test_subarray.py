import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitpim.exceptions import BoundsError, InvalidOperandError, ParameterError
from bitpim.subarray import DeviceParams, SenseConfig, SenseMode, SubArray, sense_margin_mc

bits = st.lists(st.integers(0, 1), min_size=16, max_size=16)


@given(bits, bits)
def test_two_row_logic(a, b):
    sa = SubArray(4, 16)
    sa.write_row(0, a).write_row(3, b)
    a, b = np.array(a), np.array(b)
    assert sa.compute_rows(0, 3, SenseMode.AND).tolist() == (a & b).tolist()
    assert sa.compute_rows(0, 3, SenseConfig("OR")).tolist() == (a | b).tolist()
    assert sa.compute_rows(0, 3, "XOR").tolist() == (a ^ b).tolist()


def test_compute_truth_table_and_counters():
    sa = SubArray(2, 4)
    sa.write_row(0, [0, 0, 1, 1]).write_row(1, [0, 1, 0, 1])
    assert sa.compute_rows(0, 1, "AND").tolist() == [0, 0, 0, 1]
    assert sa.read_row(1).tolist() == [0, 1, 0, 1]
    assert (sa.n_writes, sa.n_reads, sa.n_computes) == (2, 1, 1)


def test_read_returns_copy():
    sa = SubArray(2, 4)
    sa.write_row(0, [1, 1, 1, 1])
    row = sa.read_row(0)
    row[:] = 0
    assert sa.read_row(0).tolist() == [1, 1, 1, 1]


def test_errors():
    sa = SubArray(2, 4)
    with pytest.raises(BoundsError):
        sa.write_row(2, [0, 0, 0, 0])
    with pytest.raises(BoundsError):
        sa.write_row(0, [0, 0, 0])
    with pytest.raises(BoundsError):
        sa.write_row(0, [0, 2, 0, 0])
    with pytest.raises(InvalidOperandError):
        sa.compute_rows(1, 1, "AND")
    with pytest.raises(InvalidOperandError):
        sa.compute_rows(0, 1, "READ")
    with pytest.raises(ParameterError):
        DeviceParams(r_low=float("nan"))
    with pytest.raises(ParameterError):
        DeviceParams(r_low=6000.0, r_high=3000.0)


def test_levels_and_references_frozen():
    p = DeviceParams()
    lv = p.ideal_levels()
    assert lv["00"] == pytest.approx(50.0)
    assert lv["01"] == pytest.approx(39.285714285714285)
    assert lv["11"] == pytest.approx(28.571428571428573)
    refs = p.references()
    assert lv["11"] < refs["AND"] < lv["01"] < refs["OR"] < lv["00"]
    assert lv["AP"] < refs["M"] < lv["P"]
    r = p.reference_resistances()
    assert r["OR"] == pytest.approx(2240.0)
    assert r["AND"] == pytest.approx(2947.368421052631)
    assert r["M"] == pytest.approx(5090.909090909091)


def test_mc_zero_sigma_is_exact():
    rep = sense_margin_mc(DeviceParams(sigma_ra=0.0, sigma_tmr=0.0), 5000, 3)
    assert rep.misclassification_rate == 0.0
    assert all(v == 0.0 for v in rep.state_misclass.values())


def test_mc_frozen_default_point():
    rep = sense_margin_mc(DeviceParams(), 100_000, 0)
    assert rep.mode_misclass == pytest.approx({"AND": 0.0, "OR": 2 / 300_000, "XOR": 2 / 300_000, "READ": 0.0})
    assert rep.state_mean["01"] == pytest.approx(39.35492227834391)


def test_mc_reproducible_and_csv(tmp_path):
    a = sense_margin_mc(DeviceParams(sigma_ra=0.1), 2000, 9)
    b = sense_margin_mc(DeviceParams(sigma_ra=0.1), 2000, 9)
    assert a.to_csv() == b.to_csv()
    path = tmp_path / "m.csv"
    text = a.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "state,mean,std,misclass_rate"
    assert [l.split(",")[0] for l in lines[1:]] == ["00", "01", "11", "P", "AP"]
    assert path.read_text() == text


def test_mc_bad_trials():
    with pytest.raises(ParameterError):
        sense_margin_mc(DeviceParams(), 0)
