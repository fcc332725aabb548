import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitpim.bitplane import QuantizedTensor
from bitpim.costmodel import AccumulationMode, CostParams
from bitpim.engine import (
    BitwiseCNN,
    NetworkProgram,
    conv_bitwise,
    epu_activation,
    epu_avgpool,
    epu_batchnorm,
    run_network,
)
from bitpim.exceptions import ParameterError, StructuralError, VerificationError
from bitpim.mapping import ConvLayerSpec
from bitpim.oracle import conv_int_oracle

WIDTHS = (1, 2, 4, 8)


@st.composite
def conv_case(draw):
    m = draw(st.sampled_from(WIDTHS))
    n = draw(st.sampled_from(WIDTHS))
    c = draw(st.integers(1, 3))
    k = draw(st.integers(1, 3))
    h = draw(st.integers(k, 6))
    w = draw(st.integers(k, 6))
    oc = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    I = QuantizedTensor(rng.integers(0, 2 ** m, (c, h, w)), m)
    W = QuantizedTensor(rng.integers(0, 2 ** n, (oc, c, k, k)), n)
    return I, W


@settings(max_examples=60)
@given(conv_case())
def test_conv_matches_oracle(case):
    I, W = case
    out, report = conv_bitwise(I, W)
    assert np.array_equal(out, conv_int_oracle(I, W))
    report.check()


def test_dot_product_example():
    out, _ = conv_bitwise(QuantizedTensor(np.array([3, 1]), 2), QuantizedTensor(np.array([1, 2]), 2))
    assert out == 5


def test_frozen_conv():
    I = QuantizedTensor(np.arange(32).reshape(2, 4, 4) % 4, 2)
    W = QuantizedTensor((np.arange(54).reshape(3, 2, 3, 3) * 7) % 4, 2)
    out, _ = conv_bitwise(I, W)
    assert out.tolist() == [[[31, 58], [31, 58]], [[23, 50], [23, 50]], [[31, 58], [31, 58]]]


def test_stride_and_padding():
    rng = np.random.default_rng(5)
    I = QuantizedTensor(rng.integers(0, 4, (2, 7, 7)), 2)
    W = QuantizedTensor(rng.integers(0, 2, (3, 2, 3, 3)), 1)
    layer = ConvLayerSpec(2, 3, 3, 3, 7, 7, stride=2, padding=1, weight_bits=1, input_bits=2)
    out, _ = conv_bitwise(I, W, layer)
    assert out.shape == (3, 4, 4)
    assert np.array_equal(out, conv_int_oracle(I, W, layer))


def test_serial_mode_same_result():
    rng = np.random.default_rng(6)
    I = QuantizedTensor(rng.integers(0, 16, (3, 5, 5)), 4)
    W = QuantizedTensor(rng.integers(0, 4, (2, 3, 3, 3)), 2)
    a, ra = conv_bitwise(I, W)
    b, rb = conv_bitwise(I, W, cost=CostParams(accumulation_mode=AccumulationMode.SERIAL_BITCOUNT))
    assert np.array_equal(a, b)
    assert rb.cycles > ra.cycles


def test_shape_errors():
    with pytest.raises(StructuralError):
        conv_bitwise(QuantizedTensor(np.zeros(3, int), 1), QuantizedTensor(np.zeros(4, int), 1))
    I = QuantizedTensor(np.zeros((2, 3, 3), int), 1)
    with pytest.raises(StructuralError):
        conv_bitwise(I, QuantizedTensor(np.zeros((1, 3, 2, 2), int), 1))


def test_epu_functions():
    assert epu_activation([-1.0, 0.0, 2.0], "sign").tolist() == [0.0, 1.0, 1.0]
    assert epu_activation([0.0], "half_tanh").tolist() == [0.5]
    with pytest.raises(ParameterError):
        epu_activation([0.0], "relu6")
    x = np.arange(16, dtype=np.int64).reshape(1, 4, 4)
    assert epu_avgpool(x, 2).tolist() == [[[2, 4], [10, 12]]]
    assert epu_avgpool(x.astype(float), 2).tolist() == [[[2.5, 4.5], [10.5, 12.5]]]
    y = epu_batchnorm(np.ones((2, 2, 2)), [1.0, 0.0], [1.0, 4.0], [1.0, 2.0], [0.0, 1.0], eps=0.0)
    assert y[0].tolist() == [[0.0, 0.0], [0.0, 0.0]] and y[1].tolist() == [[2.0, 2.0], [2.0, 2.0]]


def test_network_verify_passes(tiny_network, tiny_input):
    res = run_network(NetworkProgram(tiny_network), tiny_input, verify=True, keep_outputs=True)
    assert res.scores.shape == (5,)
    assert len(res.layer_outputs) == len(tiny_network.layers)
    res.report.check()


def test_verify_detects_corruption(tiny_network, tiny_input):
    program = NetworkProgram(tiny_network)
    stage = program.stages[1]
    original = stage.job.run_frame

    def faulty(f, acc):
        original(f, acc)
        if f == 0:
            acc.accumulate(1, index=0)

    stage.job.run_frame = faulty
    with pytest.raises(VerificationError, match="conv2"):
        run_network(program, tiny_input, verify=True)


def test_estimator_api(tiny_network, tiny_input, tiny_reference):
    clf = BitwiseCNN(network=tiny_network)
    assert set(clf.get_params()) == {"network", "hierarchy", "cost_params", "verify"}
    clf.fit(tiny_input[None])
    scores = clf.decision_function(tiny_input[None])
    assert np.array_equal(scores[0], tiny_reference)
    assert clf.predict(tiny_input[None]).tolist() == [int(np.argmax(tiny_reference))]
    with pytest.raises(StructuralError):
        BitwiseCNN(network=tiny_network).fit(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ParameterError):
        BitwiseCNN().fit()


def test_predict_before_fit(tiny_network, tiny_input):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        BitwiseCNN(network=tiny_network).predict(tiny_input[None])
