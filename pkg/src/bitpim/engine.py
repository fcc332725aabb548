"""Bit-wise convolution engine and network runner.

A quantized convolution runs entirely through the sub-array model: weight
and input bit planes are written into mat rows, every (n, m) plane pair is
ANDed in the array, the result is written back and read by the compressor
tree, the count is shifted by ``m + n`` in the adaptive shift register and
summed into the NV full adder.  Full-precision layers (first/last) run on the
plain integer path; both produce exact integers, which the EPU rescales,
normalizes and activates.

A layer's work is split into frames (one mapping work unit each for
bit-wise layers, one output channel for full-precision layers), the unit of
checkpointing used by :mod:`bitpim.intermittency`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import oracle
from .accumulator import (
    AdaptiveShiftRegister,
    NvAccumulatorState,
    NvMode,
    bits_to_int,
    cmp_popcount,
    int_to_bits,
    serial_bitcount,
)
from .bitplane import QuantizedTensor, dequantize, full_scale, quantize
from .costmodel import AccumulationMode, CostParams, CostReport, layer_cost, unit_cost
from .exceptions import DomainError, NumericError, ParameterError, StructuralError, VerificationError
from .mapping import ConvLayerSpec, MappingPlan, MemoryHierarchy, count_bits, map_layer
from .subarray import SenseMode, SubArray

FULL_PRECISION_ACC_WIDTH = 128


def im2col(values: np.ndarray, layer: ConvLayerSpec) -> np.ndarray:
    """Windows of a ``(C, H, W)`` tensor as rows, shape ``(positions, C*kh*kw)``."""
    c, h, w = values.shape
    p = layer.padding
    padded = np.zeros((c, h + 2 * p, w + 2 * p), dtype=values.dtype)
    padded[:, p:p + h, p:p + w] = values
    kh, kw, s = layer.kernel_h, layer.kernel_w, layer.stride
    oh, ow = layer.out_height, layer.out_width
    cols = np.empty((oh * ow, c, kh, kw), dtype=values.dtype)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, dy, dx] = padded[:, dy:dy + s * oh:s, dx:dx + s * ow:s].reshape(c, -1).T
    return cols.reshape(oh * ow, -1)


def _as_conv_operands(I: QuantizedTensor, W: QuantizedTensor, layer: ConvLayerSpec | None):
    if I.values.ndim == 1 and W.values.ndim == 1:
        if I.size != W.size:
            raise StructuralError("dot-product operands differ in length")
        I = I.reshape(I.size, 1, 1)
        W = W.reshape(1, W.size, 1, 1)
    if I.values.ndim != 3 or W.values.ndim != 4:
        raise StructuralError("expected I as (C,H,W) and W as (O,C,kh,kw)")
    c, h, w = I.shape
    oc, kc, kh, kw = W.shape
    if layer is None:
        layer = ConvLayerSpec(c, oc, kh, kw, h, w, weight_bits=W.bit_width, input_bits=I.bit_width)
    if (layer.in_channels, layer.in_height, layer.in_width) != (c, h, w):
        raise StructuralError(f"input shape {I.shape} does not match layer {layer.name!r}")
    if (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w) != (oc, kc, kh, kw):
        raise StructuralError(f"weight shape {W.shape} does not match layer {layer.name!r}")
    if layer.input_bits != I.bit_width or layer.weight_bits != W.bit_width:
        raise StructuralError(
            f"layer {layer.name!r} expects {layer.weight_bits}:{layer.input_bits} bits, "
            f"got {W.bit_width}:{I.bit_width}"
        )
    return I, W, layer


class BitwiseConvJob:
    """One quantized layer executed AND / CMP / shift / accumulate on sub-arrays."""

    def __init__(self, layer: ConvLayerSpec, W: QuantizedTensor, hier: MemoryHierarchy | None = None,
                 params: CostParams | None = None, plan: MappingPlan | None = None):
        self.layer = layer
        self.hier = hier or MemoryHierarchy()
        self.params = params or CostParams()
        self.plan = plan or map_layer(layer, self.hier)
        self.weights = W
        n = layer.weight_bits
        wflat = W.values.reshape(layer.out_channels, -1).astype(np.int64)
        self.w_planes = np.stack([((wflat >> b) & 1).astype(np.uint8) for b in range(n)])
        max_len = max((u.col_len for u in self.plan.units), default=1)
        self.asr = AdaptiveShiftRegister(count_bits(max_len), layer.weight_bits + layer.input_bits - 2)
        self.in_planes = None
        self.subarrays = {}
        self._frame_cycles = None

    @property
    def n_frames(self) -> int:
        return len(self.plan.units)

    @property
    def n_registers(self) -> int:
        return self.layer.out_channels * self.layer.n_positions

    def new_accumulator(self, checkpoint_interval=None, nv_mode=NvMode.TWO_FF) -> NvAccumulatorState:
        return NvAccumulatorState(
            size=self.n_registers,
            width=self.params.accumulator_width,
            checkpoint_interval=checkpoint_interval or self.params.checkpoint_interval,
            nv_mode=nv_mode,
        )

    def start(self, I: QuantizedTensor) -> None:
        windows = im2col(I.values.astype(np.int64), self.layer)
        self.in_planes = np.stack([((windows >> b) & 1).astype(np.uint8) for b in range(self.layer.input_bits)])
        self.subarrays = {}

    def _mat(self, mat: int) -> SubArray:
        sub = self.subarrays.get(mat)
        if sub is None:
            sub = self.subarrays[mat] = SubArray(self.hier.rows_per_mat, self.hier.cols_per_mat)
        return sub

    def frame_cycles(self, f: int) -> int:
        if self._frame_cycles is None:
            self._frame_cycles = [sum(unit_cost(self.plan, u, self.params)[0].values()) for u in self.plan.units]
        return self._frame_cycles[f]

    def run_frame(self, f: int, acc: NvAccumulatorState) -> None:
        unit = self.plan.units[f]
        sub = self._mat(unit.mat)
        cols = self.hier.cols_per_mat
        seg, slots = unit.col_len, unit.slots
        used = seg * slots
        cs = slice(unit.col_start, unit.col_start + seg)
        row = np.zeros(cols, np.uint8)
        for n, r in enumerate(unit.weight_rows):
            row[:used] = np.tile(self.w_planes[n, unit.out_channel, cs], slots)
            sub.write_row(r, row)
        for m, r in enumerate(unit.input_rows):
            row[:used] = self.in_planes[m][unit.positions, cs].reshape(-1)
            sub.write_row(r, row)

        # AND every (n, m) plane pair, write the result back and read it out
        scratch = self.plan.scratch_rows[unit.mat]
        pairs, results = [], []
        for n, wr in enumerate(unit.weight_rows):
            for m, ir in enumerate(unit.input_rows):
                sub.write_row(scratch, sub.compute_rows(wr, ir, SenseMode.AND))
                results.append(sub.read_row(scratch)[:used])
                pairs.append((n, m))

        # every row segment goes through its own compressor tree; the trees are evaluated as one batch
        segments = np.stack(results).reshape(-1, seg)
        if self.params.accumulation_mode is AccumulationMode.SERIAL_BITCOUNT:
            counts = serial_bitcount(segments, self.params.serial_bitcount_width).count
        else:
            counts = cmp_popcount(segments).count
        count_bits_ = int_to_bits(counts.reshape(len(pairs), slots), self.asr.input_width)

        registers = unit.out_channel * self.layer.n_positions + unit.positions
        for k, (n, m) in enumerate(pairs):
            shifted = bits_to_int(self.asr.shift(count_bits_[k], m + n))
            acc.accumulate(shifted, index=registers)

    def output(self, acc: NvAccumulatorState) -> np.ndarray:
        return acc.value.reshape(self.layer.out_channels, self.layer.out_height, self.layer.out_width)

    def cost(self) -> CostReport:
        return layer_cost(self.plan, self.layer, self.params)


class FullPrecisionConvJob:
    """First/last layers: exact integer convolution off the bit-wise path, one frame per output channel."""

    def __init__(self, layer: ConvLayerSpec, W: QuantizedTensor, hier=None, params=None):
        self.layer = layer
        self.hier = hier or MemoryHierarchy()
        self.params = params or CostParams()
        self.weights = W
        self.wflat = W.values.reshape(layer.out_channels, -1).astype(object)
        self.windows = None
        self._plan = None
        self._frame_cycles = None

    @property
    def plan(self) -> MappingPlan:
        if self._plan is None:
            self._plan = map_layer(self.layer, self.hier)
        return self._plan

    @property
    def n_frames(self) -> int:
        return self.layer.out_channels

    @property
    def n_registers(self) -> int:
        return self.layer.out_channels * self.layer.n_positions

    def new_accumulator(self, checkpoint_interval=None, nv_mode=NvMode.TWO_FF) -> NvAccumulatorState:
        return NvAccumulatorState(
            size=self.n_registers,
            width=FULL_PRECISION_ACC_WIDTH,
            checkpoint_interval=checkpoint_interval or self.params.checkpoint_interval,
            nv_mode=nv_mode,
        )

    def start(self, I: QuantizedTensor) -> None:
        self.windows = im2col(I.values.astype(object), self.layer)

    def frame_cycles(self, f: int) -> int:
        if self._frame_cycles is None:
            per = [0] * self.layer.out_channels
            for u in self.plan.units:
                per[u.out_channel] += sum(unit_cost(self.plan, u, self.params)[0].values())
            self._frame_cycles = per
        return self._frame_cycles[f]

    def run_frame(self, f: int, acc: NvAccumulatorState) -> None:
        p = self.layer.n_positions
        acc.accumulate(self.windows.dot(self.wflat[f]), index=slice(f * p, (f + 1) * p))

    def output(self, acc: NvAccumulatorState) -> np.ndarray:
        return acc.value.reshape(self.layer.out_channels, self.layer.out_height, self.layer.out_width)

    def cost(self) -> CostReport:
        return layer_cost(self.plan, self.layer, self.params)


def conv_bitwise(I: QuantizedTensor, W: QuantizedTensor, layer: ConvLayerSpec | None = None,
                 hier: MemoryHierarchy | None = None, cost: CostParams | None = None):
    """Quantized convolution through the in-memory datapath.

    Returns ``(integer output (O, H', W'), CostReport)``; a pair of 1-D
    operands is treated as a single dot product and returns a scalar.
    """
    vector_case = I.values.ndim == 1 and W.values.ndim == 1
    I, W, layer = _as_conv_operands(I, W, layer)
    job = BitwiseConvJob(layer, W, hier, cost)
    job.start(I)
    acc = job.new_accumulator()
    for f in range(job.n_frames):
        job.run_frame(f, acc)
    if acc.saturated:
        raise NumericError(f"accumulator saturated in layer {layer.name!r}")
    out = job.output(acc)
    report = job.cost()
    return (int(out[0, 0, 0]) if vector_case else out), report


# -- EPU -------------------------------------------------------------------------


class Activation(str, enum.Enum):
    HALF_TANH = "half_tanh"
    SIGN = "sign"
    IDENTITY = "identity"


def epu_activation(x, kind) -> np.ndarray:
    """HALF_TANH: (tanh(x) + 1) / 2.  SIGN: 1 where x >= 0 else 0 (so sign(0) = 1)."""
    try:
        kind = Activation(kind.lower() if isinstance(kind, str) else kind)
    except ValueError:
        raise ParameterError(f"unknown activation {kind!r}") from None
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("activation input must be finite")
    if kind is Activation.HALF_TANH:
        return (np.tanh(x) + 1.0) / 2.0
    if kind is Activation.SIGN:
        return (x >= 0).astype(np.float64)
    return x


@dataclass(frozen=True)
class BatchNormParams:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5


def epu_batchnorm(x, mean, var, gamma, beta, eps=1e-5, axis=0) -> np.ndarray:
    """(x - mean) / sqrt(var + eps) * gamma + beta; per-channel parameters broadcast along ``axis``."""
    x = np.asarray(x, dtype=np.float64)

    def chan(p):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim == 1 and x.ndim > 1:
            shape = [1] * x.ndim
            shape[axis] = p.size
            return p.reshape(shape)
        return p

    denom = chan(var) + eps
    if np.any(denom <= 0):
        raise NumericError("batch norm needs var + eps > 0")
    return (x - chan(mean)) / np.sqrt(denom) * chan(gamma) + chan(beta)


def epu_avgpool(x, window: int, stride: int | None = None) -> np.ndarray:
    """Average pool a ``(C, H, W)`` tensor.

    Integer tensors use floor division of the window sum; float tensors use
    the exact mean.
    """
    x = np.asarray(x)
    stride = stride or window
    if x.ndim == 2:
        x = x[None]
        squeeze = True
    else:
        squeeze = False
    if x.ndim != 3:
        raise StructuralError("avgpool expects (C, H, W)")
    c, h, w = x.shape
    if window < 1 or stride < 1 or (h - window) % stride or (w - window) % stride or h < window or w < window:
        raise StructuralError(f"window {window} / stride {stride} does not tile a {h}x{w} map")
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    acc = np.zeros((c, oh, ow), dtype=np.int64 if x.dtype.kind in "iu" else np.float64)
    for dy in range(window):
        for dx in range(window):
            acc += x[:, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride]
    out = acc // (window * window) if x.dtype.kind in "iu" else acc / (window * window)
    return out[0] if squeeze else out


# -- networks ------------------------------------------------------------------------


@dataclass
class LayerDef:
    """One entry of a model description."""

    kind: str  # "conv", "fc" or "avgpool"
    name: str = ""
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    weight_bits: int = 1
    input_bits: int = 1
    quantize: bool = True
    weights: QuantizedTensor | None = None
    activation: str = "identity"
    bn: BatchNormParams | None = None
    window: int = 2


@dataclass
class Network:
    layers: list
    input_shape: tuple
    name: str = "network"

    def resolve(self) -> list:
        """(LayerDef, ConvLayerSpec | None) per layer with shapes propagated."""
        c, h, w = self.input_shape
        out = []
        for i, ld in enumerate(self.layers):
            name = ld.name or f"layer{i}"
            if ld.kind == "avgpool":
                s = ld.stride or ld.window
                if h < ld.window or w < ld.window or (h - ld.window) % s or (w - ld.window) % s:
                    raise StructuralError(f"{name}: pool window {ld.window} does not tile {h}x{w}")
                h, w = (h - ld.window) // s + 1, (w - ld.window) // s + 1
                out.append((ld, None))
                continue
            if ld.kind == "fc":
                spec = ConvLayerSpec(c * h * w, ld.out_channels, 1, 1, 1, 1, 1, 0,
                                     ld.weight_bits, ld.input_bits, ld.quantize, name)
            elif ld.kind == "conv":
                spec = ConvLayerSpec(c, ld.out_channels, ld.kernel, ld.kernel, h, w, ld.stride, ld.padding,
                                     ld.weight_bits, ld.input_bits, ld.quantize, name)
            else:
                raise ParameterError(f"{name}: unknown layer kind {ld.kind!r}")
            if ld.weights is None:
                raise StructuralError(f"{name}: weights missing")
            expected = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
            if int(np.prod(ld.weights.shape)) != int(np.prod(expected)):
                raise StructuralError(f"{name}: weights have shape {ld.weights.shape}, layer needs {expected}")
            if ld.weights.bit_width != ld.weight_bits:
                raise StructuralError(f"{name}: weights are {ld.weights.bit_width}-bit, layer says {ld.weight_bits}")
            out.append((ld, spec))
            c, h, w = spec.out_channels, spec.out_height, spec.out_width
        return out

    @property
    def n_classes(self) -> int:
        shape = self.output_shape
        return int(np.prod(shape))

    @property
    def output_shape(self) -> tuple:
        c, h, w = self.input_shape
        for ld, spec in self.resolve():
            if spec is None:
                s = ld.stride or ld.window
                h, w = (h - ld.window) // s + 1, (w - ld.window) // s + 1
            else:
                c, h, w = spec.out_channels, spec.out_height, spec.out_width
        return c, h, w

    def conv_specs(self) -> list:
        return [spec for _, spec in self.resolve() if spec is not None]


class PoolJob:
    n_frames = 0
    n_registers = 0

    def __init__(self, ld: LayerDef):
        self.ld = ld
        self.layer = None

    def new_accumulator(self, *args, **kwargs):
        return None

    def cost(self) -> CostReport:
        return CostReport()


class LayerStage:
    """A network layer: its job plus the EPU steps around it."""

    def __init__(self, ld: LayerDef, spec: ConvLayerSpec | None, hier, params):
        self.ld = ld
        self.spec = spec
        if spec is None:
            self.job = PoolJob(ld)
        else:
            weights = ld.weights.reshape(spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
            cls = BitwiseConvJob if spec.quantize else FullPrecisionConvJob
            self.job = cls(spec, weights, hier, params)
        self.last_input = None

    @property
    def name(self) -> str:
        return self.spec.name if self.spec is not None else (self.ld.name or "avgpool")

    def prepare(self, x) -> None:
        if self.spec is None:
            return
        if isinstance(x, QuantizedTensor):
            if x.bit_width != self.spec.input_bits:
                x = quantize(dequantize(x), self.spec.input_bits)
        else:
            x = quantize(np.asarray(x, dtype=np.float64), self.spec.input_bits)
        x = x.reshape(self.spec.in_channels, self.spec.in_height, self.spec.in_width)
        self.last_input = x
        self.job.start(x)

    def finish(self, x, acc, verify: bool = False) -> np.ndarray:
        """Post-process the accumulated integers into the next layer's real-valued input."""
        if self.spec is None:
            if isinstance(x, QuantizedTensor):
                x = dequantize(x)
            return epu_avgpool(np.asarray(x, dtype=np.float64), self.ld.window, self.ld.stride or self.ld.window)
        ints = self.job.output(acc)
        if acc.saturated:
            raise NumericError(f"accumulator saturated in layer {self.name!r}")
        if verify:
            ref = oracle.conv_int_oracle(self.last_input, self.job.weights, self.spec)
            mismatch = np.argwhere(np.asarray(ints != ref))
            if mismatch.size:
                idx = tuple(int(i) for i in mismatch[0])
                raise VerificationError(
                    f"layer {self.name!r} diverges from reference at {idx}: "
                    f"engine {ints[idx]} vs oracle {ref[idx]}"
                )
        den = full_scale(self.spec.input_bits) * full_scale(self.spec.weight_bits)
        real = np.array([int(v) / den for v in ints.reshape(-1)], dtype=np.float64).reshape(ints.shape)
        if self.ld.bn is not None:
            bn = self.ld.bn
            real = epu_batchnorm(real, bn.mean, bn.var, bn.gamma, bn.beta, bn.eps)
        return epu_activation(real, self.ld.activation)


class NetworkProgram:
    """A network bound to hardware and cost parameters, executable frame by frame."""

    def __init__(self, network: Network, hier: MemoryHierarchy | None = None, params: CostParams | None = None):
        self.network = network
        self.hier = hier or MemoryHierarchy()
        self.params = params or CostParams()
        self.stages = [LayerStage(ld, spec, self.hier, self.params) for ld, spec in network.resolve()]

    @property
    def n_frames(self) -> int:
        return sum(s.job.n_frames for s in self.stages)

    def cost(self) -> CostReport:
        total = CostReport()
        for s in self.stages:
            total = total + s.job.cost()
        return total


@dataclass
class NetworkResult:
    scores: np.ndarray
    report: CostReport
    frames: int
    checkpoints: int = 0
    layer_outputs: list = field(default_factory=list)


def run_network(model, x, hier: MemoryHierarchy | None = None, cost: CostParams | None = None,
                verify: bool = False, checkpoint_interval: int | None = None, keep_outputs: bool = False) -> NetworkResult:
    """Run one input through every layer without power interruptions."""
    program = model if isinstance(model, NetworkProgram) else NetworkProgram(model, hier, cost)
    k = checkpoint_interval or program.params.checkpoint_interval
    act = x
    frames = checkpoints = 0
    outputs = []
    for stage in program.stages:
        stage.prepare(act)
        acc = stage.job.new_accumulator(k)
        for f in range(stage.job.n_frames):
            stage.job.run_frame(f, acc)
            frames += 1
            if acc.frame_complete():
                acc.checkpoint()
                checkpoints += 1
        act = stage.finish(act, acc, verify=verify)
        if keep_outputs:
            outputs.append(act)
    return NetworkResult(np.asarray(act, dtype=np.float64).reshape(-1), program.cost(), frames, checkpoints, outputs)


class BitwiseCNN(ClassifierMixin, BaseEstimator):
    """Estimator front end: ``fit`` binds and checks the model, ``predict`` runs the simulator.

    Nothing is learned; weights come from ``network``.  ``X`` is a batch of
    ``(C, H, W)`` images with values in [0, 1].
    """

    def __init__(self, network=None, hierarchy=None, cost_params=None, verify=False):
        self.network = network
        self.hierarchy = hierarchy
        self.cost_params = cost_params
        self.verify = verify

    def fit(self, X=None, y=None):
        if self.network is None:
            raise ParameterError("BitwiseCNN needs a network")
        if X is not None:
            X = np.asarray(X)
            if X.shape[1:] != tuple(self.network.input_shape):
                raise StructuralError(f"inputs have shape {X.shape[1:]}, network expects {self.network.input_shape}")
        self.program_ = NetworkProgram(self.network, self.hierarchy, self.cost_params)
        self.classes_ = np.arange(self.network.n_classes) if y is None else np.unique(y)
        self.cost_report_ = self.program_.cost()
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "program_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == len(self.network.input_shape):
            X = X[None]
        scores = [run_network(self.program_, x, verify=self.verify).scores for x in X]
        return np.stack(scores)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "program_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
