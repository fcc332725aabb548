"""Functional and cost-model simulator of a bit-wise processing-in-memory CNN accelerator."""

from .accumulator import (
    AdaptiveShiftRegister,
    NvAccumulatorState,
    NvMode,
    asr_shift,
    cmp_popcount,
    compress_4_2,
    nvfa_accumulate,
    nvfa_checkpoint,
    nvfa_restore,
)
from .bitplane import BitPlaneSet, FixedPointQuantizer, QuantizedTensor, decompose, dequantize, quantize, recompose
from .costmodel import AccumulationMode, CostParams, CostReport, complexity_index, layer_cost, storage_footprint, throughput
from .engine import BitwiseCNN, Network, NetworkProgram, conv_bitwise, run_network
from .intermittency import ExecutionJournal, PowerTrace, progress_stats, run_with_trace
from .mapping import ConvLayerSpec, MemoryHierarchy, map_layer
from .oracle import conv_int_oracle, eq1_scalar_oracle, popcount_oracle
from .subarray import DeviceParams, SenseMode, SubArray, sense_margin_mc

__version__ = "0.1.0"
