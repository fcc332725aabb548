"""Latency, energy, storage and throughput accounting.

Timing is counted per mat.  Mats run concurrently, so a layer takes as long
as its busiest mat, and the phase breakdown reported is that mat's.  Energy
is summed over every micro-op on every mat.  Layers run back to back.

Per AND micro-op on a mat:

========== ================================================ ==========================
phase      cycles                                           energy (pJ)
========== ================================================ ==========================
and        1                                                e_and
write_back 1                                                e_write
cmp        tree depth (COMPRESSOR) or                       e_read + per-slot compress
           ceil(len / w) * w (SERIAL_BITCOUNT, w = 8)       or serial-count energy
shift      1                                                e_shift * slots
accumulate ceil(addend_bits * t_fa / t_cycle)               e_fa * addend_bits * slots
========== ================================================ ==========================

``addend_bits`` is the popcount width plus the largest shift (m + n - 2).
Each mat checkpoints its accumulators every ``checkpoint_interval`` frames
(one frame = one work unit) and once more when its last frame finishes.

Energies are order-of-magnitude placeholders; only ratios between
configurations are meaningful.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .accumulator import compressor_tree_depth
from .exceptions import NumericError, ParameterError
from .mapping import ConvLayerSpec, MappingPlan, count_bits

PHASES = ("and", "write_back", "cmp", "shift", "accumulate", "nv_checkpoint")


class AccumulationMode(str, enum.Enum):
    COMPRESSOR = "compressor"
    SERIAL_BITCOUNT = "serial"


@dataclass(frozen=True)
class CostParams:
    t_cycle: float = 1.0  # ns
    t_fa: float = 0.058  # ns
    e_and: float = 2.0
    e_write: float = 8.0
    e_read: float = 1.5
    e_compress: float = 0.05  # per slot per tree stage
    e_serial_count: float = 0.04  # per slot per counter cycle
    e_shift: float = 0.02
    e_fa: float = 0.01  # per bit
    e_nv_write: float = 0.3  # per bit
    accumulation_mode: AccumulationMode = AccumulationMode.COMPRESSOR
    serial_bitcount_width: int = 8
    checkpoint_interval: int = 20
    checkpoint_cycles: int = 4
    restore_cycles: int = 1
    accumulator_width: int = 32
    area: float = 1.0  # relative units for throughput normalisation

    def __post_init__(self):
        object.__setattr__(self, "accumulation_mode", AccumulationMode(self.accumulation_mode))
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not math.isfinite(v) or v < 0:
                    raise ParameterError(f"cost parameter {f.name} must be finite and non-negative")
        if self.t_cycle <= 0 or self.area <= 0:
            raise ParameterError("t_cycle and area must be positive")
        if self.serial_bitcount_width < 1 or self.checkpoint_interval < 1:
            raise ParameterError("serial_bitcount_width and checkpoint_interval must be >= 1")

    def replace(self, **changes) -> "CostParams":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return CostParams(**data)


def _zero_phases():
    return {p: 0 for p in PHASES}


@dataclass
class CostReport:
    cycles: int = 0
    latency_ns: float = 0.0
    energy_pj: float = 0.0
    breakdown_cycles: dict = field(default_factory=_zero_phases)
    breakdown_energy: dict = field(default_factory=_zero_phases)
    storage_bytes: int = 0
    frames: int = 0
    batch: int = 1
    layers: list = field(default_factory=list)

    @property
    def fps(self) -> float:
        return throughput(self, self.batch) if self.latency_ns > 0 else 0.0

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(
            cycles=self.cycles + other.cycles,
            latency_ns=self.latency_ns + other.latency_ns,
            energy_pj=self.energy_pj + other.energy_pj,
            breakdown_cycles={p: self.breakdown_cycles[p] + other.breakdown_cycles[p] for p in PHASES},
            breakdown_energy={p: self.breakdown_energy[p] + other.breakdown_energy[p] for p in PHASES},
            storage_bytes=self.storage_bytes + other.storage_bytes,
            frames=self.frames + other.frames,
            batch=max(self.batch, other.batch),
            layers=self.layers + other.layers,
        )

    def check(self) -> None:
        """Breakdown must add up to the totals and everything must be finite."""
        if sum(self.breakdown_cycles.values()) != self.cycles:
            raise NumericError("cycle breakdown does not sum to total")
        if not math.isclose(sum(self.breakdown_energy.values()), self.energy_pj, rel_tol=1e-9, abs_tol=1e-9):
            raise NumericError("energy breakdown does not sum to total")
        if not all(math.isfinite(x) for x in (self.latency_ns, self.energy_pj)):
            raise NumericError("non-finite cost")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fps"] = self.fps
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "cycles", "energy_pj"])
        for p in PHASES:
            w.writerow([p, self.breakdown_cycles[p], repr(self.breakdown_energy[p])])
        w.writerow(["total", self.cycles, repr(self.energy_pj)])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'phase':<14}{'cycles':>12}{'energy (pJ)':>16}"]
        for p in PHASES:
            lines.append(f"{p:<14}{self.breakdown_cycles[p]:>12}{self.breakdown_energy[p]:>16.3f}")
        lines.append(f"{'total':<14}{self.cycles:>12}{self.energy_pj:>16.3f}")
        lines.append(f"latency {self.latency_ns:.3f} ns, {self.fps:.3f} frames/s per area unit, "
                     f"storage {self.storage_bytes} B, {self.frames} frames")
        return "\n".join(lines)


def popcount_cycles(length: int, params: CostParams) -> int:
    if params.accumulation_mode is AccumulationMode.COMPRESSOR:
        return max(1, compressor_tree_depth(length))
    w = params.serial_bitcount_width
    return -(-int(length) // w) * w


def accumulate_cycles(addend_bits: int, params: CostParams) -> int:
    return max(1, math.ceil(addend_bits * params.t_fa / params.t_cycle - 1e-12))


def unit_cost(plan: MappingPlan, unit, params: CostParams):
    """Per-phase cycles and energy of one work unit (one frame)."""
    layer = plan.layer
    n_ops = unit.n_and_ops
    shift_span = layer.weight_bits + layer.input_bits - 2
    addend_bits = count_bits(unit.col_len) + shift_span
    cmp_cyc = popcount_cycles(unit.col_len, params)
    slots = unit.slots
    cycles = {
        "and": n_ops,
        "write_back": n_ops,
        "cmp": n_ops * cmp_cyc,
        "shift": n_ops,
        "accumulate": n_ops * accumulate_cycles(addend_bits, params),
        "nv_checkpoint": 0,
    }
    if params.accumulation_mode is AccumulationMode.COMPRESSOR:
        cmp_e = params.e_read + params.e_compress * slots * cmp_cyc
    else:
        cmp_e = params.e_read + params.e_serial_count * slots * cmp_cyc
    energy = {
        "and": n_ops * params.e_and,
        "write_back": n_ops * params.e_write,
        "cmp": n_ops * cmp_e,
        "shift": n_ops * params.e_shift * slots,
        "accumulate": n_ops * params.e_fa * addend_bits * slots,
        "nv_checkpoint": 0.0,
    }
    return cycles, energy


def checkpoint_energy(registers: int, params: CostParams, two_ff: bool = True) -> float:
    words = 2 if two_ff else 1
    return registers * words * params.accumulator_width * params.e_nv_write


def layer_cost(plan: MappingPlan, layer: ConvLayerSpec | None = None, params: CostParams | None = None) -> CostReport:
    params = params or CostParams()
    if layer is not None and plan.layer is not None and layer != plan.layer:
        raise ParameterError("plan was built for a different layer")
    report = CostReport(batch=plan.batch)
    if not plan.units:
        return report
    per_mat_cycles = {}
    for mat, units in plan.units_by_mat().items():
        mat_cyc = _zero_phases()
        for u in units:
            cyc, en = unit_cost(plan, u, params)
            for p in PHASES:
                mat_cyc[p] += cyc[p]
                report.breakdown_energy[p] += en[p]
        n_ckpt = -(-len(units) // params.checkpoint_interval)
        mat_cyc["nv_checkpoint"] = n_ckpt * params.checkpoint_cycles
        registers = sum(u.slots for u in units[: params.checkpoint_interval])
        report.breakdown_energy["nv_checkpoint"] += n_ckpt * checkpoint_energy(registers, params)
        per_mat_cycles[mat] = mat_cyc
    busiest = max(per_mat_cycles, key=lambda m: (sum(per_mat_cycles[m].values()), -m))
    report.breakdown_cycles = per_mat_cycles[busiest]
    report.cycles = sum(report.breakdown_cycles.values())
    report.latency_ns = report.cycles * params.t_cycle
    report.energy_pj = sum(report.breakdown_energy.values())
    report.storage_bytes = plan.operand_rows * plan.hierarchy.cols_per_mat // 8
    report.frames = len(plan.units)
    report.layers = [plan.layer.name if plan.layer is not None else ""]
    return report


def accumulation_cycles(report: CostReport) -> int:
    """Cycles spent in the accumulation phase (compress, shift, accumulate)."""
    return sum(report.breakdown_cycles[p] for p in ("cmp", "shift", "accumulate"))


def throughput(report: CostReport, batch: int = 1, area: float | None = None) -> float:
    """Frames per second per area unit for ``batch`` images finishing in ``report.latency_ns``."""
    if report.latency_ns <= 0:
        raise NumericError("throughput needs a positive latency")
    area = 1.0 if area is None else area
    if area <= 0:
        raise NumericError("area must be positive")
    return batch / (report.latency_ns * 1e-9) / area


def complexity_index(w_bits: int, i_bits: int, g_bits: int) -> tuple:
    """(inference, training) complexity: W*I and W*I + W*G."""
    for b in (w_bits, i_bits, g_bits):
        if int(b) < 1:
            raise ParameterError("bit widths must be >= 1")
    return w_bits * i_bits, w_bits * i_bits + w_bits * g_bits


# -- storage ---------------------------------------------------------------


@dataclass(frozen=True)
class StorageLayer:
    """Shape information the storage calculator needs about one layer."""

    name: str
    params: int  # weights + biases
    mapped_inputs: int  # window elements laid out in rows (positions * window length)
    outputs: int  # output feature-map elements


@dataclass
class StorageReport:
    weights_bytes: float
    activations_bytes: float
    assumptions: list
    per_layer_weight_bits: dict = field(default_factory=dict)

    @property
    def total_bytes(self) -> float:
        return self.weights_bytes + self.activations_bytes

    @property
    def total_mb(self) -> float:
        return self.total_bytes / 1e6

    def render(self) -> str:
        lines = [
            f"weights      {self.weights_bytes / 1e6:12.3f} MB",
            f"activations  {self.activations_bytes / 1e6:12.3f} MB",
            f"total        {self.total_mb:12.3f} MB",
            "assumptions:",
        ]
        lines += [f"  - {a}" for a in self.assumptions]
        return "\n".join(lines)


def storage_layers_from_specs(specs) -> list:
    return [
        StorageLayer(s.name, s.n_params + s.out_channels, s.n_positions * s.vector_len, s.out_channels * s.n_positions)
        for s in specs
    ]


def storage_footprint(layers, w_bits: int, i_bits: int, unquantized_first_last: bool = True, verbose: bool = False) -> StorageReport:
    """Weight and activation memory for a model at a W:I bit-width setting.

    Full precision means ``max(32, w_bits)`` bits.  Activations are the
    largest live pair over all layers: a layer's input windows as laid out in
    sub-array rows plus its output feature map.
    """
    layers = list(layers)
    if not layers:
        raise ParameterError("empty model")
    full = max(32, w_bits)
    full_i = max(32, i_bits)
    last = len(layers) - 1

    def is_fp(i):
        return unquantized_first_last and i in (0, last)

    weight_bits = {}
    total_w = 0
    for i, L in enumerate(layers):
        bits = full if is_fp(i) else w_bits
        weight_bits[L.name] = bits
        total_w += L.params * bits

    def in_bits(i):
        return full_i if is_fp(i) else i_bits

    live = 0
    for i, L in enumerate(layers):
        out_b = full_i if i == last else in_bits(i + 1)
        live = max(live, L.mapped_inputs * in_bits(i) + L.outputs * out_b)

    assumptions = [
        f"weights at {w_bits} bits, activations at {i_bits} bits",
        "biases are stored at their layer's weight precision",
        (f"first and last layers kept at full precision ({full} bit weights, {full_i} bit inputs)"
         if unquantized_first_last else "all layers quantized"),
        "activation memory = max over layers of (input windows as mapped to rows + output feature map)",
        "the network output is kept at full precision",
        "1 MB = 10^6 bytes",
    ]
    report = StorageReport(total_w / 8, live / 8, assumptions, weight_bits)
    if verbose:
        print(report.render())
    return report


def alexnet_layers() -> list:
    """Eight-layer ImageNet CNN (two-group AlexNet, ~61M parameters, 227x227 input)."""
    rows = [
        # name, out_c, in_c/groups, k, in_hw, out_hw
        ("conv1", 96, 3, 11, 227, 55),
        ("conv2", 256, 48, 5, 27, 27),
        ("conv3", 384, 256, 3, 13, 13),
        ("conv4", 384, 192, 3, 13, 13),
        ("conv5", 256, 192, 3, 13, 13),
        ("fc6", 4096, 256 * 6 * 6, 1, 1, 1),
        ("fc7", 4096, 4096, 1, 1, 1),
        ("fc8", 1000, 4096, 1, 1, 1),
    ]
    out = []
    for name, oc, ic, k, _in_hw, out_hw in rows:
        window = ic * k * k
        positions = out_hw * out_hw
        out.append(StorageLayer(name, oc * window + oc, positions * window, oc * positions))
    return out
