"""Memory organization and layer-to-sub-array mapping.

A layer is cut into work units.  Each unit owns one output channel, a group
of output positions and one column tile of the flattened kernel window.  Its
weight bit planes sit in ``n`` consecutive rows of a mat, the matching input
window planes in the ``m`` rows that follow, and every AND pairs one row of
each.  Short windows are packed side by side into the 512 columns (one
"slot" per output position); windows longer than a row are split into
column tiles whose partial counts meet again in the accumulator.

Units are dealt round-robin over all mats of the hierarchy, and operand
rows inside a mat are handed out lowest-first.  The first row left free in a
mat becomes its write-back (scratch) row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import MappingError, ParameterError


@dataclass(frozen=True)
class MemoryHierarchy:
    rows_per_mat: int = 256
    cols_per_mat: int = 512
    mats_per_bank: int = 4  # 2 x 2
    banks_per_group: int = 64  # 8 x 8
    groups: int = 16

    def __post_init__(self):
        for name in ("rows_per_mat", "cols_per_mat", "mats_per_bank", "banks_per_group", "groups"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")

    @property
    def n_mats(self) -> int:
        return self.mats_per_bank * self.banks_per_group * self.groups

    @property
    def capacity_bits(self) -> int:
        return self.rows_per_mat * self.cols_per_mat * self.n_mats

    def coordinates(self, mat: int) -> tuple:
        """Flat mat index -> (group, bank, mat-in-bank)."""
        group, rest = divmod(mat, self.mats_per_bank * self.banks_per_group)
        bank, local = divmod(rest, self.mats_per_bank)
        return group, bank, local


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape and precision of one convolution (FC layers use a 1x1 kernel on a flattened input)."""

    in_channels: int
    out_channels: int
    kernel_h: int = 1
    kernel_w: int = 1
    in_height: int = 1
    in_width: int = 1
    stride: int = 1
    padding: int = 0
    weight_bits: int = 1
    input_bits: int = 1
    quantize: bool = True
    name: str = ""

    def __post_init__(self):
        for attr in ("in_channels", "out_channels", "kernel_h", "kernel_w", "in_height", "in_width", "stride"):
            if int(getattr(self, attr)) < 1:
                raise ParameterError(f"{attr} must be >= 1")
        if self.padding < 0:
            raise ParameterError("padding must be >= 0")
        if not (1 <= self.weight_bits <= 32 and 1 <= self.input_bits <= 32):
            raise ParameterError("bit widths must be in [1, 32]")
        if self.out_height < 1 or self.out_width < 1:
            raise ParameterError(f"layer {self.name!r}: kernel larger than padded input")

    @property
    def padding_mode(self) -> str:
        return "zero" if self.padding else "none"

    @property
    def out_height(self) -> int:
        return (self.in_height + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.in_width + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def vector_len(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def n_positions(self) -> int:
        return self.out_height * self.out_width

    @property
    def n_params(self) -> int:
        return self.out_channels * self.vector_len


@dataclass(frozen=True)
class WorkUnit:
    index: int
    image: int
    out_channel: int
    positions: np.ndarray  # flat output positions, one per slot
    col_start: int  # offset into the flattened window
    col_len: int
    mat: int
    weight_rows: tuple
    input_rows: tuple

    @property
    def slots(self) -> int:
        return len(self.positions)

    @property
    def n_and_ops(self) -> int:
        return len(self.weight_rows) * len(self.input_rows)


@dataclass
class MappingPlan:
    layer: ConvLayerSpec | None
    hierarchy: MemoryHierarchy
    units: list = field(default_factory=list)
    scratch_rows: dict = field(default_factory=dict)  # mat -> write-back row
    slots_per_row: int = 1
    batch: int = 1

    @property
    def operand_rows(self) -> int:
        return sum(len(u.weight_rows) + len(u.input_rows) for u in self.units)

    @property
    def rows_used(self) -> int:
        return self.operand_rows

    @property
    def mats_used(self) -> int:
        return len(self.scratch_rows)

    def units_by_mat(self) -> dict:
        out = {}
        for u in self.units:
            out.setdefault(u.mat, []).append(u)
        return out

    def location(self, unit: WorkUnit, row: int) -> tuple:
        """(group, bank, mat, row) coordinates of a row owned by ``unit``."""
        return self.hierarchy.coordinates(unit.mat) + (row,)

    def micro_ops(self):
        """AND micro-ops in issue order: (unit, n, m, weight_row, input_row)."""
        for u in self.units:
            for n, wr in enumerate(u.weight_rows):
                for m, ir in enumerate(u.input_rows):
                    yield u, n, m, wr, ir

    def signature(self) -> tuple:
        return tuple(
            (u.out_channel, u.image, tuple(u.positions.tolist()), u.col_start, u.col_len, u.mat, u.weight_rows, u.input_rows)
            for u in self.units
        )


def map_layer(layer: ConvLayerSpec, hier: MemoryHierarchy | None = None, batch: int = 1) -> MappingPlan:
    hier = hier or MemoryHierarchy()
    if batch < 1:
        raise ParameterError("batch must be >= 1")
    cols = hier.cols_per_mat
    vlen = layer.vector_len
    if vlen <= cols:
        slots = cols // vlen
        tiles = [(0, vlen)]
    else:
        slots = 1
        tiles = [(s, min(cols, vlen - s)) for s in range(0, vlen, cols)]
    n_bits, m_bits = layer.weight_bits, layer.input_bits
    rows_per_unit = n_bits + m_bits
    n_scratch = 1
    if rows_per_unit + n_scratch > hier.rows_per_mat:
        raise MappingError(
            f"layer {layer.name!r} needs {rows_per_unit + n_scratch} rows per unit, mats have {hier.rows_per_mat}",
            rows_per_unit + n_scratch,
            hier.rows_per_mat,
        )
    positions = np.arange(layer.n_positions)
    groups = [positions[i:i + slots] for i in range(0, len(positions), slots)]

    next_row = {}
    units = []
    idx = 0
    for image in range(batch):
        for oc in range(layer.out_channels):
            for grp in groups:
                for col_start, col_len in tiles:
                    mat = idx % hier.n_mats
                    base = next_row.get(mat, 0)
                    next_row[mat] = base + rows_per_unit
                    units.append(WorkUnit(
                        index=idx,
                        image=image,
                        out_channel=oc,
                        positions=grp,
                        col_start=col_start,
                        col_len=col_len,
                        mat=mat,
                        weight_rows=tuple(range(base, base + n_bits)),
                        input_rows=tuple(range(base + n_bits, base + rows_per_unit)),
                    ))
                    idx += 1
    busiest = max(next_row.values(), default=0)
    if busiest + n_scratch > hier.rows_per_mat:
        total_required = sum(next_row.values()) + n_scratch * len(next_row)
        raise MappingError(
            f"layer {layer.name!r} exceeds capacity: busiest mat needs {busiest + n_scratch} rows "
            f"(of {hier.rows_per_mat}); {total_required} rows required in total, "
            f"{hier.rows_per_mat * hier.n_mats} available",
            total_required,
            hier.rows_per_mat * hier.n_mats,
        )
    return MappingPlan(
        layer=layer,
        hierarchy=hier,
        units=units,
        scratch_rows={mat: rows for mat, rows in sorted(next_row.items())},
        slots_per_row=slots,
        batch=batch,
    )


def count_bits(length: int) -> int:
    """Width of a popcount result for ``length`` input bits."""
    return max(1, int(length).bit_length())


def expected_rows(layer: ConvLayerSpec, cols: int = 512) -> int:
    """(n + m) * ceil(vector_len / cols) rows for a single-position, single-channel layer."""
    return (layer.weight_bits + layer.input_bits) * math.ceil(layer.vector_len / cols)
