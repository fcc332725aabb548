"""Accumulation datapath: 4:2 compressor trees, adaptive shift register, NV full adder.

All bit-level helpers accept Python ints or numpy integer arrays, so the
same code evaluates a single compressor or a whole row of them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ColdStartError, DomainError, ParameterError


def compress_4_2(x1, x2, x3, x4, cin):
    """One 4:2 compressor.  Returns ``(sum, carry, cout)``.

    x1 + x2 + x3 + x4 + cin == sum + 2 * (carry + cout); ``cout`` does not
    depend on ``cin`` so a row of compressors chains without rippling.
    """
    p = x1 ^ x2
    s4 = p ^ x3 ^ x4
    total = s4 ^ cin
    carry = (s4 & cin) | ((s4 ^ 1) & x4)
    cout = (p & x3) | ((p ^ 1) & x1)
    return total, carry, cout


def full_add(a, b, c):
    s = a ^ b ^ c
    return s, (a & b) | (a & c) | (b & c)


def ripple_add(a_bits, b_bits):
    """Add two LSB-first bit lists (each entry an int or array) with a ripple-carry chain."""
    width = max(len(a_bits), len(b_bits))
    zero = 0 * (a_bits[0] if a_bits else b_bits[0])
    carry = zero
    out = []
    for i in range(width):
        a = a_bits[i] if i < len(a_bits) else zero
        b = b_bits[i] if i < len(b_bits) else zero
        s, carry = full_add(a, b, carry)
        out.append(s)
    out.append(carry)
    return out


class PopcountResult(NamedTuple):
    count: object
    stages: int
    adder_bits: int


def _as_batch(v):
    arr = np.asarray(v, dtype=np.uint8)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise DomainError("popcount input must be a bit vector or a 2-D batch of them")
    return arr, False


def cmp_popcount(v) -> PopcountResult:
    """Count set bits through a carry-save tree of 4:2 compressors.

    ``v`` is a bit vector or a ``(batch, length)`` array of them.  Columns of
    equal weight are reduced stage by stage until no column is taller than
    two; the remaining pair of rows is resolved by a ripple adder.
    ``stages`` is the tree depth, ``adder_bits`` the width of that final adder.
    """
    bits, single = _as_batch(v)
    if bits.shape[1] < 1:
        raise DomainError("popcount of an empty vector")
    if np.any(bits > 1):
        raise DomainError("popcount input must be binary")
    batch, length = bits.shape
    pad = (-length) % 4
    col0 = np.concatenate([bits.T, np.zeros((pad, batch), np.uint8)]) if pad else bits.T.copy()
    columns = [col0]
    stages = 0
    empty = np.zeros((0, batch), np.uint8)

    while max(c.shape[0] for c in columns) > 2:
        stages += 1
        nxt = [[] for _ in range(len(columns) + 2)]
        incoming = empty
        for w, col in enumerate(columns):
            h = col.shape[0]
            # a short column still gets a (zero-padded) compressor when the carry and
            # cout arriving from below would push it past two rows
            if h < 3 and not (h >= 1 and h + 2 * incoming.shape[0] > 2):
                nxt[w].extend([col, incoming])
                incoming = empty
                continue
            groups, rest = divmod(h, 4)
            if rest == 3 or groups == 0:
                col = np.concatenate([col, np.zeros((4 * (groups + 1) - h, batch), np.uint8)])
                groups, rest = groups + 1, 0
            x = col[: 4 * groups].reshape(groups, 4, batch)
            used = min(groups, incoming.shape[0])
            cin = np.zeros((groups, batch), np.uint8)
            cin[:used] = incoming[:used]
            s, carry, cout = compress_4_2(x[:, 0], x[:, 1], x[:, 2], x[:, 3], cin)
            nxt[w].extend([s, col[4 * groups:], incoming[used:]])
            nxt[w + 1].append(carry)
            incoming = cout
        nxt[len(columns)].append(incoming)
        columns = [np.concatenate(parts) if parts else empty for parts in nxt]
        while len(columns) > 1 and columns[-1].shape[0] == 0:
            columns.pop()

    rows = []
    for r in range(2):
        rows.append([c[r].astype(np.int64) if c.shape[0] > r else np.zeros(batch, np.int64) for c in columns])
    total_bits = ripple_add(rows[0], rows[1])
    count = np.zeros(batch, np.int64)
    for i, b in enumerate(total_bits):
        count += b << i
    return PopcountResult(int(count[0]) if single else count, stages, len(columns))


def compressor_tree_depth(length: int) -> int:
    """Stages :func:`cmp_popcount` needs for a vector of ``length`` bits."""
    return cmp_popcount(np.zeros(max(int(length), 1), np.uint8)).stages


def serial_bitcount(v, width: int = 8) -> PopcountResult:
    """Baseline counter: one bit per cycle, processed in ``width``-bit chunks."""
    bits, single = _as_batch(v)
    if bits.shape[1] < 1:
        raise DomainError("popcount of an empty vector")
    counter = np.zeros(bits.shape[0], np.int64)
    for i in range(bits.shape[1]):
        counter += bits[:, i]
    cycles = -(-bits.shape[1] // width) * width
    return PopcountResult(int(counter[0]) if single else counter, cycles, 0)


# -- adaptive shift register ----------------------------------------------------


class AdaptiveShiftRegister:
    """MUX-selected left shift by 0..max_shift into ``input_width + max_shift`` flip-flops."""

    def __init__(self, input_width: int, max_shift: int):
        if input_width < 1 or max_shift < 0:
            raise ParameterError("input_width must be >= 1 and max_shift >= 0")
        self.input_width = int(input_width)
        self.max_shift = int(max_shift)

    @property
    def n_flipflops(self) -> int:
        return self.input_width + self.max_shift

    def shift(self, bits, shift: int):
        """``bits`` is MSB first: a ``"1001"`` string or an array ``(..., input_width)``."""
        if not 0 <= shift <= self.max_shift:
            raise DomainError(f"shift {shift} outside [0, {self.max_shift}]")
        if isinstance(bits, str):
            if len(bits) != self.input_width or set(bits) - {"0", "1"}:
                raise DomainError(f"expected {self.input_width} binary digits, got {bits!r}")
            return "0" * (self.max_shift - shift) + bits + "0" * shift
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.shape[-1] != self.input_width:
            raise DomainError(f"expected width {self.input_width}, got {arr.shape[-1]}")
        out = np.zeros(arr.shape[:-1] + (self.n_flipflops,), np.uint8)
        lo = self.max_shift - shift
        out[..., lo:lo + self.input_width] = arr
        return out


def asr_shift(value, shift: int, max_shift: int):
    width = len(value) if isinstance(value, str) else np.asarray(value).shape[-1]
    return AdaptiveShiftRegister(width, max_shift).shift(value, shift)


def int_to_bits(x, width: int) -> np.ndarray:
    """MSB-first bit array of shape ``x.shape + (width,)``."""
    x = np.asarray(x, dtype=np.int64)
    pos = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((x[..., None] >> pos) & 1).astype(np.uint8)


def bits_to_int(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    width = bits.shape[-1]
    pos = np.arange(width - 1, -1, -1, dtype=np.int64)
    return (bits << pos).sum(axis=-1)


# -- non-volatile full adder ----------------------------------------------------


class NvMode(str, enum.Enum):
    TWO_FF = "two_ff"
    ONE_FF = "one_ff"


@dataclass
class _NvSlot:
    sum: np.ndarray
    carry: np.ndarray
    tag: object = None


@dataclass
class NvAccumulatorState:
    """Carry-save accumulator register file with non-volatile checkpoint slots.

    The running value of register ``i`` is ``volatile_sum[i] + volatile_carry[i]``.
    Checkpoints go to the inactive of two NV slots and only become visible when
    ``active_slot`` flips, so an interrupted checkpoint leaves the previous
    one intact.  ``tag`` is control state (e.g. a frame cursor) saved with
    every checkpoint in both modes.
    """

    size: int = 1
    width: int = 32
    checkpoint_interval: int = 20
    nv_mode: NvMode = NvMode.TWO_FF
    volatile_sum: np.ndarray = None
    volatile_carry: np.ndarray = None
    frames_since_checkpoint: int = 0
    saturated: bool = False
    cold_start: bool = False
    tag: object = None
    slots: list = field(default_factory=lambda: [None, None])
    active_slot: int | None = None
    pending_slot: int | None = None

    def __post_init__(self):
        if not 1 <= self.width <= 256:
            raise ParameterError("accumulator width must be in [1, 256]")
        if self.checkpoint_interval < 1:
            raise ParameterError("checkpoint interval must be >= 1")
        self.nv_mode = NvMode(self.nv_mode)
        if self.volatile_sum is None:
            self.volatile_sum = np.zeros(self.size, self.dtype)
        if self.volatile_carry is None:
            self.volatile_carry = np.zeros(self.size, self.dtype)

    @property
    def dtype(self):
        # registers wider than int64 can hold fall back to Python ints
        return np.int64 if self.width <= 62 else object

    @property
    def max_value(self) -> int:
        return (1 << self.width) - 1

    @property
    def value(self) -> np.ndarray:
        """Carry-propagated register contents."""
        return self.volatile_sum + self.volatile_carry

    @property
    def has_checkpoint(self) -> bool:
        return self.active_slot is not None

    @property
    def nv_sum(self):
        return None if self.active_slot is None else self.slots[self.active_slot].sum

    @property
    def nv_carry(self):
        return None if self.active_slot is None else self.slots[self.active_slot].carry

    @property
    def nv_tag(self):
        return None if self.active_slot is None else self.slots[self.active_slot].tag

    def accumulate(self, addend, index=None) -> "NvAccumulatorState":
        a = np.asarray(addend, dtype=self.dtype)
        if np.any(a < 0):
            raise DomainError("addends are unsigned")
        sel = slice(None) if index is None else index
        s = self.volatile_sum[sel]
        c = self.volatile_carry[sel]
        new_s = s ^ c ^ a
        new_c = ((s & c) | (s & a) | (c & a)) << 1
        over = (new_s + new_c) > self.max_value
        if np.any(over):
            self.saturated = True
            new_s = np.where(over, self.max_value, new_s)
            new_c = np.where(over, 0, new_c)
        self.volatile_sum[sel] = new_s
        self.volatile_carry[sel] = new_c
        return self

    def frame_complete(self) -> bool:
        """Count a finished frame; True once a checkpoint is due."""
        self.frames_since_checkpoint += 1
        return self.frames_since_checkpoint >= self.checkpoint_interval

    def begin_checkpoint(self) -> None:
        """Phase one: copy volatile state into the shadow slot."""
        target = 0 if self.active_slot in (None, 1) else 1
        if self.nv_mode is NvMode.TWO_FF:
            slot = _NvSlot(self.volatile_sum.copy(), self.volatile_carry.copy(), self.tag)
        else:
            # one NV flip-flop per adder: only the carry word survives
            slot = _NvSlot(None, self.volatile_carry.copy(), self.tag)
        self.slots[target] = slot
        self.pending_slot = target

    def commit_checkpoint(self) -> None:
        """Phase two: flip the validity flag to the shadow slot."""
        if self.pending_slot is None:
            raise ColdStartError("commit without a pending checkpoint")
        self.active_slot = self.pending_slot
        self.pending_slot = None
        self.frames_since_checkpoint = 0

    def checkpoint(self) -> "NvAccumulatorState":
        self.begin_checkpoint()
        self.commit_checkpoint()
        return self

    def power_loss(self) -> "NvAccumulatorState":
        """Drop everything volatile, including any half-written shadow slot."""
        self.volatile_sum = np.zeros_like(self.volatile_sum)
        self.volatile_carry = np.zeros_like(self.volatile_carry)
        self.pending_slot = None
        self.tag = None
        return self

    def restore(self) -> "NvAccumulatorState":
        if self.active_slot is None:
            self.volatile_sum = np.zeros_like(self.volatile_sum)
            self.volatile_carry = np.zeros_like(self.volatile_carry)
            self.frames_since_checkpoint = 0
            self.cold_start = True
            raise ColdStartError("no valid checkpoint; accumulator reset to zero")
        slot = self.slots[self.active_slot]
        if self.nv_mode is NvMode.TWO_FF:
            self.volatile_sum = slot.sum.copy()
            self.volatile_carry = slot.carry.copy()
        else:
            # the single stored word stands in for both sum and carry
            self.volatile_sum = slot.carry.copy()
            self.volatile_carry = slot.carry.copy()
        self.tag = slot.tag
        self.pending_slot = None
        self.frames_since_checkpoint = 0
        return self


def nvfa_accumulate(state: NvAccumulatorState, addend, index=None) -> NvAccumulatorState:
    return state.accumulate(addend, index)


def nvfa_checkpoint(state: NvAccumulatorState) -> NvAccumulatorState:
    return state.checkpoint()


def nvfa_restore(state: NvAccumulatorState) -> NvAccumulatorState:
    return state.restore()
