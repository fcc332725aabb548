"""Functional model of one SOT-MRAM computational sub-array.

Cells store 0 (parallel, low resistance) or 1 (anti-parallel, high
resistance).  Two rows of the same column can be activated together; their
parallel conductance is compared against one of three references so a single
sense amplifier yields AND, OR or (with the NOR path) XOR.  Functional
compute is noise-free; device variation is studied separately in
:func:`sense_margin_mc`.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BoundsError, InvalidOperandError, ParameterError

DEFAULT_ROWS = 256
DEFAULT_COLS = 512


class SenseMode(str, enum.Enum):
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    READ = "READ"


@dataclass(frozen=True)
class SenseConfig:
    mode: SenseMode = SenseMode.AND

    def __post_init__(self):
        object.__setattr__(self, "mode", SenseMode(self.mode))


@dataclass(frozen=True)
class DeviceParams:
    """Electrical configuration of a cell and its read path.

    Defaults are representative values, not extracted device data.
    Resistances in ohms, ``v_bias`` in volts; sense levels are read currents
    in microamps.
    """

    r_low: float = 3000.0
    r_high: float = 6000.0
    sigma_ra: float = 0.05
    sigma_tmr: float = 0.10
    r_access: float = 1000.0
    v_bias: float = 0.1

    def __post_init__(self):
        for name in ("r_low", "r_high", "sigma_ra", "sigma_tmr", "r_access", "v_bias"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"device parameter {name} must be finite, got {value!r}")
        if not 0 < self.r_low < self.r_high:
            raise ParameterError("require 0 < r_low < r_high")
        if self.sigma_ra < 0 or self.sigma_tmr < 0:
            raise ParameterError("sigmas must be non-negative")
        if self.r_access < 0 or self.v_bias <= 0:
            raise ParameterError("r_access must be >= 0 and v_bias > 0")

    def path_current(self, r_cell):
        return 1e6 * self.v_bias / (np.asarray(r_cell, dtype=np.float64) + self.r_access)

    def ideal_levels(self) -> dict:
        """Noise-free sense currents for every sensed state."""
        i_p = float(self.path_current(self.r_low))
        i_ap = float(self.path_current(self.r_high))
        return {"00": 2 * i_p, "01": i_p + i_ap, "11": 2 * i_ap, "P": i_p, "AP": i_ap}

    def references(self) -> dict:
        """Midpoint reference currents; a level below the reference senses as 1."""
        lv = self.ideal_levels()
        return {
            "OR": (lv["00"] + lv["01"]) / 2,
            "AND": (lv["01"] + lv["11"]) / 2,
            "M": (lv["P"] + lv["AP"]) / 2,
        }

    def reference_resistances(self) -> dict:
        """References expressed as equivalent path resistance (ohms)."""
        return {k: 1e6 * self.v_bias / v for k, v in self.references().items()}


class SubArray:
    """A rows x cols grid of binary cells."""

    def __init__(self, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS, params: DeviceParams | None = None):
        if rows < 1 or cols < 1:
            raise BoundsError("sub-array dimensions must be positive")
        self.rows = int(rows)
        self.cols = int(cols)
        self.params = params or DeviceParams()
        self.cells = np.zeros((self.rows, self.cols), dtype=np.uint8)
        lv = self.params.ideal_levels()
        self._two_cell_levels = np.array([lv["00"], lv["01"], lv["11"]])
        self._refs = self.params.references()
        self.n_writes = 0
        self.n_reads = 0
        self.n_computes = 0

    def _check_row(self, row):
        if not 0 <= row < self.rows:
            raise BoundsError(f"row {row} outside [0, {self.rows})")

    def write_row(self, row: int, bits) -> "SubArray":
        self._check_row(row)
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        if bits.size != self.cols:
            raise BoundsError(f"row write of width {bits.size}, sub-array has {self.cols} columns")
        if np.any(bits > 1):
            raise BoundsError("cells hold binary states only")
        self.cells[row] = bits
        self.n_writes += 1
        return self

    def read_row(self, row: int) -> np.ndarray:
        self._check_row(row)
        self.n_reads += 1
        return self.cells[row].copy()

    def compute_rows(self, row_a: int, row_b: int, cfg=SenseMode.AND) -> np.ndarray:
        """Activate two rows and sense every column against the mode's reference(s)."""
        mode = cfg.mode if isinstance(cfg, SenseConfig) else SenseMode(cfg)
        self._check_row(row_a)
        self._check_row(row_b)
        if row_a == row_b:
            raise InvalidOperandError("compute needs two distinct word lines")
        if mode is SenseMode.READ:
            raise InvalidOperandError("READ is a single-row operation; use read_row")
        n_high = self.cells[row_a] + self.cells[row_b]
        level = self._two_cell_levels[n_high]
        self.n_computes += 1
        and_out = level < self._refs["AND"]
        if mode is SenseMode.AND:
            return and_out.astype(np.uint8)
        or_out = level < self._refs["OR"]
        if mode is SenseMode.OR:
            return or_out.astype(np.uint8)
        # XOR = NOR(AND, NOR(a, b)) from the two simultaneously sensed references
        return (~(and_out | ~or_out)).astype(np.uint8)


# -- Monte-Carlo sense margin ------------------------------------------------

TWO_CELL_STATES = ("00", "01", "11")
ONE_CELL_STATES = ("P", "AP")


@dataclass(frozen=True)
class MarginReport:
    trials: int
    seed: int
    params: DeviceParams
    state_mean: dict = field(default_factory=dict)
    state_std: dict = field(default_factory=dict)
    state_misclass: dict = field(default_factory=dict)
    mode_misclass: dict = field(default_factory=dict)

    @property
    def misclassification_rate(self) -> float:
        """Worst mode's failure rate."""
        return max(self.mode_misclass.values())

    def rows(self):
        for state in TWO_CELL_STATES + ONE_CELL_STATES:
            yield state, self.state_mean[state], self.state_std[state], self.state_misclass[state]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state", "mean", "std", "misclass_rate"])
        for state, mean, std, rate in self.rows():
            writer.writerow([state, repr(mean), repr(std), repr(rate)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def sample_cell_resistances(params: DeviceParams, z_ra, z_tmr):
    """Per-cell (R_P, R_AP) from standard-normal draws.

    R_P  = r_low * (1 + sigma_ra * z_ra)
    R_AP = R_P + (r_high - r_low) * (1 + sigma_tmr * z_tmr)
    Both are floored at 1 ohm so extreme tails stay physical.
    """
    r_p = np.maximum(params.r_low * (1.0 + params.sigma_ra * z_ra), 1.0)
    r_ap = np.maximum(r_p + (params.r_high - params.r_low) * (1.0 + params.sigma_tmr * z_tmr), 1.0)
    return r_p, r_ap


def sense_margin_mc(params: DeviceParams, trials: int = 100_000, rng_seed: int = 0) -> MarginReport:
    """Sample two-cell sense currents under RA/TMR variation and score the references.

    References stay at their ideal midpoints; only the cells vary.  The
    random draws depend on ``trials`` and ``rng_seed`` alone, so sweeping a
    sigma reuses the same underlying samples.
    """
    if not isinstance(params, DeviceParams):
        raise ParameterError("params must be a DeviceParams")
    if int(trials) < 1:
        raise ParameterError("trials must be >= 1")
    trials = int(trials)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((4, trials))
    rp_a, rap_a = sample_cell_resistances(params, z[0], z[1])
    rp_b, rap_b = sample_cell_resistances(params, z[2], z[3])
    cur = params.path_current
    levels = {
        "00": cur(rp_a) + cur(rp_b),
        "01": cur(rp_a) + cur(rap_b),
        "11": cur(rap_a) + cur(rap_b),
        "P": cur(rp_a),
        "AP": cur(rap_a),
    }
    refs = params.references()
    truth = {"00": (0, 0, 0), "01": (0, 1, 1), "11": (1, 1, 0)}  # (AND, OR, XOR)

    mode_fail = {m: 0 for m in ("AND", "OR", "XOR", "READ")}
    state_misclass = {}
    for state in TWO_CELL_STATES:
        lv = levels[state]
        and_out = lv < refs["AND"]
        or_out = lv < refs["OR"]
        xor_out = ~(and_out | ~or_out)
        t_and, t_or, t_xor = truth[state]
        f_and = and_out != bool(t_and)
        f_or = or_out != bool(t_or)
        f_xor = xor_out != bool(t_xor)
        mode_fail["AND"] += int(f_and.sum())
        mode_fail["OR"] += int(f_or.sum())
        mode_fail["XOR"] += int(f_xor.sum())
        state_misclass[state] = float((f_and | f_or | f_xor).mean())
    for state, expected in (("P", False), ("AP", True)):
        fail = (levels[state] < refs["M"]) != expected
        mode_fail["READ"] += int(fail.sum())
        state_misclass[state] = float(fail.mean())

    mode_misclass = {
        "AND": mode_fail["AND"] / (3 * trials),
        "OR": mode_fail["OR"] / (3 * trials),
        "XOR": mode_fail["XOR"] / (3 * trials),
        "READ": mode_fail["READ"] / (2 * trials),
    }
    return MarginReport(
        trials=trials,
        seed=int(rng_seed),
        params=params,
        state_mean={s: float(v.mean()) for s, v in levels.items()},
        state_std={s: float(v.std()) for s, v in levels.items()},
        state_misclass=state_misclass,
        mode_misclass=mode_misclass,
    )
